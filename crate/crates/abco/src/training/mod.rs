//! Inverse-dynamics and policy training, the iterated ABCO loop and the
//! AER / Performance metrics.

mod fit;
mod rollout;
pub mod toy;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    compose_training_set, sample_post, sample_pre, sample_whole, ActionDistribution, Interaction,
    InteractionSet, Trajectory, WinRate,
};
use crate::envs::EnvId;
use crate::error::{Error, Result};
use crate::experts;
use crate::nn::{build_net, NetOptions, Network, Role, Standardizer, VECTOR_HIDDEN};
use crate::seeds::{self, stream};

pub use fit::{accuracy, predict, FitConfig, Learner};
pub use rollout::{
    evaluate, evaluate_aer, performance, random_aer, rollout_threads, run_episode, run_episodes,
    run_policy_episodes, Actor, Episode, Rollouts,
};

/// How the IDM training set is rebuilt after each rollout phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// BCO: retrain on the latest post-demonstrations only.
    None,
    /// Win-weighted pre/post mix from successful runs.
    Partial,
    /// Every post-demonstration plus the complementary pre-sample.
    Whole,
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingMode::None => "none",
            SamplingMode::Partial => "partial",
            SamplingMode::Whole => "whole",
        })
    }
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SamplingMode::None),
            "partial" => Ok(SamplingMode::Partial),
            "whole" => Ok(SamplingMode::Whole),
            _ => Err(Error::Config(format!(
                "unknown sampling mode '{s}' (expected none, partial or whole)"
            ))),
        }
    }
}

/// Where policy labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// Actions inferred by the IDM (imitation from observation).
    Idm,
    /// The expert's recorded actions (behavioral cloning baseline).
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvId,
    pub alpha: usize,
    pub attention: bool,
    pub sampling: SamplingMode,
    pub labels: LabelSource,
    pub seed: u64,
    pub n_pre: usize,
    pub n_demos: usize,
    /// Policy rollouts per iteration, |E|.
    pub rollouts: usize,
    pub eval_episodes: usize,
    pub hidden: usize,
    /// Channels per attention location; must divide `hidden`.
    pub attention_channels: usize,
    pub dropout: f64,
    /// Standardize inputs with statistics of the pre-demonstration states.
    pub standardize: bool,
    pub idm_fit: FitConfig,
    pub policy_fit: FitConfig,
}

/// Hidden width used for maze networks.
pub const MAZE_HIDDEN: usize = 64;
/// Maze attention reads the hidden layer as 16 locations of 4 channels.
pub const MAZE_ATTENTION_CHANNELS: usize = 4;
/// Maze policies must generalize to unseen layouts, which takes far more
/// demonstrations than the control tasks.
pub const MAZE_DEMOS: usize = 8000;

impl RunConfig {
    pub fn for_env(env: EnvId) -> Self {
        let (n_pre, hidden, attention_channels) = match env {
            EnvId::CartPole | EnvId::MountainCar => (10_000, VECTOR_HIDDEN, 1),
            EnvId::Acrobot => (50_000, VECTOR_HIDDEN, 1),
            EnvId::Maze(_) => (30_000, MAZE_HIDDEN, MAZE_ATTENTION_CHANNELS),
        };
        // Maze IDM labels are easy to learn and the policy learner carries
        // over between iterations, so mazes train fewer epochs per iteration.
        let (n_demos, idm_epochs, policy_epochs) = if env.is_maze() {
            (MAZE_DEMOS, 5, 10)
        } else {
            (100, 20, 20)
        };
        Self {
            env,
            alpha: 5,
            attention: true,
            sampling: SamplingMode::Partial,
            labels: LabelSource::Idm,
            seed: 0,
            n_pre,
            n_demos,
            rollouts: 100,
            eval_episodes: 100,
            hidden,
            attention_channels,
            dropout: 0.0,
            standardize: !env.is_maze(),
            idm_fit: FitConfig {
                epochs: idm_epochs,
                ..FitConfig::default()
            },
            policy_fit: FitConfig {
                epochs: policy_epochs,
                ..FitConfig::default()
            },
        }
    }

    /// BCO(α): no attention, no sampling.
    pub fn bco(env: EnvId) -> Self {
        Self {
            attention: false,
            sampling: SamplingMode::None,
            ..Self::for_env(env)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_pre", self.n_pre),
            ("n_demos", self.n_demos),
            ("rollouts", self.rollouts),
            ("eval_episodes", self.eval_episodes),
            ("hidden", self.hidden),
            ("idm batch_size", self.idm_fit.batch_size),
            ("policy batch_size", self.policy_fit.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn net_options(&self) -> NetOptions {
        NetOptions {
            hidden: self.hidden,
            attention: self.attention,
            dropout: self.dropout,
            attention_channels: self.attention_channels,
        }
    }

    /// Fresh IDM and policy learners, initialized from the seed.
    pub fn init_learners(&self, pre: &InteractionSet) -> Result<(Learner, Learner)> {
        let (dim, k) = (self.env.observation_dim(), self.env.action_count());
        let mut idm = Network::new(
            build_net(Role::Idm, dim, k, self.net_options())?,
            &mut seeds::rng(self.seed, stream::IDM_INIT),
        )?;
        let mut policy = Network::new(
            build_net(Role::Policy, dim, k, self.net_options())?,
            &mut seeds::rng(self.seed, stream::POLICY_INIT),
        )?;
        if self.standardize {
            let st = Standardizer::fit(pre.interactions.iter().map(|i| i.s.as_slice()));
            idm.set_standardizer(st.as_ref().map(|s| s.tiled(2)))?;
            policy.set_standardizer(st)?;
        }
        Ok((
            Learner::new(idm, self.idm_fit.adam),
            Learner::new(policy, self.policy_fit.adam),
        ))
    }
}

/// Concatenated `(s_t, s_{t+1})` IDM input.
pub fn idm_input(s: &[f64], s_next: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(s.len() + s_next.len());
    v.extend_from_slice(s);
    v.extend_from_slice(s_next);
    v
}

/// Result of one IDM fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdmFit {
    pub validation_accuracy: f64,
    /// Every training label was the same action.
    pub degenerate: bool,
}

/// Whether run `run_id` falls in the 10% validation share.
pub fn is_validation_run(split_seed: u64, run_id: usize) -> bool {
    seeds::derive(split_seed, stream::SPLIT, run_id as u64).is_multiple_of(10)
}

/// Fits the IDM on 90% of the runs and reports accuracy on the other 10%.
/// Falls back to training accuracy when a split side is empty.
pub fn train_idm(
    idm: &mut Learner,
    data: &[Interaction],
    cfg: &FitConfig,
    split_seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<IdmFit> {
    if data.is_empty() {
        return Err(Error::contract("IDM training set is empty"));
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for it in data {
        let row = (idm_input(&it.s, &it.s_next), it.action);
        if is_validation_run(split_seed, it.run_id) {
            val.push(row);
        } else {
            train.push(row);
        }
    }
    if train.is_empty() {
        std::mem::swap(&mut train, &mut val);
    }
    let (x, y): (Vec<_>, Vec<_>) = train.into_iter().unzip();
    let degenerate = y.iter().all(|&a| a == y[0]);
    idm.fit(&x, &y, cfg, rng)?;
    let validation_accuracy = if val.is_empty() {
        accuracy(&idm.net, &x, &y)?
    } else {
        let (vx, vy): (Vec<_>, Vec<_>) = val.into_iter().unzip();
        accuracy(&idm.net, &vx, &vy)?
    };
    Ok(IdmFit {
        validation_accuracy,
        degenerate,
    })
}

/// IDM labels `â` for every consecutive state pair of every demonstration.
pub fn predict_expert_actions(idm: &Network, demos: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<usize>>> {
    demos
        .iter()
        .map(|states| {
            let rows: Vec<Vec<f64>> = states.windows(2).map(|w| idm_input(&w[0], &w[1])).collect();
            if rows.is_empty() {
                Ok(Vec::new())
            } else {
                predict(idm, &rows)
            }
        })
        .collect()
}

/// Behavioral cloning on `(s_t, â_t)` pairs.
pub fn train_policy(
    policy: &mut Learner,
    demos: &[Vec<Vec<f64>>],
    labels: &[Vec<usize>],
    cfg: &FitConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (states, acts) in demos.iter().zip(labels) {
        if acts.len() + 1 != states.len() {
            return Err(Error::Dimension {
                op: "train_policy",
                left: vec![states.len()],
                right: vec![acts.len()],
            });
        }
        x.extend(states[..acts.len()].iter().cloned());
        y.extend_from_slice(acts);
    }
    policy.fit(&x, &y, cfg, rng)
}

/// Expert and random-policy AER on the evaluation episodes, the endpoints
/// of the Performance scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub expert_aer: f64,
    pub random_aer: f64,
}

impl Baseline {
    pub fn measure(env: EnvId, episodes: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            expert_aer: experts::expert_aer(env, episodes, seed)?.0,
            random_aer: random_aer(env, episodes, seed)?,
        })
    }

    pub fn performance(&self, aer: f64) -> Result<f64> {
        performance(aer, self.random_aer, self.expert_aer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    /// `None` when labels come from the expert instead of the IDM.
    pub idm_validation_accuracy: Option<f64>,
    pub idm_degenerate: bool,
    /// Success rate of this iteration's |E| rollouts.
    pub win_probability: f64,
    /// Evaluation AER of the greedy policy.
    pub aer: f64,
    pub performance: f64,
    /// Evaluation episodes that reached the goal.
    pub successes: usize,
    /// Frequency of each predicted action over all expert transitions.
    pub action_prediction_histogram: ActionDistribution,
    /// Size of the set the IDM was trained on in this iteration.
    pub idm_set_size: usize,
    /// Share of that set drawn from post-demonstrations.
    pub idm_post_fraction: f64,
}

/// Everything the loop hands to its observer after each iteration.
pub struct IterationOutcome<'a> {
    pub report: &'a IterationReport,
    pub idm: &'a Learner,
    pub policy: &'a Learner,
}

/// ABCO(α). Runs `alpha + 1` iterations of IDM fit, labelling, policy
/// fit and rollouts, rebuilding the IDM set between iterations according to
/// `config.sampling`. `observe` sees every iteration as it completes.
pub fn abco_alpha(
    config: &RunConfig,
    pre: &InteractionSet,
    demos: &[Trajectory],
    baseline: Baseline,
    observe: &mut dyn FnMut(IterationOutcome) -> Result<()>,
) -> Result<Vec<IterationReport>> {
    config.validate()?;
    if pre.env != config.env {
        return Err(Error::Config(format!(
            "pre-demonstrations are for {} but the run is for {}",
            pre.env, config.env
        )));
    }
    if let Some(d) = demos.iter().find(|d| d.env != config.env) {
        return Err(Error::Config(format!(
            "demonstrations are for {} but the run is for {}",
            d.env, config.env
        )));
    }
    if demos.is_empty() || pre.is_empty() {
        return Err(Error::Config("pre-demonstrations and demonstrations are required".into()));
    }
    pre.validate()?;
    let states: Vec<Vec<Vec<f64>>> = demos.iter().map(|d| d.states.clone()).collect();
    let truth: Option<Vec<Vec<usize>>> = match config.labels {
        LabelSource::Idm => None,
        LabelSource::GroundTruth => Some(
            demos
                .iter()
                .map(|d| {
                    d.actions.clone().ok_or_else(|| {
                        Error::Config("behavioral cloning needs demonstrations with actions".into())
                    })
                })
                .collect::<Result<_>>()?,
        ),
    };
    let (mut idm, mut policy) = config.init_learners(pre)?;
    let k = config.env.action_count();
    let mut reports = Vec::with_capacity(config.alpha + 1);
    let mut idm_set: Vec<Interaction> = pre.interactions.clone();
    let mut post_fraction = 0.0;
    for it in 0..=config.alpha {
        let iter_seed = |s: u64| seeds::derive(config.seed, s, it as u64);
        let mut shuffle = ChaCha8Rng::seed_from_u64(iter_seed(stream::TRAIN_SHUFFLE));
        let (labels, idm_fit) = match &truth {
            Some(t) => (t.clone(), None),
            None => {
                let fit = train_idm(&mut idm, &idm_set, &config.idm_fit, config.seed, &mut shuffle)?;
                (predict_expert_actions(&idm.net, &states)?, Some(fit))
            }
        };
        let mut counts = vec![0usize; k];
        labels.iter().flatten().for_each(|&a| counts[a] += 1);
        train_policy(&mut policy, &states, &labels, &config.policy_fit, &mut shuffle)?;

        let rollouts = run_policy_episodes(
            &policy.net,
            config.env,
            config.rollouts,
            iter_seed(stream::ROLLOUTS),
            stream::ROLLOUTS,
        )?;
        let (aer, successes) = evaluate(
            Actor::Greedy(&policy.net),
            config.env,
            config.eval_episodes,
            config.seed,
        )?;
        let report = IterationReport {
            iteration: it,
            idm_validation_accuracy: idm_fit.map(|f| f.validation_accuracy),
            idm_degenerate: idm_fit.is_some_and(|f| f.degenerate),
            win_probability: rollouts.win_probability(),
            aer,
            performance: baseline.performance(aer)?,
            successes,
            action_prediction_histogram: ActionDistribution::from_counts(&counts),
            idm_set_size: idm_set.len(),
            idm_post_fraction: post_fraction,
        };
        observe(IterationOutcome {
            report: &report,
            idm: &idm,
            policy: &policy,
        })?;
        reports.push(report);

        if it == config.alpha {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(iter_seed(stream::SAMPLING));
        let pos = &rollouts.set;
        let (pre_part, post_part) = match config.sampling {
            SamplingMode::None => (Vec::new(), pos.interactions.clone()),
            SamplingMode::Partial => {
                let win = WinRate::of(&pos.runs)?;
                let post = sample_post(pos, config.n_pre, &mut rng)?;
                (sample_pre(pre, win, config.n_pre, &mut rng)?, post)
            }
            SamplingMode::Whole => sample_whole(pre, pos, config.n_pre, &mut rng)?,
        };
        let total = pre_part.len() + post_part.len();
        post_fraction = post_part.len() as f64 / total.max(1) as f64;
        idm_set = compose_training_set(config.env, pre_part, post_part, &mut rng).interactions;
    }
    Ok(reports)
}
