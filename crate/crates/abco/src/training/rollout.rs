use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Interaction, InteractionSet, SetKind};
use crate::envs::{make_env, EnvId};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::seeds;

/// Worker threads for rollouts: `IFO_LAB_THREADS` if set, else the
/// available parallelism. Results never depend on this value.
pub fn rollout_threads() -> usize {
    std::env::var("IFO_LAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from))
}

/// One finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub interactions: Vec<Interaction>,
    pub episode_return: f64,
    pub success: bool,
}

/// How actions are chosen during a rollout.
#[derive(Clone, Copy)]
pub enum Actor<'a> {
    /// Greedy argmax of the network.
    Greedy(&'a Network),
    /// Uniformly random actions.
    Random,
}

/// Runs the episode whose reset seed is `reset_seed`; `action_seed` drives
/// the random actor only.
pub fn run_episode(env_id: EnvId, actor: Actor, reset_seed: u64, action_seed: u64) -> Result<Episode> {
    let mut env = make_env(env_id);
    let mut rng = ChaCha8Rng::seed_from_u64(action_seed);
    let mut s = env.reset(reset_seed);
    let mut interactions = Vec::new();
    let mut ret = 0.0;
    while !env.is_done() {
        let a = match actor {
            Actor::Greedy(net) => net.act(&s)?,
            Actor::Random => rng.gen_range(0..env_id.action_count()),
        };
        let r = env.step(a)?;
        ret += r.reward;
        interactions.push(Interaction {
            s,
            action: a,
            s_next: r.observation.clone(),
            run_id: 0,
        });
        s = r.observation;
    }
    Ok(Episode {
        interactions,
        episode_return: ret,
        success: env.goal_achieved()?,
    })
}

/// Episodes `0..n` of `stream` under `seed`, possibly in parallel, returned
/// in episode order.
pub fn run_episodes(env: EnvId, actor: Actor, n: usize, seed: u64, stream: u64) -> Result<Vec<Episode>> {
    let one = |i: usize| {
        run_episode(
            env,
            actor,
            seeds::derive(seed, stream, i as u64),
            seeds::derive(seed, stream, (n + i) as u64),
        )
    };
    let threads = rollout_threads().min(n).max(1);
    if threads == 1 {
        return (0..n).map(one).collect();
    }
    let mut slots: Vec<Option<Result<Episode>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (t, chunk) in slots.chunks_mut(n.div_ceil(threads)).enumerate() {
            let start = t * n.div_ceil(threads);
            let one = &one;
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(one(start + k));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every slot is filled"))
        .collect()
}

/// Outcome of [`run_policy_episodes`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rollouts {
    /// Post-demonstrations with one run per episode.
    pub set: InteractionSet,
    pub aer: f64,
}

impl Rollouts {
    pub fn win_probability(&self) -> f64 {
        let wins = self.set.runs.iter().filter(|r| r.success).count();
        wins as f64 / self.set.runs.len() as f64
    }
}

/// Greedy rollouts of `policy`, recorded as a post-demonstration set.
pub fn run_policy_episodes(
    policy: &Network,
    env: EnvId,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<Rollouts> {
    if n == 0 {
        return Err(Error::contract("at least one rollout is required"));
    }
    let episodes = run_episodes(env, Actor::Greedy(policy), n, seed, stream)?;
    let mut set = InteractionSet::new(env, SetKind::Pos);
    let mut total = 0.0;
    for e in episodes {
        total += e.episode_return;
        set.push_run(e.interactions, e.success, e.episode_return);
    }
    Ok(Rollouts {
        set,
        aer: total / n as f64,
    })
}

/// Mean return and success count over `episodes` evaluation episodes.
pub fn evaluate(actor: Actor, env: EnvId, episodes: usize, seed: u64) -> Result<(f64, usize)> {
    if episodes == 0 {
        return Err(Error::contract("at least one evaluation episode is required"));
    }
    let eps = run_episodes(env, actor, episodes, seed, seeds::stream::EVAL)?;
    let aer = eps.iter().map(|e| e.episode_return).sum::<f64>() / episodes as f64;
    Ok((aer, eps.iter().filter(|e| e.success).count()))
}

/// Average episodic reward of greedy `policy` over seeded evaluation
/// episodes (one maze per episode for maze tasks).
pub fn evaluate_aer(policy: &Network, env: EnvId, episodes: usize, seed: u64) -> Result<f64> {
    Ok(evaluate(Actor::Greedy(policy), env, episodes, seed)?.0)
}

/// Uniform-random baseline on the same evaluation episodes.
pub fn random_aer(env: EnvId, episodes: usize, seed: u64) -> Result<f64> {
    Ok(evaluate(Actor::Random, env, episodes, seed)?.0)
}

/// `(policy − random) / (expert − random)`.
pub fn performance(policy_aer: f64, random_aer: f64, expert_aer: f64) -> Result<f64> {
    let span = expert_aer - random_aer;
    if span == 0.0 {
        return Err(Error::UndefinedMetric(format!(
            "expert and random AER are both {expert_aer}"
        )));
    }
    Ok((policy_aer - random_aer) / span)
}
