//! Interaction storage, action distributions and the win-weighted
//! pre/post sampling used to rebuild the inverse-dynamics training set.

mod io;
mod sampling;

use serde::{Deserialize, Serialize};

use crate::envs::EnvId;
use crate::error::{Error, Result};

pub use io::{load, load_demos, save, save_demos, FORMAT_VERSION};
pub use sampling::{
    compose_training_set, empirical_action_distribution, post_demo_distribution, quotas,
    sample_post, sample_pre, sample_whole, win_probability, PostDistribution, WinRate,
};

/// One `(s_t, a_t, s_{t+1})` transition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub s: Vec<f64>,
    pub action: usize,
    pub s_next: Vec<f64>,
    pub run_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetKind {
    /// Random-policy interactions with true actions.
    Pre,
    /// Interactions of the learned policy.
    Pos,
    /// Training set assembled by sampling.
    Composed,
}

/// One episode inside an interaction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: usize,
    /// Indices into the owning set's `interactions`.
    pub indices: Vec<usize>,
    /// Goal reached.
    pub success: bool,
    pub episode_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSet {
    pub env: EnvId,
    pub kind: SetKind,
    pub action_count: usize,
    pub interactions: Vec<Interaction>,
    pub runs: Vec<RunRecord>,
}

impl InteractionSet {
    pub fn new(env: EnvId, kind: SetKind) -> Self {
        Self {
            env,
            kind,
            action_count: env.action_count(),
            interactions: Vec::new(),
            runs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    /// Appends a finished or truncated episode as a run.
    pub fn push_run(&mut self, run: Vec<Interaction>, success: bool, episode_return: f64) {
        let run_id = self.runs.len();
        let start = self.interactions.len();
        for mut it in run {
            it.run_id = run_id;
            self.interactions.push(it);
        }
        self.runs.push(RunRecord {
            run_id,
            indices: (start..self.interactions.len()).collect(),
            success,
            episode_return,
        });
    }

    /// Success flag of every interaction's run.
    pub fn run_success(&self, run_id: usize) -> bool {
        self.runs.get(run_id).is_some_and(|r| r.success)
    }

    /// Rebuilds run records from interaction run ids.
    pub(crate) fn reindex_runs(&mut self, success: &[(usize, bool)]) {
        let mut runs: Vec<RunRecord> = Vec::new();
        for (i, it) in self.interactions.iter().enumerate() {
            while runs.len() <= it.run_id {
                let id = runs.len();
                runs.push(RunRecord {
                    run_id: id,
                    indices: Vec::new(),
                    success: false,
                    episode_return: 0.0,
                });
            }
            runs[it.run_id].indices.push(i);
        }
        for &(id, ok) in success {
            if let Some(r) = runs.get_mut(id) {
                r.success = ok;
            }
        }
        self.runs = runs;
    }

    /// Checks widths and action ranges.
    pub fn validate(&self) -> Result<()> {
        let width = self.env.observation_dim();
        for (i, it) in self.interactions.iter().enumerate() {
            if it.s.len() != width || it.s_next.len() != width {
                return Err(Error::Dimension {
                    op: "interaction",
                    left: vec![it.s.len(), it.s_next.len()],
                    right: vec![width],
                });
            }
            if it.action >= self.action_count {
                return Err(Error::Index {
                    what: "actions",
                    index: it.action,
                    len: self.action_count,
                });
            }
            if self.kind == SetKind::Pos && it.run_id >= self.runs.len() {
                return Err(Error::contract(format!(
                    "interaction {i} names unknown run {}",
                    it.run_id
                )));
            }
        }
        Ok(())
    }
}

/// State-only expert trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub env: EnvId,
    pub states: Vec<Vec<f64>>,
    /// Present only for action-labelled collections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<usize>>,
    pub episode_return: f64,
    pub success: bool,
}

impl Trajectory {
    /// Consecutive state pairs `(s_t, s_{t+1})`.
    pub fn transitions(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.states
            .windows(2)
            .map(|w| (w[0].as_slice(), w[1].as_slice()))
    }

    pub fn strip_actions(mut self) -> Self {
        self.actions = None;
        self
    }
}

/// Probability vector over actions. The all-zero vector is the "no
/// successful run" sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn zeros(actions: usize) -> Self {
        Self {
            probs: vec![0.0; actions],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.probs.iter().all(|&p| p == 0.0)
    }

    pub fn from_counts(counts: &[usize]) -> Self {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Self::zeros(counts.len());
        }
        Self {
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.probs.iter().sum()
    }
}
