//! Seedable classic-control environments and grid mazes.
//!
//! Every environment is deterministic given its reset seed and the action
//! sequence. Observations are plain `f64` vectors: the physical state for
//! the control tasks and a three-channel grid encoding for mazes.

mod acrobot;
mod cartpole;
mod maze;
mod mountain_car;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use acrobot::{Acrobot, AcrobotConfig};
pub use cartpole::{CartPole, CartPoleConfig};
pub use maze::{
    bfs_distances, count_shortest_paths, encode_maze, generate_maze, shortest_path_len, Maze,
    MazeConfig, MazeEnv, MazeObservation, Move, EAST, NORTH, SOUTH, WEST,
};
pub use mountain_car::{MountainCar, MountainCarConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EnvId {
    CartPole,
    Acrobot,
    MountainCar,
    Maze(usize),
}

impl EnvId {
    pub const ALL: [EnvId; 6] = [
        EnvId::CartPole,
        EnvId::Acrobot,
        EnvId::MountainCar,
        EnvId::Maze(3),
        EnvId::Maze(5),
        EnvId::Maze(10),
    ];

    pub fn action_count(self) -> usize {
        match self {
            EnvId::CartPole => 2,
            EnvId::Acrobot | EnvId::MountainCar => 3,
            EnvId::Maze(_) => 4,
        }
    }

    pub fn observation_dim(self) -> usize {
        match self {
            EnvId::CartPole => 4,
            EnvId::Acrobot => 6,
            EnvId::MountainCar => 2,
            EnvId::Maze(n) => 3 * n * n,
        }
    }

    pub fn max_steps(self) -> usize {
        match self {
            EnvId::CartPole | EnvId::Acrobot => 500,
            EnvId::MountainCar => 200,
            EnvId::Maze(n) => 10 * n * n,
        }
    }

    pub fn is_maze(self) -> bool {
        matches!(self, EnvId::Maze(_))
    }

    pub fn action_names(self) -> &'static [&'static str] {
        match self {
            EnvId::CartPole => &["left", "right"],
            EnvId::Acrobot => &["-1", "0", "+1"],
            EnvId::MountainCar => &["left", "none", "right"],
            EnvId::Maze(_) => &["N", "S", "W", "E"],
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvId::CartPole => f.write_str("cartpole"),
            EnvId::Acrobot => f.write_str("acrobot"),
            EnvId::MountainCar => f.write_str("mountaincar"),
            EnvId::Maze(n) => write!(f, "maze{n}"),
        }
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cartpole" => Ok(EnvId::CartPole),
            "acrobot" => Ok(EnvId::Acrobot),
            "mountaincar" => Ok(EnvId::MountainCar),
            other => match other.strip_prefix("maze").map(str::parse::<usize>) {
                Some(Ok(n)) if [3, 5, 10].contains(&n) => Ok(EnvId::Maze(n)),
                _ => Err(Error::Config(format!(
                    "unknown environment '{s}' (expected cartpole, acrobot, mountaincar, maze3, maze5 or maze10)"
                ))),
            },
        }
    }
}

impl TryFrom<String> for EnvId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EnvId> for String {
    fn from(id: EnvId) -> Self {
        id.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub steps_elapsed: usize,
}

pub trait Environment: Send {
    fn id(&self) -> EnvId;

    fn action_count(&self) -> usize {
        self.id().action_count()
    }

    fn observation_dim(&self) -> usize {
        self.id().observation_dim()
    }

    /// Starts a new episode from a state drawn with `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn step(&mut self, action: usize) -> Result<StepResult>;

    fn observation(&self) -> Vec<f64>;

    fn steps_elapsed(&self) -> usize;

    fn is_done(&self) -> bool;

    /// Whether the finished episode reached the task goal.
    fn goal_achieved(&self) -> Result<bool>;
}

/// Environment with the default configuration for `id`.
pub fn make_env(id: EnvId) -> Box<dyn Environment> {
    match id {
        EnvId::CartPole => Box::new(CartPole::new(CartPoleConfig::default())),
        EnvId::Acrobot => Box::new(Acrobot::new(AcrobotConfig::default())),
        EnvId::MountainCar => Box::new(MountainCar::new(MountainCarConfig::default())),
        EnvId::Maze(n) => Box::new(MazeEnv::new(MazeConfig::for_size(n))),
    }
}

/// Identity for the control tasks; observations are already encoded.
pub fn encode_state(observation: &[f64]) -> Vec<f64> {
    observation.to_vec()
}

pub(crate) fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shared step-guard used by every environment.
pub(crate) fn check_step(id: EnvId, done: bool, action: usize) -> Result<()> {
    if done {
        return Err(Error::contract(format!("{id}: step called on a finished episode")));
    }
    if action >= id.action_count() {
        return Err(Error::Index {
            what: "actions",
            index: action,
            len: id.action_count(),
        });
    }
    Ok(())
}

pub(crate) fn check_finished(id: EnvId, done: bool) -> Result<()> {
    if !done {
        return Err(Error::contract(format!(
            "{id}: goal_achieved needs a finished episode"
        )));
    }
    Ok(())
}
