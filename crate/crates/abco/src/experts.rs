//! Scripted experts, state-only demonstration collection and random-policy
//! pre-demonstrations.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Interaction, InteractionSet, SetKind, Trajectory};
use crate::envs::{bfs_distances, make_env, EnvId, Environment, Maze, MazeObservation, Move};
use crate::error::{Error, Result};
use crate::seeds::{self, stream};

/// Expert attempts allowed per requested successful episode.
pub const RETRY_FACTOR: usize = 10;

/// Action of the scripted expert for `env` in encoded state `obs`. `rng`
/// only breaks ties between equally short maze paths.
pub fn expert_action<R: Rng + ?Sized>(env: EnvId, obs: &[f64], rng: &mut R) -> Result<usize> {
    if obs.len() != env.observation_dim() {
        return Err(Error::Dimension {
            op: "expert_action",
            left: vec![obs.len()],
            right: vec![env.observation_dim()],
        });
    }
    Ok(match env {
        EnvId::CartPole => {
            // PD on the pole angle with a weak cart-centering term
            let (x, v, th, w) = (obs[0], obs[1], obs[2], obs[3]);
            let u = th + 0.5 * w + 0.01 * x + 0.1 * v;
            usize::from(u > 0.0)
        }
        EnvId::MountainCar => {
            if obs[1] < 0.0 {
                0
            } else {
                2
            }
        }
        EnvId::Acrobot => {
            // The joint torque drives link 1 through its reaction, so the
            // pumping torque opposes the sign of θ̇₁.
            let w1 = obs[4];
            if w1 > 0.0 {
                0
            } else if w1 < 0.0 {
                2
            } else {
                1
            }
        }
        EnvId::Maze(n) => {
            let o = MazeObservation::decode(n, obs)?;
            maze_move(&o.maze, o.agent, rng).action()
        }
    })
}

/// First move of a shortest path to the goal, chosen uniformly among
/// equally short options. Stays put (north into a wall) at the goal.
pub fn maze_move<R: Rng + ?Sized>(maze: &Maze, agent: (usize, usize), rng: &mut R) -> Move {
    let dist = bfs_distances(maze, maze.goal);
    let Some(d) = dist[agent.0][agent.1].filter(|&d| d > 0) else {
        return Move::North;
    };
    let best: Vec<Move> = Move::ALL
        .into_iter()
        .filter(|&mv| {
            maze.walk(agent, mv)
                .is_some_and(|(r, c)| dist[r][c] == Some(d - 1))
        })
        .collect();
    *best.choose(rng).expect("a reachable cell has a downhill neighbour")
}

/// One expert episode from `reset_seed`, returning states, actions and
/// outcome.
pub fn expert_episode(env_id: EnvId, reset_seed: u64, tie_seed: u64) -> Result<Trajectory> {
    let mut env = make_env(env_id);
    let mut tie = ChaCha8Rng::seed_from_u64(tie_seed);
    let first = env.reset(reset_seed);
    run_episode(env.as_mut(), first, |obs| expert_action(env_id, obs, &mut tie))
}

fn run_episode(
    env: &mut dyn Environment,
    first: Vec<f64>,
    mut policy: impl FnMut(&[f64]) -> Result<usize>,
) -> Result<Trajectory> {
    let mut states = vec![first];
    let mut actions = Vec::new();
    let mut ret = 0.0;
    while !env.is_done() {
        let a = policy(states.last().expect("non-empty"))?;
        let r = env.step(a)?;
        ret += r.reward;
        actions.push(a);
        states.push(r.observation);
    }
    Ok(Trajectory {
        env: env.id(),
        states,
        actions: Some(actions),
        episode_return: ret,
        success: env.goal_achieved()?,
    })
}

/// `n` successful expert episodes with actions stripped. Failed attempts
/// are re-rolled with fresh seeds up to [`RETRY_FACTOR`]` · n` attempts.
pub fn collect_expert_demos(env: EnvId, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    Ok(collect_labelled_expert_demos(env, n, seed)?
        .into_iter()
        .map(Trajectory::strip_actions)
        .collect())
}

/// The same episodes as [`collect_expert_demos`] with the expert's actions
/// kept, for behavioral cloning.
pub fn collect_labelled_expert_demos(env: EnvId, n: usize, seed: u64) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::contract("at least one expert episode is required"));
    }
    let mut out = Vec::with_capacity(n);
    for attempt in 0..(RETRY_FACTOR * n) as u64 {
        let t = expert_episode(
            env,
            seeds::derive(seed, stream::EXPERT_EPISODES, attempt),
            seeds::derive(seed, stream::EXPERT_TIES, attempt),
        )?;
        if t.success {
            out.push(t);
            if out.len() == n {
                return Ok(out);
            }
        }
    }
    Err(Error::Collection(format!(
        "{env} expert succeeded {} times in {} attempts",
        out.len(),
        RETRY_FACTOR * n
    )))
}

/// `experts` expert runs on the single maze generated from `maze_seed`, each
/// with its own tie-breaking stream. Actions are kept.
pub fn maze_expert_runs(size: usize, maze_seed: u64, experts: usize, seed: u64) -> Result<Vec<Trajectory>> {
    (0..experts as u64)
        .map(|k| {
            expert_episode(
                EnvId::Maze(size),
                maze_seed,
                seeds::derive(seed, stream::EXPERT_TIES, k),
            )
        })
        .collect()
}

/// Uniform-random interactions `(s, a, s')`, episode after episode, until
/// exactly `n` have been gathered. A run cut short by the budget counts as
/// unsuccessful.
pub fn collect_pre_demos(env_id: EnvId, n: usize, seed: u64) -> Result<InteractionSet> {
    if n == 0 {
        return Err(Error::contract("at least one interaction is required"));
    }
    let mut set = InteractionSet::new(env_id, SetKind::Pre);
    let mut env = make_env(env_id);
    let k = env_id.action_count();
    let mut episode = 0u64;
    while set.len() < n {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, stream::PRE_DEMOS, episode));
        episode += 1;
        let mut s = env.reset(rng.gen());
        let mut run = Vec::new();
        let mut ret = 0.0;
        while !env.is_done() && set.len() + run.len() < n {
            let a = rng.gen_range(0..k);
            let r = env.step(a)?;
            ret += r.reward;
            run.push(Interaction {
                s,
                action: a,
                s_next: r.observation.clone(),
                run_id: 0,
            });
            s = r.observation;
        }
        let success = env.is_done() && env.goal_achieved()?;
        set.push_run(run, success, ret);
    }
    Ok(set)
}

/// Mean return of the expert over `episodes` seeded episodes.
pub fn expert_aer(env: EnvId, episodes: usize, seed: u64) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut wins = 0;
    for i in 0..episodes as u64 {
        let t = expert_episode(
            env,
            seeds::derive(seed, stream::EVAL, i),
            seeds::derive(seed, stream::EXPERT_TIES, i),
        )?;
        total += t.episode_return;
        wins += usize::from(t.success);
    }
    Ok((total / episodes as f64, wins))
}
