//! A three-cell ring corridor whose transitions determine the action
//! exactly. Used to check the whole IDM → labels → policy pipeline at zero
//! noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{accuracy, idm_input, predict_expert_actions, train_idm, train_policy, FitConfig, Learner};
use crate::autodiff::AdamConfig;
use crate::dataset::Interaction;
use crate::error::Result;
use crate::nn::{build_net, NetOptions, Network, Role};

pub const CELLS: usize = 3;
/// Move left, stay, move right.
pub const ACTIONS: usize = 3;

pub fn encode(cell: usize) -> Vec<f64> {
    let mut v = vec![0.0; CELLS];
    v[cell] = 1.0;
    v
}

/// Moves wrap around the ring.
pub fn step(cell: usize, action: usize) -> usize {
    (cell + CELLS + action - 1) % CELLS
}

/// The hidden expert: right from cell 0, left from cell 1, stay on cell 2.
pub fn expert(cell: usize) -> usize {
    [2, 0, 1][cell]
}

/// No two actions lead from the same cell to the same next cell.
pub fn is_invertible() -> bool {
    (0..CELLS).all(|c| {
        (0..ACTIONS).all(|a| (0..ACTIONS).all(|b| a == b || step(c, a) != step(c, b)))
    })
}

/// Uniform-random transitions, one run per 10 steps.
pub fn pre_demos(n: usize, seed: u64) -> Vec<Interaction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cell = 0;
    (0..n)
        .map(|i| {
            let a = rng.gen_range(0..ACTIONS);
            let next = step(cell, a);
            let it = Interaction {
                s: encode(cell),
                action: a,
                s_next: encode(next),
                run_id: i / 10,
            };
            cell = next;
            it
        })
        .collect()
}

/// Expert state sequences of `len` steps from every start cell, with the
/// hidden actions alongside.
pub fn expert_demos(len: usize) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<usize>>) {
    (0..CELLS)
        .map(|start| {
            let mut cell = start;
            let mut states = vec![encode(cell)];
            let mut actions = Vec::new();
            for _ in 0..len {
                let a = expert(cell);
                cell = step(cell, a);
                actions.push(a);
                states.push(encode(cell));
            }
            (states, actions)
        })
        .unzip()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyOutcome {
    /// IDM accuracy on all nine `(cell, action)` transitions.
    pub idm_accuracy: f64,
    /// Predicted expert labels equal the hidden ones.
    pub labels_recovered: bool,
    /// Cloned policy's action on each cell, next to the expert's.
    pub policy_actions: Vec<usize>,
    pub expert_actions: Vec<usize>,
}

/// Trains an IDM on random transitions, labels the expert demonstrations
/// with it and clones a policy from the labels.
pub fn run_pipeline(seed: u64, attention: bool) -> Result<ToyOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = NetOptions {
        attention,
        ..NetOptions::default()
    };
    let mut idm = Learner::new(
        Network::new(build_net(Role::Idm, CELLS, ACTIONS, opts)?, &mut rng)?,
        AdamConfig::default(),
    );
    let mut policy = Learner::new(
        Network::new(build_net(Role::Policy, CELLS, ACTIONS, opts)?, &mut rng)?,
        AdamConfig::default(),
    );
    let cfg = FitConfig {
        epochs: 60,
        ..FitConfig::default()
    };
    train_idm(&mut idm, &pre_demos(600, seed), &cfg, seed, &mut rng)?;

    let all: Vec<(Vec<f64>, usize)> = (0..CELLS)
        .flat_map(|c| (0..ACTIONS).map(move |a| (idm_input(&encode(c), &encode(step(c, a))), a)))
        .collect();
    let (x, y): (Vec<_>, Vec<_>) = all.into_iter().unzip();
    let idm_accuracy = accuracy(&idm.net, &x, &y)?;

    let (states, hidden) = expert_demos(6);
    let labels = predict_expert_actions(&idm.net, &states)?;
    // eighteen pairs make one batch per epoch
    let policy_cfg = FitConfig {
        epochs: 1500,
        ..cfg
    };
    train_policy(&mut policy, &states, &labels, &policy_cfg, &mut rng)?;
    let policy_actions = (0..CELLS)
        .map(|c| policy.net.act(&encode(c)))
        .collect::<Result<_>>()?;
    Ok(ToyOutcome {
        idm_accuracy,
        labels_recovered: labels == hidden,
        policy_actions,
        expert_actions: (0..CELLS).map(expert).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_is_invertible() {
        assert!(is_invertible());
    }

    #[test]
    fn pipeline_recovers_the_expert() {
        for attention in [false, true] {
            let out = run_pipeline(3, attention).unwrap();
            assert_eq!(out.idm_accuracy, 1.0, "{out:?} attention={attention}");
            assert!(out.labels_recovered);
            assert_eq!(out.policy_actions, out.expert_actions);
        }
    }

    #[test]
    fn contradictory_labels_cap_accuracy() {
        // the same transition labelled two ways: at most one label can win
        let s = encode(0);
        let data: Vec<Interaction> = (0..40)
            .map(|i| Interaction {
                s: s.clone(),
                action: i % 2,
                s_next: s.clone(),
                run_id: 0,
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut idm = Learner::new(
            Network::new(build_net(Role::Idm, CELLS, ACTIONS, NetOptions::default()).unwrap(), &mut rng).unwrap(),
            AdamConfig::default(),
        );
        let fit = train_idm(&mut idm, &data, &FitConfig::default(), 0, &mut rng).unwrap();
        assert!(fit.validation_accuracy <= 0.5);
        assert!(!fit.degenerate);
    }
}
