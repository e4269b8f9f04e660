use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_finished, check_step, seeded, EnvId, Environment, StepResult};
use crate::error::Result;

/// Constants of the standard CartPole-v1 task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartPoleConfig {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub pole_half_length: f64,
    pub force_magnitude: f64,
    pub tau: f64,
    pub x_threshold: f64,
    pub theta_threshold: f64,
    pub max_steps: usize,
    /// Episode length that counts as success.
    pub goal_steps: usize,
    pub init_bound: f64,
}

impl Default for CartPoleConfig {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            force_magnitude: 10.0,
            tau: 0.02,
            x_threshold: 2.4,
            theta_threshold: 12.0 * 2.0 * std::f64::consts::PI / 360.0,
            max_steps: 500,
            goal_steps: 195,
            init_bound: 0.05,
        }
    }
}

/// State is `[x, ẋ, θ, θ̇]`.
#[derive(Debug, Clone)]
pub struct CartPole {
    pub config: CartPoleConfig,
    state: [f64; 4],
    steps: usize,
    done: bool,
}

impl CartPole {
    pub fn new(config: CartPoleConfig) -> Self {
        Self {
            config,
            state: [0.0; 4],
            steps: 0,
            done: false,
        }
    }

    /// Starts an episode from an explicit state.
    pub fn reset_to(&mut self, state: [f64; 4]) {
        self.state = state;
        self.steps = 0;
        self.done = false;
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    fn out_of_bounds(&self) -> bool {
        let [x, _, theta, _] = self.state;
        x < -self.config.x_threshold
            || x > self.config.x_threshold
            || theta < -self.config.theta_threshold
            || theta > self.config.theta_threshold
    }
}

impl Environment for CartPole {
    fn id(&self) -> EnvId {
        EnvId::CartPole
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        let b = self.config.init_bound;
        let state = [0; 4].map(|_| rng.gen_range(-b..b));
        self.reset_to(state);
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        check_step(EnvId::CartPole, self.done, action)?;
        let c = &self.config;
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action == 1 {
            c.force_magnitude
        } else {
            -c.force_magnitude
        };
        let total_mass = c.cart_mass + c.pole_mass;
        let polemass_length = c.pole_mass * c.pole_half_length;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + polemass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (c.gravity * sin - cos * temp)
            / (c.pole_half_length * (4.0 / 3.0 - c.pole_mass * cos * cos / total_mass));
        let x_acc = temp - polemass_length * theta_acc * cos / total_mass;

        // explicit Euler
        self.state = [
            x + c.tau * x_dot,
            x_dot + c.tau * x_acc,
            theta + c.tau * theta_dot,
            theta_dot + c.tau * theta_acc,
        ];
        self.steps += 1;
        self.done = self.out_of_bounds() || self.steps >= self.config.max_steps;
        Ok(StepResult {
            observation: self.observation(),
            reward: 1.0,
            done: self.done,
            steps_elapsed: self.steps,
        })
    }

    fn observation(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    fn steps_elapsed(&self) -> usize {
        self.steps
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn goal_achieved(&self) -> Result<bool> {
        check_finished(EnvId::CartPole, self.done)?;
        Ok(self.steps >= self.config.goal_steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_small_and_seeded() {
        let mut env = CartPole::new(CartPoleConfig::default());
        let a = env.reset(9);
        let b = env.reset(9);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.abs() < 0.05));
        assert_ne!(a, env.reset(10));
    }

    #[test]
    fn one_step_matches_hand_computation() {
        let mut env = CartPole::new(CartPoleConfig::default());
        env.reset_to([0.0; 4]);
        let r = env.step(1).unwrap();
        // θ = 0: temp = F / M, θ̈ = -temp / (l (4/3 - m/M)), ẍ = temp - m l θ̈ / M
        let temp = 10.0 / 1.1;
        let theta_acc = -temp / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        let x_acc = temp - 0.05 * theta_acc / 1.1;
        assert_eq!(r.observation[0], 0.0);
        assert!((r.observation[1] - 0.02 * x_acc).abs() < 1e-15);
        assert!((r.observation[3] - 0.02 * theta_acc).abs() < 1e-15);
        assert_eq!(r.reward, 1.0);
        assert!(!r.done);
    }

    #[test]
    fn falling_pole_terminates_and_fails_goal() {
        let mut env = CartPole::new(CartPoleConfig::default());
        env.reset(0);
        let mut steps = 0;
        while !env.is_done() {
            env.step(1).unwrap();
            steps += 1;
        }
        assert!(steps < 195);
        assert!(!env.goal_achieved().unwrap());
        // once done, stays done
        assert!(env.is_done());
    }

    #[test]
    fn pole_state_bounded_while_alive() {
        let mut env = CartPole::new(CartPoleConfig::default());
        env.reset(3);
        let mut rng = seeded(4);
        loop {
            let r = env.step(rng.gen_range(0..2)).unwrap();
            if r.done {
                break;
            }
            assert!(r.observation[0].abs() <= 2.4);
            assert!(r.observation[2].abs() <= 12f64.to_radians());
        }
    }
}
