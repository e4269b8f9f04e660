use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_finished, check_step, seeded, EnvId, Environment, StepResult};
use crate::error::Result;

/// Constants of the standard MountainCar-v0 task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MountainCarConfig {
    pub min_position: f64,
    pub max_position: f64,
    pub max_speed: f64,
    pub goal_position: f64,
    pub force: f64,
    pub gravity: f64,
    pub max_steps: usize,
}

impl Default for MountainCarConfig {
    fn default() -> Self {
        Self {
            min_position: -1.2,
            max_position: 0.6,
            max_speed: 0.07,
            goal_position: 0.5,
            force: 0.001,
            gravity: 0.0025,
            max_steps: 200,
        }
    }
}

/// State is `[position, velocity]`.
#[derive(Debug, Clone)]
pub struct MountainCar {
    pub config: MountainCarConfig,
    state: [f64; 2],
    steps: usize,
    done: bool,
}

impl MountainCar {
    pub fn new(config: MountainCarConfig) -> Self {
        Self {
            config,
            state: [0.0; 2],
            steps: 0,
            done: false,
        }
    }

    pub fn reset_to(&mut self, state: [f64; 2]) {
        self.state = state;
        self.steps = 0;
        self.done = false;
    }

    pub fn state(&self) -> [f64; 2] {
        self.state
    }
}

impl Environment for MountainCar {
    fn id(&self) -> EnvId {
        EnvId::MountainCar
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        self.reset_to([rng.gen_range(-0.6..-0.4), 0.0]);
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        check_step(EnvId::MountainCar, self.done, action)?;
        let c = &self.config;
        let [mut position, mut velocity] = self.state;
        velocity += (action as f64 - 1.0) * c.force - (3.0 * position).cos() * c.gravity;
        velocity = velocity.clamp(-c.max_speed, c.max_speed);
        position += velocity;
        position = position.clamp(c.min_position, c.max_position);
        if position == c.min_position && velocity < 0.0 {
            velocity = 0.0;
        }
        self.state = [position, velocity];
        self.steps += 1;
        self.done = position >= c.goal_position || self.steps >= c.max_steps;
        Ok(StepResult {
            observation: self.observation(),
            reward: -1.0,
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
        check_finished(EnvId::MountainCar, self.done)?;
        Ok(self.state[0] >= self.config.goal_position)
    }
}
