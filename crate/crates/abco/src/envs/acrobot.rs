use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_finished, check_step, seeded, EnvId, Environment, StepResult};
use crate::error::Result;

/// Constants of the standard Acrobot-v1 task (book dynamics, RK4).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcrobotConfig {
    pub dt: f64,
    pub link_length_1: f64,
    pub link_mass_1: f64,
    pub link_mass_2: f64,
    pub link_com_1: f64,
    pub link_com_2: f64,
    pub link_moi: f64,
    pub gravity: f64,
    pub max_vel_1: f64,
    pub max_vel_2: f64,
    pub max_steps: usize,
    pub init_bound: f64,
}

impl Default for AcrobotConfig {
    fn default() -> Self {
        Self {
            dt: 0.2,
            link_length_1: 1.0,
            link_mass_1: 1.0,
            link_mass_2: 1.0,
            link_com_1: 0.5,
            link_com_2: 0.5,
            link_moi: 1.0,
            gravity: 9.8,
            max_vel_1: 4.0 * PI,
            max_vel_2: 9.0 * PI,
            max_steps: 500,
            init_bound: 0.1,
        }
    }
}

const TORQUES: [f64; 3] = [-1.0, 0.0, 1.0];

/// Internal state is `[θ₁, θ₂, θ̇₁, θ̇₂]`; observations are
/// `[cos θ₁, sin θ₁, cos θ₂, sin θ₂, θ̇₁, θ̇₂]`.
#[derive(Debug, Clone)]
pub struct Acrobot {
    pub config: AcrobotConfig,
    state: [f64; 4],
    steps: usize,
    done: bool,
    reached: bool,
}

impl Acrobot {
    pub fn new(config: AcrobotConfig) -> Self {
        Self {
            config,
            state: [0.0; 4],
            steps: 0,
            done: false,
            reached: false,
        }
    }

    pub fn reset_to(&mut self, state: [f64; 4]) {
        self.state = state;
        self.steps = 0;
        self.done = false;
        self.reached = false;
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    fn tip_above_line(s: &[f64; 4]) -> bool {
        -s[0].cos() - (s[1] + s[0]).cos() > 1.0
    }

    fn derivs(&self, s: [f64; 5]) -> [f64; 5] {
        let c = &self.config;
        let (m1, m2, l1, lc1, lc2) = (
            c.link_mass_1,
            c.link_mass_2,
            c.link_length_1,
            c.link_com_1,
            c.link_com_2,
        );
        let (i1, i2, g) = (c.link_moi, c.link_moi, c.gravity);
        let [theta1, theta2, dtheta1, dtheta2, a] = s;
        let d1 = m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * theta2.cos()) + i1 + i2;
        let d2 = m2 * (lc2 * lc2 + l1 * lc2 * theta2.cos()) + i2;
        let phi2 = m2 * lc2 * g * (theta1 + theta2 - PI / 2.0).cos();
        let phi1 = -m2 * l1 * lc2 * dtheta2 * dtheta2 * theta2.sin()
            - 2.0 * m2 * l1 * lc2 * dtheta2 * dtheta1 * theta2.sin()
            + (m1 * lc1 + m2 * l1) * g * (theta1 - PI / 2.0).cos()
            + phi2;
        let ddtheta2 = (a + d2 / d1 * phi1 - m2 * l1 * lc2 * dtheta1 * dtheta1 * theta2.sin() - phi2)
            / (m2 * lc2 * lc2 + i2 - d2 * d2 / d1);
        let ddtheta1 = -(d2 * ddtheta2 + phi1) / d1;
        [dtheta1, dtheta2, ddtheta1, ddtheta2, 0.0]
    }

    fn rk4(&self, y0: [f64; 5], dt: f64) -> [f64; 5] {
        let add = |y: [f64; 5], k: [f64; 5], h: f64| -> [f64; 5] {
            std::array::from_fn(|i| y[i] + h * k[i])
        };
        let k1 = self.derivs(y0);
        let k2 = self.derivs(add(y0, k1, dt / 2.0));
        let k3 = self.derivs(add(y0, k2, dt / 2.0));
        let k4 = self.derivs(add(y0, k3, dt));
        std::array::from_fn(|i| y0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
    }
}

fn wrap(mut x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    while x > hi {
        x -= span;
    }
    while x < lo {
        x += span;
    }
    x
}

impl Environment for Acrobot {
    fn id(&self) -> EnvId {
        EnvId::Acrobot
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = seeded(seed);
        let b = self.config.init_bound;
        let s = [0; 4].map(|_| rng.gen_range(-b..b));
        self.reset_to(s);
        self.observation()
    }

    fn step(&mut self, action: usize) -> Result<StepResult> {
        check_step(EnvId::Acrobot, self.done, action)?;
        let [a, b, c, d] = self.state;
        let ns = self.rk4([a, b, c, d, TORQUES[action]], self.config.dt);
        self.state = [
            wrap(ns[0], -PI, PI),
            wrap(ns[1], -PI, PI),
            ns[2].clamp(-self.config.max_vel_1, self.config.max_vel_1),
            ns[3].clamp(-self.config.max_vel_2, self.config.max_vel_2),
        ];
        self.steps += 1;
        self.reached = Self::tip_above_line(&self.state);
        self.done = self.reached || self.steps >= self.config.max_steps;
        Ok(StepResult {
            observation: self.observation(),
            reward: if self.reached { 0.0 } else { -1.0 },
            done: self.done,
            steps_elapsed: self.steps,
        })
    }

    fn observation(&self) -> Vec<f64> {
        let [t1, t2, d1, d2] = self.state;
        vec![t1.cos(), t1.sin(), t2.cos(), t2.sin(), d1, d2]
    }

    fn steps_elapsed(&self) -> usize {
        self.steps
    }

    fn is_done(&self) -> bool {
        self.done
    }

    fn goal_achieved(&self) -> Result<bool> {
        check_finished(EnvId::Acrobot, self.done)?;
        Ok(self.reached)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_is_on_the_unit_circle() {
        let mut env = Acrobot::new(AcrobotConfig::default());
        env.reset(4);
        let mut rng = seeded(8);
        while !env.is_done() {
            let o = env.step(rng.gen_range(0..3)).unwrap().observation;
            assert!((o[0] * o[0] + o[1] * o[1] - 1.0).abs() < 1e-9);
            assert!((o[2] * o[2] + o[3] * o[3] - 1.0).abs() < 1e-9);
            assert!(o[4].abs() <= 4.0 * PI && o[5].abs() <= 9.0 * PI);
        }
    }

    #[test]
    fn hanging_at_rest_stays_at_rest() {
        let mut env = Acrobot::new(AcrobotConfig::default());
        env.reset_to([0.0; 4]);
        let r = env.step(1).unwrap();
        for v in &r.observation[4..] {
            assert!(v.abs() < 1e-12);
        }
        assert_eq!(r.reward, -1.0);
    }

    #[test]
    fn wrap_keeps_angles_in_range() {
        assert!((wrap(3.5, -PI, PI) - (3.5 - 2.0 * PI)).abs() < 1e-15);
        assert!((wrap(-7.0, -PI, PI) - (-7.0 + 2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn reaching_the_line_ends_with_zero_reward() {
        let mut env = Acrobot::new(AcrobotConfig::default());
        // nearly upright, no velocity: already above the line after one step
        env.reset_to([PI - 0.1, 0.0, 0.0, 0.0]);
        let r = env.step(1).unwrap();
        assert!(r.done);
        assert_eq!(r.reward, 0.0);
        assert!(env.goal_achieved().unwrap());
    }
}
