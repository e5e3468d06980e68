use std::f64::consts::PI;

use rand::{Rng, RngCore};

use super::{Environment, GaussianNoise};
use crate::error::Result;

/// Torque-limited pendulum with state `(theta, omega)`, `theta = 0` hanging
/// down. Semi-implicit Euler plus additive Gaussian noise on both
/// components. The angle is not wrapped, which keeps the transition density
/// exactly Gaussian. Reward favours the upright position.
#[derive(Clone, Debug, PartialEq)]
pub struct PendulumEnv {
    pub gravity: f64,
    pub length: f64,
    pub mass: f64,
    pub max_torque: f64,
    pub dt: f64,
    pub horizon: usize,
    noise: GaussianNoise,
}

impl PendulumEnv {
    pub fn new(dt: f64, max_torque: f64, noise_std: [f64; 2], horizon: usize) -> Result<Self> {
        Ok(Self {
            gravity: 9.81,
            length: 1.0,
            mass: 1.0,
            max_torque,
            dt,
            horizon,
            noise: GaussianNoise::diagonal(&noise_std)?,
        })
    }

    pub fn standard() -> Result<Self> {
        Self::new(0.05, 2.0, [0.01, 0.02], 200)
    }
}

fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Environment for PendulumEnv {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn sample_start(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        vec![rng.random_range(-PI..PI), rng.random_range(-1.0..1.0)]
    }

    fn drift(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let (theta, omega) = (state[0], state[1]);
        let torque = self.max_torque * action[0];
        let accel = -self.gravity / self.length * theta.sin()
            + torque / (self.mass * self.length * self.length);
        let omega_next = omega + self.dt * accel;
        vec![theta + self.dt * omega_next, omega_next]
    }

    fn noise(&self) -> &GaussianNoise {
        &self.noise
    }

    fn reward(&self, state: &[f64], action: &[f64], _next_state: &[f64]) -> f64 {
        let from_top = wrap_angle(state[0] - PI);
        let torque = self.max_torque * action[0];
        -(from_top * from_top + 0.1 * state[1] * state[1] + 0.001 * torque * torque)
    }
}
