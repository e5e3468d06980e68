use rand::{Rng, RngCore};

use super::{Environment, GaussianNoise};
use crate::error::Result;

/// Velocity-controlled point in the plane: `s' = s + dt * vmax * a + e`,
/// reward `-|s'|^2`. The greedy policy `a = clip(-s / (dt * vmax))` is optimal.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMass2D {
    pub dt: f64,
    pub vmax: f64,
    pub horizon: usize,
    /// Start positions are uniform in `[-start_radius, start_radius]^2`.
    pub start_radius: f64,
    noise: GaussianNoise,
}

impl PointMass2D {
    pub fn new(
        dt: f64,
        vmax: f64,
        noise_std: f64,
        horizon: usize,
        start_radius: f64,
    ) -> Result<Self> {
        Ok(Self {
            dt,
            vmax,
            horizon,
            start_radius,
            noise: if noise_std > 0.0 {
                GaussianNoise::diagonal(&[noise_std, noise_std])?
            } else {
                GaussianNoise::new(nalgebra::DMatrix::zeros(2, 2))?
            },
        })
    }

    pub fn standard() -> Result<Self> {
        Self::new(0.1, 1.0, 0.02, 50, 1.0)
    }

    /// Gain of the optimal (greedy) linear-then-clipped policy.
    pub fn greedy_gain(&self) -> f64 {
        1.0 / (self.dt * self.vmax)
    }
}

impl Environment for PointMass2D {
    fn name(&self) -> &'static str {
        "pointmass2d"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn sample_start(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..2)
            .map(|_| rng.random_range(-self.start_radius..=self.start_radius))
            .collect()
    }

    fn drift(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        state
            .iter()
            .zip(action)
            .map(|(s, a)| s + self.dt * self.vmax * a)
            .collect()
    }

    fn noise(&self) -> &GaussianNoise {
        &self.noise
    }

    fn reward(&self, _state: &[f64], _action: &[f64], next_state: &[f64]) -> f64 {
        -next_state.iter().map(|x| x * x).sum::<f64>()
    }
}
