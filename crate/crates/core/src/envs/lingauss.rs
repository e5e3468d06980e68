use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::{Environment, GaussianNoise};
use crate::error::{Error, Result};

/// Linear-Gaussian system `s' = A s + B a + e`, `e ~ N(0, noise_cov)`, with
/// per-step reward `-(s^T Qc s + a^T Rc a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinGaussEnv {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q_c: DMatrix<f64>,
    pub r_c: DMatrix<f64>,
    pub horizon: usize,
    pub start_mean: Vec<f64>,
    pub start_std: Vec<f64>,
    noise: GaussianNoise,
}

impl LinGaussEnv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        noise_cov: DMatrix<f64>,
        q_c: DMatrix<f64>,
        r_c: DMatrix<f64>,
        horizon: usize,
        start_mean: Vec<f64>,
        start_std: Vec<f64>,
    ) -> Result<Self> {
        let d = a.nrows();
        let m = b.ncols();
        let ok = a.is_square()
            && b.nrows() == d
            && noise_cov.shape() == (d, d)
            && q_c.shape() == (d, d)
            && r_c.shape() == (m, m)
            && start_mean.len() == d
            && start_std.len() == d;
        if !ok || d == 0 || m == 0 {
            return Err(Error::Config(
                "inconsistent linear-Gaussian system dimensions".into(),
            ));
        }
        Ok(Self {
            noise: GaussianNoise::new(noise_cov)?,
            a,
            b,
            q_c,
            r_c,
            horizon,
            start_mean,
            start_std,
        })
    }

    /// A damped double integrator (position, velocity) driven by a scalar
    /// force, horizon 200. Open-loop stable, so bounded actions keep the
    /// state bounded.
    pub fn standard() -> Result<Self> {
        Self::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.0, 0.9]),
            DMatrix::from_row_slice(2, 1, &[0.0, 0.4]),
            DMatrix::from_diagonal_element(2, 2, 0.05 * 0.05),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.1])),
            DMatrix::from_element(1, 1, 0.1),
            200,
            vec![0.0, 0.0],
            vec![0.5, 0.3],
        )
    }
}

impl Environment for LinGaussEnv {
    fn name(&self) -> &'static str {
        "lingauss"
    }

    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn action_dim(&self) -> usize {
        self.b.ncols()
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn sample_start(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.start_mean
            .iter()
            .zip(&self.start_std)
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn drift(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        let next = &self.a * DVector::from_column_slice(state)
            + &self.b * DVector::from_column_slice(action);
        next.iter().copied().collect()
    }

    fn noise(&self) -> &GaussianNoise {
        &self.noise
    }

    fn reward(&self, state: &[f64], action: &[f64], _next_state: &[f64]) -> f64 {
        let s = DVector::from_column_slice(state);
        let a = DVector::from_column_slice(action);
        -(s.dot(&(&self.q_c * &s)) + a.dot(&(&self.r_c * &a)))
    }
}
