use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Result};

/// Adam optimizer state for one flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            step_count: 0,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected Adam update. Rejects non-finite gradients before
    /// touching any state.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_dim("adam parameters", self.first_moment.len(), params.len())?;
        check_dim("adam gradients", self.first_moment.len(), grads.len())?;
        check_finite("adam gradient", grads)?;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let step_size = self.learning_rate / bias1;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= step_size * *m / ((*v / bias2).sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let mut adam = AdamState::new(2, 0.1);
        adam.first_moment = vec![1.0, -1.0];
        adam.second_moment = vec![0.5, 0.5];
        let mut params = vec![0.0, 0.0];
        let before_m = adam.first_moment.clone();
        // Parameters move only through the existing momentum; with zero moments they stay put.
        let mut fresh = AdamState::new(2, 0.1);
        let mut still = vec![1.0, 2.0];
        fresh.step(&mut still, &[0.0, 0.0]).unwrap();
        assert_eq!(still, vec![1.0, 2.0]);
        adam.step(&mut params, &[0.0, 0.0]).unwrap();
        for (m, m0) in adam.first_moment.iter().zip(&before_m) {
            assert!(m.abs() < m0.abs());
        }
        assert!(adam.second_moment.iter().all(|&v| v < 0.5));
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        // m1 = 0.1 g, v1 = 0.001 g^2, m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
        let mut adam = AdamState::new(3, 0.01);
        let mut params = vec![1.0, 1.0, 1.0];
        let grads = [2.0, -0.5, 1e-3];
        adam.step(&mut params, &grads).unwrap();
        for (p, g) in params.iter().zip(grads) {
            let expected = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((p - expected).abs() < 1e-12, "{p} vs {expected}");
        }
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn constant_gradient_decreases_parameter_monotonically() {
        let mut adam = AdamState::new(1, 0.05);
        let mut params = vec![0.0];
        let mut last = params[0];
        for _ in 0..50 {
            adam.step(&mut params, &[1.0]).unwrap();
            assert!(params[0] < last);
            last = params[0];
        }
        assert_eq!(adam.step_count, 50);
    }

    #[test]
    fn nan_gradient_is_rejected_without_side_effects() {
        let mut adam = AdamState::new(2, 0.1);
        let mut params = vec![1.0, 2.0];
        let err = adam.step(&mut params, &[0.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::Numeric { .. }));
        assert_eq!(params, vec![1.0, 2.0]);
        assert_eq!(adam.step_count, 0);
    }

    #[test]
    fn clip_grad_norm_caps_norm() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }
}
