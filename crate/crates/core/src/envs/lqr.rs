use nalgebra::DMatrix;

use super::{LinGaussEnv, LinearGaussianPolicy};
use crate::error::{Error, Result};

const RICCATI_TOL: f64 = 1e-12;
const RICCATI_MAX_ITER: usize = 1_000_000;

/// Solution of the discounted infinite-horizon LQR problem: the optimal
/// feedback is `a = -gain * s` and the cost-to-go is `s^T value s`.
#[derive(Clone, Debug, PartialEq)]
pub struct LqrSolution {
    pub gain: DMatrix<f64>,
    pub value: DMatrix<f64>,
    pub iterations: usize,
}

/// Iterates `P <- Q + g A'PA - g^2 A'PB (R + g B'PB)^-1 B'PA` from `P = Q`
/// to a fixed point.
pub fn discounted_lqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gamma: f64,
) -> Result<LqrSolution> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!(
            "discount must lie in (0, 1], got {gamma}"
        )));
    }
    let gain_of = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let inner = r + gamma * b.transpose() * p * b;
        let inv = inner
            .try_inverse()
            .ok_or_else(|| Error::Config("control cost plus B'PB is singular".into()))?;
        Ok(gamma * inv * b.transpose() * p * a)
    };
    let mut p = q.clone();
    for it in 1..=RICCATI_MAX_ITER {
        let k = gain_of(&p)?;
        let next = q + gamma * a.transpose() * &p * a - gamma * a.transpose() * &p * b * &k;
        let next = 0.5 * (&next + next.transpose());
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                context: "riccati iteration",
                value: f64::NAN,
            });
        }
        let delta = (&next - &p).amax();
        p = next;
        if delta < RICCATI_TOL * (1.0 + p.amax()) {
            return Ok(LqrSolution {
                gain: gain_of(&p)?,
                value: p,
                iterations: it,
            });
        }
    }
    Err(Error::Config("riccati iteration did not converge".into()))
}

/// Linear-Gaussian expert `a = -K s + eta`, `eta ~ N(0, action_std^2 I)`,
/// with `K` the discounted LQR gain of the environment.
pub fn lqr_expert(env: &LinGaussEnv, gamma: f64, action_std: f64) -> Result<LinearGaussianPolicy> {
    let sol = discounted_lqr(&env.a, &env.b, &env.q_c, &env.r_c, gamma)?;
    LinearGaussianPolicy::new(sol.gain, vec![action_std; env.b.ncols()])
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Solves the discrete Lyapunov equation `S = A S A' + W` by doubling.
/// Requires `spectral_radius(A) < 1`.
pub fn stationary_covariance(a: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let rho = spectral_radius(a);
    if rho >= 1.0 {
        return Err(Error::Config(format!(
            "system is not stable (spectral radius {rho})"
        )));
    }
    let mut sigma = w.clone();
    let mut ak = a.clone();
    for _ in 0..64 {
        let inc = &ak * &sigma * ak.transpose();
        sigma += &inc;
        ak = &ak * &ak;
        if inc.amax() < 1e-16 * (1.0 + sigma.amax()) {
            break;
        }
    }
    Ok(sigma)
}
