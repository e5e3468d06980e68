use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Zero-mean Gaussian `N(0, cov)`. A zero covariance is allowed for
/// sampling (deterministic dynamics) but has no density.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianNoise {
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    precision: Option<DMatrix<f64>>,
    log_norm: f64,
}

impl GaussianNoise {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() {
            return Err(Error::Config("noise covariance must be square".into()));
        }
        let d = cov.nrows();
        if cov.iter().all(|&v| v == 0.0) {
            return Ok(Self {
                chol: DMatrix::zeros(d, d),
                cov,
                precision: None,
                log_norm: f64::NAN,
            });
        }
        if (&cov - cov.transpose()).amax() > 1e-12 {
            return Err(Error::Config("noise covariance must be symmetric".into()));
        }
        let chol = nalgebra::Cholesky::new(cov.clone())
            .ok_or_else(|| Error::Config("noise covariance must be positive definite".into()))?;
        let l = chol.l();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            precision: Some(chol.inverse()),
            chol: l,
            cov,
            log_norm: -0.5 * (d as f64 * LOG_2PI + log_det),
        })
    }

    pub fn diagonal(std: &[f64]) -> Result<Self> {
        let var: Vec<f64> = std.iter().map(|s| s * s).collect();
        Self::new(DMatrix::from_diagonal(&DVector::from_vec(var)))
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Log-density at the mode, `-0.5 log((2 pi)^d det cov)`.
    pub fn max_logpdf(&self) -> Result<f64> {
        if self.precision.is_none() {
            return Err(Error::Config("degenerate noise has no density".into()));
        }
        Ok(self.log_norm)
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let xi = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        (&self.chol * xi).iter().copied().collect()
    }

    pub fn logpdf(&self, residual: &[f64]) -> Result<f64> {
        check_dim("noise residual", self.dim(), residual.len())?;
        let precision = self
            .precision
            .as_ref()
            .ok_or_else(|| Error::Config("degenerate noise has no density".into()))?;
        let r = DVector::from_column_slice(residual);
        Ok(self.log_norm - 0.5 * (r.transpose() * precision * &r)[(0, 0)])
    }
}
