use serde::{Deserialize, Serialize};

use crate::diffcore::AdamState;
use crate::error::{check_finite, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntropyMode {
    Fixed,
    Auto,
}

impl std::str::FromStr for EntropyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(EntropyMode::Fixed),
            "auto" => Ok(EntropyMode::Auto),
            other => Err(Error::Config(format!("unknown entropy mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for EntropyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EntropyMode::Fixed => "fixed",
            EntropyMode::Auto => "auto",
        })
    }
}

/// Entropy temperature `alpha`, fixed or tuned towards a target entropy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyCoeff {
    log_alpha: f64,
    pub mode: EntropyMode,
    pub target_entropy: f64,
    adam: AdamState,
}

impl EntropyCoeff {
    pub fn fixed(alpha: f64) -> Result<Self> {
        Self::new(alpha, EntropyMode::Fixed, 0.0, 0.0)
    }

    pub fn new(
        alpha: f64,
        mode: EntropyMode,
        target_entropy: f64,
        learning_rate: f64,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        Ok(Self {
            log_alpha: alpha.ln(),
            mode,
            target_entropy,
            adam: AdamState::new(1, learning_rate),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    /// Gradient of `-log_alpha * mean(log pi + target_entropy)` with respect to `log_alpha`.
    pub fn gradient(&self, log_probs: &[f64]) -> f64 {
        if log_probs.is_empty() {
            return 0.0;
        }
        let mean = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
        -(mean + self.target_entropy)
    }

    /// One Adam step on `log_alpha` in auto mode; a no-op in fixed mode.
    pub fn tune(&mut self, log_probs: &[f64]) -> Result<f64> {
        check_finite("entropy tuning log-probabilities", log_probs)?;
        if self.mode == EntropyMode::Auto && !log_probs.is_empty() {
            let g = self.gradient(log_probs);
            let mut p = [self.log_alpha];
            self.adam.step(&mut p, &[g])?;
            self.log_alpha = p[0];
        }
        Ok(self.alpha())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_mode_never_changes() {
        let mut c = EntropyCoeff::fixed(1.0).unwrap();
        for lp in [[-5.0, 3.0], [10.0, 10.0]] {
            assert_eq!(c.tune(&lp).unwrap(), 1.0);
        }
    }

    #[test]
    fn stationary_point_leaves_alpha() {
        let mut c = EntropyCoeff::new(0.5, EntropyMode::Auto, -2.0, 1e-2).unwrap();
        assert_eq!(c.gradient(&[1.0, 3.0]), 0.0);
        let before = c.alpha();
        c.tune(&[1.0, 3.0]).unwrap();
        assert_eq!(c.alpha(), before);
    }

    #[test]
    fn overly_deterministic_policy_raises_alpha() {
        let mut c = EntropyCoeff::new(0.2, EntropyMode::Auto, -1.0, 1e-2).unwrap();
        let mut last = c.alpha();
        for _ in 0..20 {
            // log pi = 5 means entropy about -5, far below the target of -1.
            let a = c.tune(&[5.0; 8]).unwrap();
            assert!(a > last);
            last = a;
        }
    }
}
