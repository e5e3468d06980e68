use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseMode {
    /// Standard deviation falls linearly from `sigma_start` to `sigma_end`.
    LinearDecay,
    /// Always `sigma_end`.
    Constant,
    /// No noise.
    None,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_decay" | "scheduled" => Ok(NoiseMode::LinearDecay),
            "constant" => Ok(NoiseMode::Constant),
            "none" => Ok(NoiseMode::None),
            other => Err(Error::Config(format!("unknown noise mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for NoiseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseMode::LinearDecay => "linear_decay",
            NoiseMode::Constant => "constant",
            NoiseMode::None => "none",
        })
    }
}

/// Gaussian input-noise level as a function of the training step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigma_start: f64,
    pub sigma_end: f64,
    pub total_steps: usize,
    pub mode: NoiseMode,
}

impl NoiseSchedule {
    /// 0.05 decaying linearly to 0.005.
    pub fn linear_decay(total_steps: usize) -> Self {
        Self {
            sigma_start: 0.05,
            sigma_end: 0.005,
            total_steps,
            mode: NoiseMode::LinearDecay,
        }
    }

    pub fn constant(total_steps: usize) -> Self {
        Self {
            mode: NoiseMode::Constant,
            ..Self::linear_decay(total_steps)
        }
    }

    pub fn none() -> Self {
        Self {
            mode: NoiseMode::None,
            ..Self::linear_decay(0)
        }
    }

    pub fn with_mode(mode: NoiseMode, total_steps: usize) -> Self {
        Self {
            mode,
            ..Self::linear_decay(total_steps)
        }
    }

    pub fn sigma(&self, step: usize) -> f64 {
        match self.mode {
            NoiseMode::None => 0.0,
            NoiseMode::Constant => self.sigma_end,
            NoiseMode::LinearDecay => {
                if self.total_steps == 0 {
                    return self.sigma_end;
                }
                let frac = step.min(self.total_steps) as f64 / self.total_steps as f64;
                self.sigma_start + (self.sigma_end - self.sigma_start) * frac
            }
        }
    }
}
