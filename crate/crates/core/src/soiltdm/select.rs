use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether a convergence criterion improves downwards (a divergence) or
/// upwards (an estimated reward).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Minimize,
    Maximize,
}

/// Per-epoch raw criterion values with trailing-window smoothing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KldTrace {
    pub raw: Vec<f64>,
    pub window: usize,
}

impl KldTrace {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("smoothing window must be positive".into()));
        }
        Ok(Self {
            raw: Vec::new(),
            window,
        })
    }

    pub fn from_values(raw: Vec<f64>, window: usize) -> Result<Self> {
        let mut t = Self::new(window)?;
        t.raw = raw;
        Ok(t)
    }

    pub fn push(&mut self, value: f64) {
        self.raw.push(value);
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Mean of the last `window` raw values up to and including `epoch`
    /// (fewer at the start of the trace).
    pub fn windowed_at(&self, epoch: usize) -> f64 {
        let lo = (epoch + 1).saturating_sub(self.window);
        let vals = &self.raw[lo..=epoch];
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    pub fn windowed(&self) -> Vec<f64> {
        (0..self.raw.len()).map(|e| self.windowed_at(e)).collect()
    }
}

/// Index of the best windowed value; ties go to the later checkpoint.
pub fn select_by(trace: &KldTrace, direction: Direction) -> Result<usize> {
    if trace.is_empty() {
        return Err(Error::Config("cannot select from an empty trace".into()));
    }
    let w = trace.windowed();
    let mut best = 0;
    for (i, &v) in w.iter().enumerate() {
        if v.is_nan() {
            return Err(Error::Numeric {
                context: "windowed selection criterion",
                value: v,
            });
        }
        let better_or_equal = match direction {
            Direction::Minimize => v <= w[best],
            Direction::Maximize => v >= w[best],
        };
        if better_or_equal {
            best = i;
        }
    }
    Ok(best)
}

/// Checkpoint with the lowest windowed KL estimate.
pub fn select_checkpoint(trace: &KldTrace) -> Result<usize> {
    select_by(trace, Direction::Minimize)
}
