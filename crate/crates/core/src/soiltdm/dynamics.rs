use ndarray::{concatenate, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::reward::DensityTriple;
use crate::error::{Error, Result};
use crate::flows::{FlowSpec, FlowTrainer};
use crate::sac::ReplayBuffer;

/// Architecture and optimizer of the forward and inverse dynamics models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub forward: FlowSpec,
    pub inverse: FlowSpec,
    pub learning_rate: f64,
    pub max_grad_norm: Option<f64>,
}

impl DynamicsConfig {
    /// Small flows with exponent clamp 1.
    pub fn desk(state_dim: usize, action_dim: usize) -> Self {
        let small = |dim, cond| FlowSpec {
            n_blocks: 4,
            hidden: 32,
            cond_hidden: 32,
            cond_features: 16,
            ..FlowSpec::desk(dim, cond, 1.0)
        };
        Self {
            forward: small(state_dim, state_dim + action_dim),
            inverse: small(action_dim, 2 * state_dim),
            learning_rate: 1e-3,
            max_grad_norm: Some(100.0),
        }
    }

    /// 16 blocks of width 64, with the inverse model's condition encoder widened to 256.
    pub fn paper(state_dim: usize, action_dim: usize) -> Self {
        let mut inverse = FlowSpec::full(action_dim, 2 * state_dim, 64, 1.0);
        inverse.cond_hidden = 256;
        Self {
            forward: FlowSpec::full(state_dim, state_dim + action_dim, 64, 1.0),
            inverse,
            learning_rate: 1e-4,
            max_grad_norm: Some(100.0),
        }
    }
}

/// Optimizer state of the two learned dynamics models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsTrainers {
    pub forward: FlowTrainer,
    pub inverse: FlowTrainer,
}

impl DynamicsTrainers {
    pub fn new(models: &DensityTriple, learning_rate: f64, max_grad_norm: Option<f64>) -> Self {
        Self {
            forward: FlowTrainer::new(&models.forward, learning_rate, max_grad_norm),
            inverse: FlowTrainer::new(&models.inverse, learning_rate, max_grad_norm),
        }
    }
}

/// Per-step batch NLL of the forward and inverse models.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DynamicsTrace {
    pub forward_nll: Vec<f64>,
    pub inverse_nll: Vec<f64>,
}

impl DynamicsTrace {
    /// Mean NLL of the last `n` steps of each model.
    pub fn tail_means(&self, n: usize) -> (f64, f64) {
        let tail = |v: &[f64]| {
            let k = n.min(v.len());
            if k == 0 {
                f64::NAN
            } else {
                v[v.len() - k..].iter().sum::<f64>() / k as f64
            }
        };
        (tail(&self.forward_nll), tail(&self.inverse_nll))
    }
}

/// `steps` maximum-likelihood updates of the forward and inverse models on
/// uniform replay batches. The expert model is not touched.
pub fn train_dynamics<R: Rng + ?Sized>(
    models: &mut DensityTriple,
    trainers: &mut DynamicsTrainers,
    buffer: &ReplayBuffer,
    steps: usize,
    batch: usize,
    rng: &mut R,
) -> Result<DynamicsTrace> {
    if buffer.is_empty() {
        return Err(Error::Config(
            "cannot train dynamics models on an empty buffer".into(),
        ));
    }
    let mut trace = DynamicsTrace::default();
    for _ in 0..steps {
        let b = buffer.sample(batch, rng)?;
        let fwd_cond = concatenate![Axis(1), b.states, b.actions];
        let inv_cond = concatenate![Axis(1), b.states, b.next_states];
        trace.forward_nll.push(trainers.forward.step(
            &mut models.forward,
            b.next_states.view(),
            fwd_cond.view(),
        )?);
        trace.inverse_nll.push(trainers.inverse.step(
            &mut models.inverse,
            b.actions.view(),
            inv_cond.view(),
        )?);
    }
    Ok(trace)
}
