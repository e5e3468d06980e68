use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::flow::ConditionalFlow;
use super::schedule::NoiseSchedule;
use crate::diffcore::{clip_grad_norm, AdamState};
use crate::error::{check_dim, Error, Result};

/// Paired samples `(x, cond)` for conditional density estimation.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowDataset {
    pub x: Array2<f64>,
    pub cond: Array2<f64>,
}

impl FlowDataset {
    pub fn new(x: Array2<f64>, cond: Array2<f64>) -> Result<Self> {
        check_dim("dataset condition rows", x.nrows(), cond.nrows())?;
        Ok(Self { x, cond })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    /// Uniform minibatch without replacement (the whole set when `batch >= len`).
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> (Array2<f64>, Array2<f64>) {
        if batch >= self.len() {
            return (self.x.clone(), self.cond.clone());
        }
        let idx = index::sample(rng, self.len(), batch).into_vec();
        (
            self.x.select(Axis(0), &idx),
            self.cond.select(Axis(0), &idx),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    /// Gradient-norm cap; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 256,
            learning_rate: 1e-3,
            max_grad_norm: Some(100.0),
        }
    }
}

/// Per-step mean NLL of the (noised) training batches.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub nll: Vec<f64>,
}

/// Adam state bound to one flow, for incremental maximum-likelihood training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowTrainer {
    pub adam: AdamState,
    pub max_grad_norm: Option<f64>,
}

impl FlowTrainer {
    pub fn new(flow: &ConditionalFlow, learning_rate: f64, max_grad_norm: Option<f64>) -> Self {
        Self {
            adam: AdamState::new(flow.n_params(), learning_rate),
            max_grad_norm,
        }
    }

    /// One MLE step. Initializes ActNorm from this batch if it has not been
    /// initialized yet. Returns the batch NLL before the update.
    pub fn step(
        &mut self,
        flow: &mut ConditionalFlow,
        x: ArrayView2<f64>,
        cond: ArrayView2<f64>,
    ) -> Result<f64> {
        if x.nrows() == 0 {
            return Err(Error::Config(
                "cannot train a flow on an empty batch".into(),
            ));
        }
        if !flow.actnorm_initialized() {
            flow.initialize_actnorm(x, cond)?;
        }
        let (nll, mut grads) = flow.nll_and_grad(x, cond)?;
        if let Some(max_norm) = self.max_grad_norm {
            clip_grad_norm(&mut grads, max_norm);
        }
        self.adam.step(flow.params_mut(), &grads)?;
        Ok(nll)
    }
}

fn add_noise<R: Rng + ?Sized>(a: &mut Array2<f64>, sigma: f64, rng: &mut R) {
    if sigma > 0.0 {
        a.mapv_inplace(|v| v + sigma * rng.sample::<f64, _>(StandardNormal));
    }
}

/// Maximum-likelihood training on `(x + e, cond + e')` with `e, e' ~ N(0, sigma(t)^2 I)`.
pub fn train_mle<R: Rng + ?Sized>(
    flow: &mut ConditionalFlow,
    dataset: &FlowDataset,
    schedule: &NoiseSchedule,
    options: &TrainOptions,
    rng: &mut R,
) -> Result<TrainHistory> {
    if dataset.is_empty() {
        return Err(Error::Config(
            "cannot train a flow on an empty dataset".into(),
        ));
    }
    check_dim("dataset width", flow.dim(), dataset.x.ncols())?;
    check_dim(
        "dataset condition width",
        flow.cond_dim(),
        dataset.cond.ncols(),
    )?;
    let mut trainer = FlowTrainer::new(flow, options.learning_rate, options.max_grad_norm);
    let mut history = TrainHistory::default();
    for step in 0..options.steps {
        let (mut x, mut cond) = dataset.sample_batch(options.batch, rng);
        let sigma = schedule.sigma(step);
        add_noise(&mut x, sigma, rng);
        add_noise(&mut cond, sigma, rng);
        history.nll.push(trainer.step(flow, x.view(), cond.view())?);
    }
    Ok(history)
}

/// Mean log-likelihood over the dataset without noise.
pub fn heldout_loglik(flow: &ConditionalFlow, dataset: &FlowDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let lp = flow.log_prob(dataset.x.view(), dataset.cond.view())?;
    Ok(lp.mean().expect("non-empty"))
}
