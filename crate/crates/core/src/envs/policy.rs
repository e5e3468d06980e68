use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{parallel_rollouts, Environment};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::flows::{
    train_mle, ConditionalFlow, FlowDataset, FlowSpec, NoiseSchedule, TrainOptions,
};

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// A (possibly stochastic) state-feedback controller.
pub trait Policy: Sync {
    fn action_dim(&self) -> usize;
    fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>>;
    /// A noise-free action for evaluation.
    fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>>;
}

/// Evaluates a policy through its noise-free action.
pub struct Deterministic<'a, P: Policy + ?Sized>(pub &'a P);

impl<P: Policy + ?Sized> Policy for Deterministic<'_, P> {
    fn action_dim(&self) -> usize {
        self.0.action_dim()
    }

    fn act(&self, state: &[f64], _rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.0.mean_action(state)
    }

    fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.0.mean_action(state)
    }
}

/// `a = -gain * s + eta`, `eta ~ N(0, diag(std^2))`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianPolicy {
    pub gain: DMatrix<f64>,
    pub std: Vec<f64>,
}

impl LinearGaussianPolicy {
    pub fn new(gain: DMatrix<f64>, std: Vec<f64>) -> Result<Self> {
        check_dim("policy noise", gain.nrows(), std.len())?;
        if std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config(
                "policy noise std must be non-negative".into(),
            ));
        }
        Ok(Self { gain, std })
    }

    pub fn state_dim(&self) -> usize {
        self.gain.ncols()
    }

    /// Exact `log pi(a | s)`; requires positive noise.
    pub fn logpdf(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let mean = self.mean_action(state)?;
        check_dim("policy action", mean.len(), action.len())?;
        let mut lp = 0.0;
        for ((a, m), s) in action.iter().zip(&mean).zip(&self.std) {
            if *s <= 0.0 {
                return Err(Error::Config("deterministic policy has no density".into()));
            }
            let z = (a - m) / s;
            lp += -0.5 * z * z - s.ln() - 0.5 * LOG_2PI;
        }
        Ok(lp)
    }
}

impl Policy for LinearGaussianPolicy {
    fn action_dim(&self) -> usize {
        self.gain.nrows()
    }

    fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let mut a = self.mean_action(state)?;
        for (ai, s) in a.iter_mut().zip(&self.std) {
            *ai += s * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(a)
    }

    fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        check_dim("policy state", self.state_dim(), state.len())?;
        check_finite("policy state", state)?;
        Ok((-&self.gain * DVector::from_column_slice(state))
            .iter()
            .copied()
            .collect())
    }
}

/// Uniform actions over the box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UniformRandomPolicy {
    pub action_dim: usize,
}

impl Policy for UniformRandomPolicy {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn act(&self, _state: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        Ok((0..self.action_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect())
    }

    fn mean_action(&self, _state: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.action_dim])
    }
}

/// Stochastic policy `a ~ flow(. | s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowPolicy {
    pub flow: ConditionalFlow,
}

impl Policy for FlowPolicy {
    fn action_dim(&self) -> usize {
        self.flow.dim()
    }

    fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let cond = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("row");
        Ok(self.flow.sample(cond.view(), rng)?.row(0).to_vec())
    }

    /// Image of the latent origin.
    fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let cond = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("row");
        let z = Array2::zeros((1, self.flow.dim()));
        Ok(self.flow.inverse(z.view(), cond.view())?.row(0).to_vec())
    }
}

/// Fits a conditional-flow policy to `(state, action)` pairs produced by
/// `teacher` on `episodes` rollouts.
pub fn distill_flow_policy<E: Environment + ?Sized, P: Policy + ?Sized, R: Rng + ?Sized>(
    env: &E,
    teacher: &P,
    episodes: usize,
    spec: FlowSpec,
    options: &TrainOptions,
    seed: u64,
    rng: &mut R,
) -> Result<FlowPolicy> {
    check_dim("flow policy width", env.action_dim(), spec.dim)?;
    check_dim(
        "flow policy condition width",
        env.state_dim(),
        spec.cond_dim,
    )?;
    let trajs = parallel_rollouts(env, teacher, episodes, env.horizon(), seed)?;
    let n: usize = trajs.iter().map(|t| t.len()).sum();
    let mut x = Array2::zeros((n, env.action_dim()));
    let mut cond = Array2::zeros((n, env.state_dim()));
    for (i, tr) in trajs.iter().flat_map(|t| &t.transitions).enumerate() {
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&tr.action));
        cond.row_mut(i)
            .assign(&ndarray::ArrayView1::from(&tr.state));
    }
    let mut flow = ConditionalFlow::new(spec, rng)?;
    train_mle(
        &mut flow,
        &FlowDataset::new(x, cond)?,
        &NoiseSchedule::none(),
        options,
        rng,
    )?;
    Ok(FlowPolicy { flow })
}
