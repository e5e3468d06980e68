use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, Mlp, MlpLayout, MlpTape};
use crate::envs::Policy;
use crate::error::{check_dim, check_finite, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Added inside the tanh log-Jacobian to keep it finite at saturation.
pub const TANH_EPS: f64 = 1e-6;

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal Gaussian over pre-squash actions, squashed by `tanh` into the
/// open action box. The trunk maps a state to `(mean, raw log-std)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianTanhPolicy {
    net: Mlp,
    state_dim: usize,
    action_dim: usize,
}

/// Everything a reparameterized policy sample needs for its reverse pass.
pub(crate) struct PolicySample {
    pub actions: Array2<f64>,
    pub log_probs: Array1<f64>,
    noise: Array2<f64>,
    log_std: Array2<f64>,
    raw_log_std: Array2<f64>,
    tape: MlpTape,
}

impl GaussianTanhPolicy {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut widths = vec![state_dim];
        widths.extend_from_slice(hidden);
        widths.push(2 * action_dim);
        Ok(Self {
            net: Mlp::new(MlpLayout::new(widths, activation)?, rng),
            state_dim,
            action_dim,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    /// Mean and clamped log-std of the pre-squash Gaussian.
    pub fn heads(&self, states: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        check_dim("policy state width", self.state_dim, states.ncols())?;
        let out = self.net.forward_batch(states)?;
        let m = self.action_dim;
        let mean = out.slice(s![.., ..m]).to_owned();
        let log_std = out
            .slice(s![.., m..])
            .mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        Ok((mean, log_std))
    }

    fn squash(
        u: &Array2<f64>,
        noise: &Array2<f64>,
        log_std: &Array2<f64>,
    ) -> (Array2<f64>, Array1<f64>) {
        let actions = u.mapv(f64::tanh);
        let mut log_probs = Array1::zeros(u.nrows());
        for i in 0..u.nrows() {
            let mut lp = 0.0;
            for j in 0..u.ncols() {
                let t = actions[[i, j]];
                let xi = noise[[i, j]];
                lp += -0.5 * xi * xi
                    - log_std[[i, j]]
                    - 0.5 * LOG_2PI
                    - (1.0 - t * t + TANH_EPS).ln();
            }
            log_probs[i] = lp;
        }
        (actions, log_probs)
    }

    /// `tanh(mean + std * noise)` and its log-density, for given standard-normal noise.
    pub fn actions_from_noise(
        &self,
        states: ArrayView2<f64>,
        noise: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        let (mean, log_std) = self.heads(states)?;
        check_dim("policy noise width", self.action_dim, noise.ncols())?;
        let u = &mean + &(log_std.mapv(f64::exp) * noise);
        Ok(Self::squash(&u, noise, &log_std))
    }

    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        states: ArrayView2<f64>,
        rng: &mut R,
    ) -> Result<(Array2<f64>, Array1<f64>)> {
        let noise = standard_normal(states.nrows(), self.action_dim, rng);
        self.actions_from_noise(states, &noise)
    }

    /// One squashed-Gaussian action and its log-probability.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64)> {
        check_finite("policy state", state)?;
        let s =
            ArrayView2::from_shape((1, state.len()), state).map_err(|_| crate::Error::Shape {
                context: "policy state",
                expected: self.state_dim,
                got: state.len(),
            })?;
        let (a, lp) = self.sample_batch(s, rng)?;
        Ok((a.row(0).to_vec(), lp[0]))
    }

    /// `log pi(a | s)` for an action strictly inside the box.
    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        check_dim("policy action", self.action_dim, action.len())?;
        let s = ArrayView2::from_shape((1, state.len()), state).expect("row");
        let a = ArrayView2::from_shape((1, action.len()), action).expect("row");
        Ok(self.log_prob_batch(s, a)?[0])
    }

    /// `log pi(a_i | s_i)` for every row; actions must lie strictly inside the box.
    pub fn log_prob_batch(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        check_dim("policy action width", self.action_dim, actions.ncols())?;
        check_dim("policy batch rows", states.nrows(), actions.nrows())?;
        let (mean, log_std) = self.heads(states)?;
        Ok(Array1::from_shape_fn(states.nrows(), |i| {
            let mut lp = 0.0;
            for j in 0..self.action_dim {
                let a = actions[[i, j]];
                let u = a.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh();
                let xi = (u - mean[[i, j]]) / log_std[[i, j]].exp();
                lp += -0.5 * xi * xi
                    - log_std[[i, j]]
                    - 0.5 * LOG_2PI
                    - (1.0 - a * a + TANH_EPS).ln();
            }
            lp
        }))
    }

    pub(crate) fn rsample(
        &self,
        states: ArrayView2<f64>,
        noise: Array2<f64>,
    ) -> Result<PolicySample> {
        check_dim("policy state width", self.state_dim, states.ncols())?;
        check_dim("policy noise width", self.action_dim, noise.ncols())?;
        let (out, tape) = self.net.layout().forward_tape(self.net.params(), states)?;
        let m = self.action_dim;
        let mean = out.slice(s![.., ..m]).to_owned();
        let raw_log_std = out.slice(s![.., m..]).to_owned();
        let log_std = raw_log_std.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let u = &mean + &(log_std.mapv(f64::exp) * &noise);
        let (actions, log_probs) = Self::squash(&u, &noise, &log_std);
        Ok(PolicySample {
            actions,
            log_probs,
            noise,
            log_std,
            raw_log_std,
            tape,
        })
    }

    /// Accumulates the parameter gradient of
    /// `sum_i (grad_actions_i . a_i + grad_log_probs_i * log pi(a_i|s_i))`
    /// through the reparameterized sample.
    pub(crate) fn backward(
        &self,
        sample: &PolicySample,
        grad_actions: &Array2<f64>,
        grad_log_probs: &Array1<f64>,
        grads: &mut [f64],
    ) {
        let (n, m) = sample.actions.dim();
        let mut g_mean = Array2::zeros((n, m));
        let mut g_raw = Array2::zeros((n, m));
        for i in 0..n {
            let w = grad_log_probs[i];
            for j in 0..m {
                let t = sample.actions[[i, j]];
                let one_minus = 1.0 - t * t;
                let g_u = grad_actions[[i, j]] * one_minus
                    + w * 2.0 * t * one_minus / (one_minus + TANH_EPS);
                g_mean[[i, j]] = g_u;
                let std = sample.log_std[[i, j]].exp();
                let raw = sample.raw_log_std[[i, j]];
                if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                    g_raw[[i, j]] = g_u * std * sample.noise[[i, j]] - w;
                }
            }
        }
        let g_out = concatenate![Axis(1), g_mean, g_raw];
        self.net
            .layout()
            .backward(self.net.params(), &sample.tape, g_out.view(), grads);
    }
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

impl Policy for GaussianTanhPolicy {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        Ok(self.sample_action(state, rng)?.0)
    }

    /// `tanh` of the Gaussian mean.
    fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        check_finite("policy state", state)?;
        let s = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("row");
        let (mean, _) = self.heads(s.view())?;
        Ok(mean.row(0).iter().map(|v| v.tanh()).collect())
    }
}
