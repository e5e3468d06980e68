use ndarray::{concatenate, Array1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flows::{ConditionalFlow, FlowSpec};
use crate::sac::{Batch, GaussianTanhPolicy};

/// Bounds applied to every log-density term before it enters a reward or
/// the KL estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub low: f64,
    pub high: f64,
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self {
            low: -15.0,
            high: 1e9,
        }
    }
}

impl ClipSpec {
    /// No clipping at all.
    pub fn disabled() -> Self {
        Self {
            low: f64::NEG_INFINITY,
            high: f64::INFINITY,
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        v.clamp(self.low, self.high)
    }

    fn apply_all(&self, v: &Array1<f64>) -> Array1<f64> {
        v.mapv(|x| self.apply(x))
    }
}

/// Batched log-densities of the three transition models:
/// `log mu_E(s'|s)`, `log mu_phi(s'|a,s)` and `log mu_eta(a|s',s)`.
pub trait TransitionDensities {
    fn log_expert(
        &self,
        states: ArrayView2<f64>,
        next_states: ArrayView2<f64>,
    ) -> Result<Array1<f64>>;
    fn log_forward(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        next_states: ArrayView2<f64>,
    ) -> Result<Array1<f64>>;
    fn log_inverse(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        next_states: ArrayView2<f64>,
    ) -> Result<Array1<f64>>;
}

/// Batched `log pi(a | s)`.
pub trait PolicyDensity {
    fn log_probs(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>>;
}

impl PolicyDensity for GaussianTanhPolicy {
    fn log_probs(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.log_prob_batch(states, actions)
    }
}

/// Expert transition model (frozen) plus the learned forward and inverse
/// dynamics models. Conditions are `s` for the expert model, `(s, a)` for
/// the forward model and `(s, s')` for the inverse model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityTriple {
    pub expert: ConditionalFlow,
    pub forward: ConditionalFlow,
    pub inverse: ConditionalFlow,
}

impl DensityTriple {
    pub fn new<R: Rng + ?Sized>(
        expert: ConditionalFlow,
        forward: FlowSpec,
        inverse: FlowSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let d = expert.dim();
        check_dim("expert model condition width", d, expert.cond_dim())?;
        check_dim("forward model width", d, forward.dim)?;
        check_dim("inverse model condition width", 2 * d, inverse.cond_dim)?;
        check_dim(
            "forward model condition width",
            d + inverse.dim,
            forward.cond_dim,
        )?;
        Ok(Self {
            expert,
            forward: ConditionalFlow::new(forward, rng)?,
            inverse: ConditionalFlow::new(inverse, rng)?,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.expert.dim()
    }

    pub fn action_dim(&self) -> usize {
        self.inverse.dim()
    }
}

impl TransitionDensities for DensityTriple {
    fn log_expert(
        &self,
        states: ArrayView2<f64>,
        next_states: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        self.expert.log_prob(next_states, states)
    }

    fn log_forward(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        next_states: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        check_dim("forward model batch rows", states.nrows(), actions.nrows())?;
        self.forward
            .log_prob(next_states, concatenate![Axis(1), states, actions].view())
    }

    fn log_inverse(
        &self,
        states: ArrayView2<f64>,
        actions: ArrayView2<f64>,
        next_states: ArrayView2<f64>,
    ) -> Result<Array1<f64>> {
        check_dim(
            "inverse model batch rows",
            states.nrows(),
            next_states.nrows(),
        )?;
        self.inverse
            .log_prob(actions, concatenate![Axis(1), states, next_states].view())
    }
}

/// The three per-transition log terms.
#[derive(Clone, Debug, PartialEq)]
pub struct LogTerms {
    pub inverse: Array1<f64>,
    pub forward: Array1<f64>,
    pub expert: Array1<f64>,
}

impl LogTerms {
    pub fn evaluate<M: TransitionDensities + ?Sized>(models: &M, batch: &Batch) -> Result<Self> {
        let s = batch.states.view();
        let a = batch.actions.view();
        let s2 = batch.next_states.view();
        let terms = Self {
            inverse: models.log_inverse(s, a, s2)?,
            forward: models.log_forward(s, a, s2)?,
            expert: models.log_expert(s, s2)?,
        };
        for (context, v) in [
            ("inverse model log-density", &terms.inverse),
            ("forward model log-density", &terms.forward),
            ("expert model log-density", &terms.expert),
        ] {
            check_dim(context, batch.len(), v.len())?;
            if let Some(&bad) = v.iter().find(|x| !x.is_finite()) {
                return Err(Error::Numeric {
                    context,
                    value: bad,
                });
            }
        }
        Ok(terms)
    }

    pub fn clipped(&self, clip: &ClipSpec) -> Self {
        Self {
            inverse: clip.apply_all(&self.inverse),
            forward: clip.apply_all(&self.forward),
            expert: clip.apply_all(&self.expert),
        }
    }
}

/// Rewards of a batch together with the raw and clipped log terms.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardReport {
    pub rewards: Array1<f64>,
    pub raw: LogTerms,
    pub clipped: LogTerms,
}

/// `r = clip(log mu_eta(a|s',s)) - clip(log mu_phi(s'|a,s)) + clip(log mu_E(s'|s))`
/// for every transition of the batch. The stored `s'` is the single sample
/// standing in for the expectation over the environment transition.
pub fn compute_reward<M: TransitionDensities + ?Sized>(
    models: &M,
    clip: &ClipSpec,
    batch: &Batch,
) -> Result<RewardReport> {
    let raw = LogTerms::evaluate(models, batch)?;
    let clipped = raw.clipped(clip);
    let rewards = &clipped.inverse - &clipped.forward + &clipped.expert;
    Ok(RewardReport {
        rewards,
        raw,
        clipped,
    })
}

/// Estimate of `E[log mu_phi(s'|a,s) + log pi(a|s) - log mu_eta(a|s',s) - log mu_E(s'|s)]`
/// over policy transitions, with the three model terms clipped.
///
/// Without weights this is the sample mean over the batch. With weights it
/// is `sum_i w_i * integrand_i`, which turns an enumerated set of
/// transitions and their probability masses into an exact expectation.
pub fn kld_estimate<M, P>(
    models: &M,
    policy: &P,
    clip: &ClipSpec,
    batch: &Batch,
    weights: Option<&[f64]>,
) -> Result<f64>
where
    M: TransitionDensities + ?Sized,
    P: PolicyDensity + ?Sized,
{
    if batch.is_empty() {
        return Err(Error::Config("KL estimate needs a non-empty batch".into()));
    }
    let terms = LogTerms::evaluate(models, batch)?.clipped(clip);
    let log_pi = policy.log_probs(batch.states.view(), batch.actions.view())?;
    check_dim("policy log-density count", batch.len(), log_pi.len())?;
    let integrand = &terms.forward + &log_pi - &terms.inverse - &terms.expert;
    let value = match weights {
        None => integrand.mean().expect("non-empty"),
        Some(w) => {
            check_dim("KL weights", batch.len(), w.len())?;
            integrand.iter().zip(w).map(|(x, w)| x * w).sum()
        }
    };
    if !value.is_finite() {
        return Err(Error::Numeric {
            context: "KL estimate",
            value,
        });
    }
    Ok(value)
}
