//! Comparison methods that share the SAC learner and flow machinery:
//!
//! * FORM: reward `log mu_E(s'|s) - log mu_pi(s'|s)` with an online effect
//!   model of the current policy, automatic entropy tuning, and selection by
//!   the windowed maximum of the estimated reward.
//! * Expert-only ablation: reward `log mu_E(s'|s)` alone.
//! * SAC on the true environment reward, as a reference.

use ndarray::Array1;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::flows::{ConditionalFlow, FlowSpec, FlowTrainer};
use crate::sac::{Batch, EntropyMode, GaussianTanhPolicy, ReplayBuffer, RewardFn, SacConfig};
use crate::soiltdm::{ClipSpec, Direction, ImitationReward};

fn clipped_logs(
    flow: &ConditionalFlow,
    clip: &ClipSpec,
    batch: &Batch,
    context: &'static str,
) -> Result<Array1<f64>> {
    let lp = flow.log_prob(batch.next_states.view(), batch.states.view())?;
    if let Some(&bad) = lp.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            context,
            value: bad,
        });
    }
    Ok(lp.mapv(|v| clip.apply(v)))
}

/// Expert effect model (frozen) and the online effect model of the policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectModelPair {
    pub expert_effect: ConditionalFlow,
    pub policy_effect: ConditionalFlow,
}

impl EffectModelPair {
    pub fn new<R: Rng + ?Sized>(
        expert_effect: ConditionalFlow,
        policy_spec: FlowSpec,
        rng: &mut R,
    ) -> Result<Self> {
        check_dim(
            "policy effect model width",
            expert_effect.dim(),
            policy_spec.dim,
        )?;
        check_dim(
            "policy effect model condition width",
            expert_effect.cond_dim(),
            policy_spec.cond_dim,
        )?;
        Ok(Self {
            policy_effect: ConditionalFlow::new(policy_spec, rng)?,
            expert_effect,
        })
    }
}

/// `clip(log mu_E(s'|s)) - clip(log mu_pi(s'|s))` per transition.
pub fn form_reward(pair: &EffectModelPair, clip: &ClipSpec, batch: &Batch) -> Result<Array1<f64>> {
    let e = clipped_logs(
        &pair.expert_effect,
        clip,
        batch,
        "expert effect log-density",
    )?;
    let p = clipped_logs(
        &pair.policy_effect,
        clip,
        batch,
        "policy effect log-density",
    )?;
    Ok(e - p)
}

/// `steps` maximum-likelihood updates of the policy effect model on replay
/// batches. Returns the per-step batch NLL.
pub fn train_effect_model<R: Rng + ?Sized>(
    pair: &mut EffectModelPair,
    trainer: &mut FlowTrainer,
    buffer: &ReplayBuffer,
    steps: usize,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if buffer.is_empty() {
        return Err(Error::Config(
            "cannot train an effect model on an empty buffer".into(),
        ));
    }
    (0..steps)
        .map(|_| {
            let b = buffer.sample(batch, rng)?;
            trainer.step(
                &mut pair.policy_effect,
                b.next_states.view(),
                b.states.view(),
            )
        })
        .collect()
}

/// `clip(log mu_E(s'|s))` per transition.
pub fn ablation_reward(
    expert_model: &ConditionalFlow,
    clip: &ClipSpec,
    batch: &Batch,
) -> Result<Array1<f64>> {
    clipped_logs(expert_model, clip, batch, "expert model log-density")
}

fn mean(v: &Array1<f64>) -> Result<f64> {
    v.mean()
        .ok_or_else(|| Error::Config("criterion needs a non-empty episode".into()))
}

/// FORM's online reward model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Form {
    pub pair: EffectModelPair,
    pub trainer: FlowTrainer,
    pub clip: ClipSpec,
}

impl Form {
    pub fn new(
        expert_effect: ConditionalFlow,
        policy_spec: FlowSpec,
        learning_rate: f64,
        clip: ClipSpec,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let pair = EffectModelPair::new(expert_effect, policy_spec, rng)?;
        let trainer = FlowTrainer::new(&pair.policy_effect, learning_rate, Some(100.0));
        Ok(Self {
            pair,
            trainer,
            clip,
        })
    }

    /// Desk effect-model architecture: small flow, exponent clamp 1.
    pub fn desk_spec(state_dim: usize) -> FlowSpec {
        FlowSpec {
            n_blocks: 4,
            hidden: 32,
            cond_hidden: 32,
            cond_features: 16,
            ..FlowSpec::desk(state_dim, state_dim, 1.0)
        }
    }

    /// SAC settings of FORM: automatic entropy tuning.
    pub fn sac_config(base: &SacConfig) -> SacConfig {
        SacConfig {
            entropy_mode: EntropyMode::Auto,
            ..base.clone()
        }
    }
}

impl RewardFn for Form {
    fn rewards(&self, batch: &Batch) -> Result<Array1<f64>> {
        form_reward(&self.pair, &self.clip, batch)
    }
}

impl ImitationReward for Form {
    fn method(&self) -> &'static str {
        "form"
    }

    fn direction(&self) -> Direction {
        Direction::Maximize
    }

    fn fit(
        &mut self,
        buffer: &ReplayBuffer,
        steps: usize,
        batch: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(f64, f64)> {
        let nll = train_effect_model(&mut self.pair, &mut self.trainer, buffer, steps, batch, rng)?;
        let m = if nll.is_empty() {
            f64::NAN
        } else {
            nll.iter().sum::<f64>() / nll.len() as f64
        };
        Ok((m, f64::NAN))
    }

    fn criterion(&self, recent: &Batch, _policy: &GaussianTanhPolicy) -> Result<f64> {
        mean(&self.rewards(recent)?)
    }
}

/// Imitation with the expert transition model's log-likelihood as reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertOnly {
    pub expert_model: ConditionalFlow,
    pub clip: ClipSpec,
}

impl RewardFn for ExpertOnly {
    fn rewards(&self, batch: &Batch) -> Result<Array1<f64>> {
        ablation_reward(&self.expert_model, &self.clip, batch)
    }
}

impl ImitationReward for ExpertOnly {
    fn method(&self) -> &'static str {
        "ablation_expert_only"
    }

    fn direction(&self) -> Direction {
        Direction::Maximize
    }

    fn fit(
        &mut self,
        _: &ReplayBuffer,
        _: usize,
        _: usize,
        _: &mut dyn RngCore,
    ) -> Result<(f64, f64)> {
        Ok((f64::NAN, f64::NAN))
    }

    fn criterion(&self, recent: &Batch, _policy: &GaussianTanhPolicy) -> Result<f64> {
        mean(&self.rewards(recent)?)
    }
}

/// SAC on the environment's own reward; the criterion is the mean reward of
/// the latest episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrueReward;

impl RewardFn for TrueReward {
    fn rewards(&self, batch: &Batch) -> Result<Array1<f64>> {
        Ok(batch.env_rewards.clone())
    }
}

impl ImitationReward for TrueReward {
    fn method(&self) -> &'static str {
        "sac_env_reward"
    }

    fn direction(&self) -> Direction {
        Direction::Maximize
    }

    fn fit(
        &mut self,
        _: &ReplayBuffer,
        _: usize,
        _: usize,
        _: &mut dyn RngCore,
    ) -> Result<(f64, f64)> {
        Ok((f64::NAN, f64::NAN))
    }

    fn criterion(&self, recent: &Batch, _policy: &GaussianTanhPolicy) -> Result<f64> {
        mean(&recent.env_rewards)
    }
}
