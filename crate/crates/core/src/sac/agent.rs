use ndarray::Array1;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::buffer::{Batch, ReplayBuffer};
use super::critic::{policy_loss, q_loss, QPair};
use super::entropy::{EntropyCoeff, EntropyMode};
use super::policy::GaussianTanhPolicy;
use crate::diffcore::{Activation, AdamState};
use crate::envs::Policy;
use crate::error::{check_dim, check_finite, Result};

/// Supplies the reward of each transition in a batch.
pub trait RewardFn {
    fn rewards(&self, batch: &Batch) -> Result<Array1<f64>>;
}

/// The environment's own reward as recorded in the buffer.
#[derive(Clone, Copy, Debug, Default)]
pub struct EnvReward;

impl RewardFn for EnvReward {
    fn rewards(&self, batch: &Batch) -> Result<Array1<f64>> {
        Ok(batch.env_rewards.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacConfig {
    pub gamma: f64,
    /// Polyak rate of the target critics.
    pub tau: f64,
    pub batch_size: usize,
    pub policy_lr: f64,
    pub q_lr: f64,
    pub alpha_lr: f64,
    pub policy_hidden: Vec<usize>,
    pub q_hidden: Vec<usize>,
    pub alpha: f64,
    pub entropy_mode: EntropyMode,
    /// Defaults to minus the action dimension.
    pub target_entropy: Option<f64>,
    /// Update the policy before computing rewards and updating the critics.
    pub policy_first: bool,
}

impl SacConfig {
    pub fn desk() -> Self {
        Self {
            gamma: 0.9,
            tau: 0.005,
            batch_size: 256,
            policy_lr: 3e-4,
            q_lr: 3e-4,
            alpha_lr: 3e-4,
            policy_hidden: vec![64, 64],
            q_hidden: vec![64, 64],
            alpha: 1.0,
            entropy_mode: EntropyMode::Fixed,
            target_entropy: None,
            policy_first: true,
        }
    }

    pub fn paper() -> Self {
        Self {
            batch_size: 2048,
            policy_lr: 1e-4,
            q_lr: 3e-4,
            policy_hidden: vec![512, 512],
            q_hidden: vec![512, 512],
            ..Self::desk()
        }
    }
}

/// Diagnostics of one gradient update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub policy_loss: f64,
    pub alpha: f64,
    pub mean_reward: f64,
    pub mean_log_prob: f64,
}

/// Soft actor-critic learner: policy, twin critics, temperature and optimizers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    pub config: SacConfig,
    pub policy: GaussianTanhPolicy,
    pub q: QPair,
    pub entropy: EntropyCoeff,
    policy_opt: AdamState,
    q1_opt: AdamState,
    q2_opt: AdamState,
    updates: u64,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        config: SacConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let policy = GaussianTanhPolicy::new(
            state_dim,
            action_dim,
            &config.policy_hidden,
            Activation::Relu,
            rng,
        )?;
        let q = QPair::new(
            state_dim,
            action_dim,
            &config.q_hidden,
            Activation::LeakyRelu,
            rng,
        )?;
        let target = config.target_entropy.unwrap_or(-(action_dim as f64));
        let entropy =
            EntropyCoeff::new(config.alpha, config.entropy_mode, target, config.alpha_lr)?;
        Ok(Self {
            policy_opt: AdamState::new(policy.params().len(), config.policy_lr),
            q1_opt: AdamState::new(q.q1.params().len(), config.q_lr),
            q2_opt: AdamState::new(q.q2.params().len(), config.q_lr),
            policy,
            q,
            entropy,
            config,
            updates: 0,
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn alpha(&self) -> f64 {
        self.entropy.alpha()
    }

    fn policy_step<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        rng: &mut R,
        stats: &mut UpdateStats,
    ) -> Result<()> {
        let out = policy_loss(
            &self.policy,
            &self.q,
            batch.states.view(),
            self.entropy.alpha(),
            rng,
        )?;
        self.policy_opt.step(self.policy.params_mut(), &out.grad)?;
        let lp = out.log_probs.to_vec();
        self.entropy.tune(&lp)?;
        stats.policy_loss = out.loss;
        stats.mean_log_prob = lp.iter().sum::<f64>() / lp.len() as f64;
        Ok(())
    }

    fn critic_step<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        reward_fn: &dyn RewardFn,
        rng: &mut R,
        stats: &mut UpdateStats,
    ) -> Result<()> {
        let rewards = reward_fn.rewards(batch)?;
        check_dim("reward count", batch.len(), rewards.len())?;
        check_finite("reward", rewards.as_slice().expect("contiguous"))?;
        let out = q_loss(
            &self.policy,
            &self.q,
            batch,
            &rewards,
            self.config.gamma,
            self.entropy.alpha(),
            rng,
        )?;
        self.q1_opt.step(self.q.q1.params_mut(), &out.grad_q1)?;
        self.q2_opt.step(self.q.q2.params_mut(), &out.grad_q2)?;
        stats.q1_loss = out.loss_q1;
        stats.q2_loss = out.loss_q2;
        stats.mean_reward = rewards.mean().expect("non-empty");
        Ok(())
    }

    /// One update on a given batch. With `policy_first` the order is policy
    /// step, reward estimate, critic step; otherwise rewards and critics come
    /// first. Targets are soft-updated last.
    pub fn update_on_batch<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        reward_fn: &dyn RewardFn,
        rng: &mut R,
    ) -> Result<UpdateStats> {
        let mut stats = UpdateStats::default();
        if self.config.policy_first {
            self.policy_step(batch, rng, &mut stats)?;
            self.critic_step(batch, reward_fn, rng, &mut stats)?;
        } else {
            self.critic_step(batch, reward_fn, rng, &mut stats)?;
            self.policy_step(batch, rng, &mut stats)?;
        }
        self.q.soft_update(self.config.tau);
        self.updates += 1;
        stats.alpha = self.entropy.alpha();
        Ok(stats)
    }

    /// Samples a minibatch from `buffer` and updates on it.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        reward_fn: &dyn RewardFn,
        rng: &mut R,
    ) -> Result<UpdateStats> {
        let batch = buffer.sample(self.config.batch_size, rng)?;
        self.update_on_batch(&batch, reward_fn, rng)
    }
}

impl Policy for SacAgent {
    fn action_dim(&self) -> usize {
        self.policy.action_dim()
    }

    fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.policy.act(state, rng)
    }

    fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.policy.mean_action(state)
    }
}
