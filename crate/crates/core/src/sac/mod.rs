//! Soft actor-critic with twin critics, Polyak targets, a tanh-squashed
//! Gaussian policy and a fixed or automatically tuned temperature. Rewards
//! come from a [`RewardFn`], so imitation rewards and the environment reward
//! drive the same learner.

mod agent;
mod buffer;
mod critic;
mod entropy;
mod policy;

pub use agent::{EnvReward, RewardFn, SacAgent, SacConfig, UpdateStats};
pub use buffer::{Batch, ReplayBuffer};
pub use critic::{
    policy_loss, policy_loss_with_noise, q_loss, q_loss_with_targets, soft_targets,
    PolicyLossOutput, QLossOutput, QPair,
};
pub use entropy::{EntropyCoeff, EntropyMode};
pub use policy::{GaussianTanhPolicy, LOG_STD_MAX, LOG_STD_MIN, TANH_EPS};
