//! State-only imitation by matching state-transition trajectory distributions.
//!
//! The imitation reward of a transition `(s, a, s')` combines three
//! conditional densities: the learned inverse model `mu_eta(a|s',s)`, the
//! learned forward model `mu_phi(s'|a,s)` and the frozen expert transition
//! model `mu_E(s'|s)`. Each log term is clipped before use. The same terms,
//! plus `log pi(a|s)`, give a per-epoch estimate of the KL divergence between
//! the policy's and the expert's transition distributions, which selects the
//! final checkpoint.

mod dynamics;
mod reward;
mod select;
mod train;

pub use dynamics::{train_dynamics, DynamicsConfig, DynamicsTrace, DynamicsTrainers};
pub use reward::{
    compute_reward, kld_estimate, ClipSpec, DensityTriple, LogTerms, PolicyDensity, RewardReport,
    TransitionDensities,
};
pub use select::{select_by, select_checkpoint, Direction, KldTrace};
pub use train::{
    expert_model_loglik, expert_transitions, run_imitation, train_expert_model, train_loop,
    EpochMetrics, ExpertModelConfig, ImitationReward, LoopConfig, RunResult, SoilTdm,
    SoilTdmConfig, SoilTdmRun,
};
