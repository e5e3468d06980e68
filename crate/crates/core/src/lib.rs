//! State-only imitation learning by trajectory distribution matching.
//!
//! The crate is organised bottom-up:
//!
//! * [`diffcore`]: dense networks, reverse-mode gradients, Adam.
//! * [`flows`]: conditional RealNVP density models.
//! * [`envs`]: analytic control environments with exact transition densities.
//! * [`sac`]: soft actor-critic driven by a pluggable reward.
//! * [`soiltdm`]: the three-density reward, KL estimator, training loop and
//!   checkpoint selection.
//! * [`baselines`]: FORM and the expert-model-only ablation.
//! * [`oracle`]: exact tabular enumeration of the KL identities.
//! * [`harness`]: configuration, run directories, metrics, plots and the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub(crate) mod codec;
pub mod diffcore;
pub mod envs;
pub mod error;
pub mod flows;
pub mod harness;
pub mod oracle;
pub mod sac;
pub mod soiltdm;

pub use error::{Error, Result};
