//! Dense networks with hand-written reverse-mode gradients, Adam, and
//! finite-difference checks.

mod adam;
pub mod gradcheck;
mod mlp;

pub use adam::{clip_grad_norm, AdamState};
pub use mlp::{gradients, Activation, Mlp, MlpLayout, MlpTape, LEAKY_RELU_SLOPE};
