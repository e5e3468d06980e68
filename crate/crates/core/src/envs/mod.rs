//! Continuous-control environments whose transition densities are known in
//! closed form, together with experts, rollouts and dataset files.
//!
//! Every environment has the form `s' = f(s, clip(a)) + e` with Gaussian `e`,
//! so `transition_logpdf` is exact. Actions live in the box `[-1, 1]^m`;
//! out-of-box actions are clipped and the transition is flagged.

mod dataset;
mod lingauss;
mod lqr;
mod noise;
mod pendulum;
mod pointmass;
mod policy;
mod rollout;

pub use dataset::{gen_expert_dataset, Episode, ExpertDataset, DATASET_FORMAT_VERSION};
pub use lingauss::LinGaussEnv;
pub use lqr::{discounted_lqr, lqr_expert, spectral_radius, stationary_covariance, LqrSolution};
pub use noise::GaussianNoise;
pub use pendulum::PendulumEnv;
pub use pointmass::PointMass2D;
pub use policy::{
    distill_flow_policy, Deterministic, FlowPolicy, LinearGaussianPolicy, Policy,
    UniformRandomPolicy,
};
pub use rollout::{episode_rng, evaluate_returns, parallel_rollouts, rollout, Trajectory};

use rand::RngCore;

use crate::error::{check_dim, check_finite, Error, Result};

pub const ACTION_LOW: f64 = -1.0;
pub const ACTION_HIGH: f64 = 1.0;

/// One environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// The action actually applied (after clipping to the box).
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub env_reward: f64,
    /// Last step of the episode (horizon reached).
    pub done: bool,
    /// True environment termination; value bootstrapping stops here. The
    /// bundled environments only truncate, so this is always false for them.
    pub terminal: bool,
    /// The requested action was outside the box.
    pub clipped: bool,
    pub step_index: usize,
}

/// Clips every component into the action box. Returns whether anything changed.
pub fn clip_action(action: &mut [f64]) -> bool {
    let mut clipped = false;
    for a in action.iter_mut() {
        let c = a.clamp(ACTION_LOW, ACTION_HIGH);
        clipped |= c != *a;
        *a = c;
    }
    clipped
}

pub trait Environment: Send + Sync {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn sample_start(&self, rng: &mut dyn RngCore) -> Vec<f64>;
    /// Noise-free successor of `state` under an in-box `action`.
    fn drift(&self, state: &[f64], action: &[f64]) -> Vec<f64>;
    fn noise(&self) -> &GaussianNoise;
    fn reward(&self, state: &[f64], action: &[f64], next_state: &[f64]) -> f64;

    /// Samples one transition. `step_index` is the position within the episode.
    fn step(
        &self,
        state: &[f64],
        action: &[f64],
        step_index: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Transition> {
        check_dim("environment state", self.state_dim(), state.len())?;
        check_dim("environment action", self.action_dim(), action.len())?;
        check_finite("environment state", state)?;
        check_finite("environment action", action)?;
        let mut applied = action.to_vec();
        let clipped = clip_action(&mut applied);
        let mut next_state = self.drift(state, &applied);
        for (x, e) in next_state.iter_mut().zip(self.noise().sample(rng)) {
            *x += e;
        }
        let env_reward = self.reward(state, &applied, &next_state);
        if !env_reward.is_finite() {
            return Err(Error::Numeric {
                context: "environment reward",
                value: env_reward,
            });
        }
        Ok(Transition {
            state: state.to_vec(),
            action: applied,
            next_state,
            env_reward,
            done: step_index + 1 >= self.horizon(),
            terminal: false,
            clipped,
            step_index,
        })
    }

    /// Exact `log p(s' | s, a)`; the action is clipped to the box first.
    fn transition_logpdf(&self, state: &[f64], action: &[f64], next_state: &[f64]) -> Result<f64> {
        check_dim("environment state", self.state_dim(), state.len())?;
        check_dim("environment action", self.action_dim(), action.len())?;
        check_dim("environment next state", self.state_dim(), next_state.len())?;
        check_finite("environment action", action)?;
        let mut applied = action.to_vec();
        clip_action(&mut applied);
        let mean = self.drift(state, &applied);
        let residual: Vec<f64> = next_state.iter().zip(&mean).map(|(x, m)| x - m).collect();
        self.noise().logpdf(&residual)
    }
}

/// The bundled environments, selectable by name.
#[derive(Clone, Debug)]
pub enum EnvKind {
    LinGauss(LinGaussEnv),
    PointMass(PointMass2D),
    Pendulum(PendulumEnv),
}

impl EnvKind {
    pub const NAMES: [&'static str; 3] = ["lingauss", "pointmass2d", "pendulum"];

    /// Default instance of a named environment.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "lingauss" => Ok(EnvKind::LinGauss(LinGaussEnv::standard()?)),
            "pointmass2d" => Ok(EnvKind::PointMass(PointMass2D::standard()?)),
            "pendulum" => Ok(EnvKind::Pendulum(PendulumEnv::standard()?)),
            other => Err(Error::Config(format!(
                "unknown environment '{other}' (expected one of {:?})",
                Self::NAMES
            ))),
        }
    }

    fn inner(&self) -> &dyn Environment {
        match self {
            EnvKind::LinGauss(e) => e,
            EnvKind::PointMass(e) => e,
            EnvKind::Pendulum(e) => e,
        }
    }
}

impl Environment for EnvKind {
    fn name(&self) -> &'static str {
        self.inner().name()
    }
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner().action_dim()
    }
    fn horizon(&self) -> usize {
        self.inner().horizon()
    }
    fn sample_start(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.inner().sample_start(rng)
    }
    fn drift(&self, state: &[f64], action: &[f64]) -> Vec<f64> {
        self.inner().drift(state, action)
    }
    fn noise(&self) -> &GaussianNoise {
        self.inner().noise()
    }
    fn reward(&self, state: &[f64], action: &[f64], next_state: &[f64]) -> f64 {
        self.inner().reward(state, action, next_state)
    }
}
