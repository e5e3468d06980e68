use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExpertConfig, ExpertKind};
use crate::baselines::TrueReward;
use crate::envs::{
    distill_flow_policy, evaluate_returns, lqr_expert, EnvKind, Environment, FlowPolicy,
    LinearGaussianPolicy, Policy,
};
use crate::error::{Error, Result};
use crate::flows::{FlowSpec, TrainOptions};
use crate::sac::{EntropyMode, GaussianTanhPolicy};
use crate::soiltdm::{run_imitation, LoopConfig};

/// A stored expert policy of any supported kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ExpertPolicy {
    /// `a = -gain * s + noise`; `gain` is row-major `action_dim x state_dim`.
    Linear {
        action_dim: usize,
        state_dim: usize,
        gain: Vec<f64>,
        std: Vec<f64>,
    },
    Flow(FlowPolicy),
    Sac(GaussianTanhPolicy),
}

impl ExpertPolicy {
    pub fn from_linear(p: &LinearGaussianPolicy) -> Self {
        let (rows, cols) = p.gain.shape();
        let gain = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .map(|(i, j)| p.gain[(i, j)])
            .collect();
        ExpertPolicy::Linear {
            action_dim: rows,
            state_dim: cols,
            gain,
            std: p.std.clone(),
        }
    }

    fn linear(&self) -> Option<LinearGaussianPolicy> {
        match self {
            ExpertPolicy::Linear {
                action_dim,
                state_dim,
                gain,
                std,
            } => Some(LinearGaussianPolicy {
                gain: DMatrix::from_row_slice(*action_dim, *state_dim, gain),
                std: std.clone(),
            }),
            _ => None,
        }
    }

    fn with<T>(&self, f: impl FnOnce(&dyn Policy) -> T) -> T {
        match self {
            ExpertPolicy::Linear { .. } => f(&self.linear().expect("linear expert")),
            ExpertPolicy::Flow(p) => f(p),
            ExpertPolicy::Sac(p) => f(p),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ExpertPolicy::Linear { .. } => "linear_gaussian",
            ExpertPolicy::Flow(_) => "flow",
            ExpertPolicy::Sac(_) => "sac",
        }
    }
}

impl Policy for ExpertPolicy {
    fn action_dim(&self) -> usize {
        self.with(|p| p.action_dim())
    }

    fn act(&self, state: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.with(|p| p.act(state, rng))
    }

    fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.with(|p| p.mean_action(state))
    }
}

/// Builds the expert described by `cfg`. Deterministic given `cfg.seed`.
pub fn build_expert(
    env: &EnvKind,
    cfg: &ExpertConfig,
    sac_template: &LoopConfig,
) -> Result<ExpertPolicy> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    match (cfg.kind, env) {
        (ExpertKind::Lqr, EnvKind::LinGauss(e)) => Ok(ExpertPolicy::from_linear(&lqr_expert(
            e,
            cfg.gamma,
            cfg.action_std,
        )?)),
        (ExpertKind::LqrFlow, EnvKind::LinGauss(e)) => {
            let lqr = lqr_expert(e, cfg.gamma, cfg.action_std)?;
            let options = TrainOptions {
                steps: cfg.distill_steps,
                ..TrainOptions::default()
            };
            let spec = FlowSpec::desk(env.action_dim(), env.state_dim(), 6.0);
            let p = distill_flow_policy(
                env,
                &lqr,
                cfg.distill_episodes,
                spec,
                &options,
                cfg.seed,
                &mut rng,
            )?;
            Ok(ExpertPolicy::Flow(p))
        }
        (ExpertKind::Greedy, EnvKind::PointMass(e)) => {
            let m = env.action_dim();
            let p = LinearGaussianPolicy::new(
                DMatrix::from_diagonal_element(m, m, e.greedy_gain()),
                vec![cfg.action_std; m],
            )?;
            Ok(ExpertPolicy::from_linear(&p))
        }
        (ExpertKind::Sac, _) => {
            let mut loop_cfg = sac_template.clone();
            loop_cfg.epochs = cfg.sac_epochs;
            loop_cfg.sac.entropy_mode = EntropyMode::Auto;
            loop_cfg.eval_episodes = loop_cfg.eval_episodes.max(1);
            let result = run_imitation(env, &mut TrueReward, &loop_cfg, cfg.seed)?;
            let best = result
                .best_by_return()
                .ok_or_else(|| Error::Config("SAC expert needs at least one epoch".into()))?;
            Ok(ExpertPolicy::Sac(result.checkpoints[best].clone()))
        }
        (kind, _) => Err(Error::Config(format!(
            "expert kind '{kind}' is not available for environment '{}'",
            env.name()
        ))),
    }
}

/// Mean undiscounted return of the (stochastic) expert.
pub fn expert_return(
    env: &EnvKind,
    expert: &ExpertPolicy,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let r = evaluate_returns(env, expert, episodes.max(1), seed)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}
