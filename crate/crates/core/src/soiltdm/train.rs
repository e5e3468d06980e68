use ndarray::Array1;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dynamics::{train_dynamics, DynamicsConfig, DynamicsTrainers};
use super::reward::{compute_reward, kld_estimate, ClipSpec, DensityTriple};
use super::select::{select_by, Direction, KldTrace};
use crate::envs::{evaluate_returns, rollout, Deterministic, Environment, ExpertDataset};
use crate::error::{check_dim, Error, Result};
use crate::flows::{
    heldout_loglik, train_mle, ConditionalFlow, FlowDataset, FlowSpec, NoiseMode, NoiseSchedule,
    TrainHistory, TrainOptions,
};
use crate::sac::{Batch, GaussianTanhPolicy, ReplayBuffer, RewardFn, SacAgent, SacConfig};

/// A reward model that learns online from the replay buffer and reports a
/// per-epoch convergence criterion. SOIL-TDM, FORM, the expert-only
/// ablation and the true environment reward all implement it.
pub trait ImitationReward: RewardFn {
    fn method(&self) -> &'static str;
    /// Which way the convergence criterion improves.
    fn direction(&self) -> Direction;
    /// Updates learned components; returns up to two mean training NLLs
    /// (`NaN` where a model does not exist).
    fn fit(
        &mut self,
        buffer: &ReplayBuffer,
        steps: usize,
        batch: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(f64, f64)>;
    /// Convergence criterion on the transitions of the most recent episode.
    fn criterion(&self, recent: &Batch, policy: &GaussianTanhPolicy) -> Result<f64>;
}

/// Schedule shared by every online method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub epochs: usize,
    /// Environment steps collected per epoch (one episode).
    pub steps_per_epoch: usize,
    /// SAC updates per epoch.
    pub updates_per_epoch: usize,
    /// Reward-model updates per epoch.
    pub model_updates_per_epoch: usize,
    pub model_batch: usize,
    pub buffer_capacity: usize,
    /// Smoothing window of the selection criterion.
    pub window: usize,
    /// Deterministic test episodes per checkpoint; 0 disables evaluation.
    pub eval_episodes: usize,
    pub eval_seed: u64,
    pub sac: SacConfig,
}

impl LoopConfig {
    /// One update of every learner per collected environment step.
    pub fn desk(horizon: usize) -> Self {
        Self {
            epochs: 100,
            steps_per_epoch: horizon,
            updates_per_epoch: horizon,
            model_updates_per_epoch: horizon,
            model_batch: 256,
            buffer_capacity: 100_000,
            window: 10,
            eval_episodes: 10,
            eval_seed: 0x5eed_e7a1,
            sac: SacConfig::desk(),
        }
    }

    pub fn paper(horizon: usize) -> Self {
        Self {
            epochs: 1000,
            model_batch: 2048,
            sac: SacConfig::paper(),
            ..Self::desk(horizon)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps_per_epoch == 0 {
            return Err(Error::Config("steps per epoch must be positive".into()));
        }
        if self.model_batch == 0 || self.sac.batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("selection window must be positive".into()));
        }
        Ok(())
    }
}

/// Metrics of one epoch. `env_return` is the mean deterministic test
/// return of this epoch's checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub env_steps: usize,
    pub criterion_raw: f64,
    pub criterion_window: f64,
    pub mean_reward_estimate: f64,
    pub env_return: Option<f64>,
    /// Undiscounted environment return of the training episode.
    pub train_return: f64,
    pub nll_a: f64,
    pub nll_b: f64,
}

/// Everything an online run produces.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub method: &'static str,
    pub direction: Direction,
    pub metrics: Vec<EpochMetrics>,
    pub trace: KldTrace,
    /// Checkpoint `e` is the policy that collected epoch `e`'s episode.
    pub checkpoints: Vec<GaussianTanhPolicy>,
    pub agent: SacAgent,
    pub selected: Option<usize>,
}

impl RunResult {
    /// Test returns of all checkpoints (requires evaluation to be enabled).
    pub fn returns(&self) -> Option<Vec<f64>> {
        self.metrics.iter().map(|m| m.env_return).collect()
    }

    /// Checkpoint with the best test return; ties go to the later one.
    pub fn best_by_return(&self) -> Option<usize> {
        let r = self.returns()?;
        let mut best = None;
        for (i, &v) in r.iter().enumerate() {
            if best.is_none_or(|b: usize| v >= r[b]) {
                best = Some(i);
            }
        }
        best
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Runs the online loop. Each epoch: one episode with the current policy
/// into the buffer, reward-model updates, the convergence criterion on that
/// episode, checkpoint evaluation, then SAC updates driven by the model's
/// reward.
pub fn run_imitation<E, M>(
    env: &E,
    model: &mut M,
    config: &LoopConfig,
    seed: u64,
) -> Result<RunResult>
where
    E: Environment + ?Sized,
    M: ImitationReward,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, m) = (env.state_dim(), env.action_dim());
    let mut agent = SacAgent::new(d, m, config.sac.clone(), &mut rng)?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity, d, m)?;
    let mut trace = KldTrace::new(config.window)?;
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut checkpoints = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let traj = rollout(env, &agent.policy, config.steps_per_epoch, &mut rng)?;
        let recent = Batch::from_transitions(d, m, &traj.transitions);
        buffer.extend(traj.transitions.iter().cloned())?;

        let (nll_a, nll_b) = model.fit(
            &buffer,
            config.model_updates_per_epoch,
            config.model_batch,
            &mut rng,
        )?;
        let criterion = model.criterion(&recent, &agent.policy)?;
        trace.push(criterion);
        let mean_reward_estimate = model.rewards(&recent)?.mean().expect("non-empty episode");

        let checkpoint = agent.policy.clone();
        let env_return = if config.eval_episodes > 0 {
            Some(mean(&evaluate_returns(
                env,
                &Deterministic(&checkpoint),
                config.eval_episodes,
                config.eval_seed,
            )?))
        } else {
            None
        };
        checkpoints.push(checkpoint);

        for _ in 0..config.updates_per_epoch {
            agent.update(&buffer, &*model, &mut rng)?;
        }
        metrics.push(EpochMetrics {
            epoch,
            env_steps: buffer.inserted() as usize,
            criterion_raw: criterion,
            criterion_window: trace.windowed_at(epoch),
            mean_reward_estimate,
            env_return,
            train_return: traj.total_reward(),
            nll_a,
            nll_b,
        });
    }
    let selected = if trace.is_empty() {
        None
    } else {
        Some(select_by(&trace, model.direction())?)
    };
    Ok(RunResult {
        method: model.method(),
        direction: model.direction(),
        metrics,
        trace,
        checkpoints,
        agent,
        selected,
    })
}

/// The SOIL-TDM reward: frozen expert model plus online dynamics models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoilTdm {
    pub models: DensityTriple,
    pub trainers: DynamicsTrainers,
    pub clip: ClipSpec,
}

impl SoilTdm {
    pub fn new(
        expert: ConditionalFlow,
        dynamics: &DynamicsConfig,
        clip: ClipSpec,
        rng: &mut dyn RngCore,
    ) -> Result<Self> {
        let models = DensityTriple::new(
            expert,
            dynamics.forward.clone(),
            dynamics.inverse.clone(),
            rng,
        )?;
        let trainers =
            DynamicsTrainers::new(&models, dynamics.learning_rate, dynamics.max_grad_norm);
        Ok(Self {
            models,
            trainers,
            clip,
        })
    }
}

impl RewardFn for SoilTdm {
    fn rewards(&self, batch: &Batch) -> Result<Array1<f64>> {
        Ok(compute_reward(&self.models, &self.clip, batch)?.rewards)
    }
}

impl ImitationReward for SoilTdm {
    fn method(&self) -> &'static str {
        "soiltdm"
    }

    fn direction(&self) -> Direction {
        Direction::Minimize
    }

    fn fit(
        &mut self,
        buffer: &ReplayBuffer,
        steps: usize,
        batch: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(f64, f64)> {
        let trace = train_dynamics(
            &mut self.models,
            &mut self.trainers,
            buffer,
            steps,
            batch,
            rng,
        )?;
        Ok(trace.tail_means(steps))
    }

    fn criterion(&self, recent: &Batch, policy: &GaussianTanhPolicy) -> Result<f64> {
        kld_estimate(&self.models, policy, &self.clip, recent, None)
    }
}

/// Offline training of the expert transition model `mu_E(s'|s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertModelConfig {
    pub spec: FlowSpec,
    pub noise: NoiseMode,
    pub options: TrainOptions,
}

impl ExpertModelConfig {
    /// Desk architecture with exponent clamp 6 and the decaying noise schedule.
    pub fn desk(state_dim: usize) -> Self {
        Self {
            spec: FlowSpec::desk(state_dim, state_dim, 6.0),
            noise: NoiseMode::LinearDecay,
            options: TrainOptions::default(),
        }
    }

    pub fn paper(state_dim: usize) -> Self {
        Self {
            spec: FlowSpec::full(state_dim, state_dim, 64, 6.0),
            options: TrainOptions {
                steps: 10_000,
                learning_rate: 1e-4,
                ..TrainOptions::default()
            },
            ..Self::desk(state_dim)
        }
    }
}

/// `(s_{t+1}, s_t)` pairs of a dataset as flow training data. Actions, if
/// present, are ignored.
pub fn expert_transitions(dataset: &ExpertDataset) -> Result<FlowDataset> {
    let (s, s_next) = dataset.state_pairs();
    FlowDataset::new(s_next, s)
}

pub fn train_expert_model(
    dataset: &ExpertDataset,
    config: &ExpertModelConfig,
    rng: &mut dyn RngCore,
) -> Result<(ConditionalFlow, TrainHistory)> {
    check_dim("expert model width", dataset.state_dim, config.spec.dim)?;
    check_dim(
        "expert model condition width",
        dataset.state_dim,
        config.spec.cond_dim,
    )?;
    let data = expert_transitions(dataset)?;
    let mut flow = ConditionalFlow::new(config.spec.clone(), rng)?;
    let schedule = NoiseSchedule::with_mode(config.noise, config.options.steps);
    let history = train_mle(&mut flow, &data, &schedule, &config.options, rng)?;
    Ok((flow, history))
}

/// Mean held-out `log mu_E(s'|s)` over a dataset's transitions.
pub fn expert_model_loglik(flow: &ConditionalFlow, dataset: &ExpertDataset) -> Result<f64> {
    heldout_loglik(flow, &expert_transitions(dataset)?)
}

/// Configuration of a SOIL-TDM run after the expert model exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoilTdmConfig {
    pub run: LoopConfig,
    pub dynamics: DynamicsConfig,
    pub clip: ClipSpec,
}

impl SoilTdmConfig {
    pub fn desk(state_dim: usize, action_dim: usize, horizon: usize) -> Self {
        Self {
            run: LoopConfig::desk(horizon),
            dynamics: DynamicsConfig::desk(state_dim, action_dim),
            clip: ClipSpec::default(),
        }
    }
}

/// Output of [`train_loop`].
#[derive(Clone, Debug)]
pub struct SoilTdmRun {
    /// The model after the run: the expert model is unchanged.
    pub model: SoilTdm,
    pub result: RunResult,
}

/// Imitation from a trained expert model. With zero epochs the result holds
/// only the untouched expert model and an empty trace.
pub fn train_loop<E: Environment + ?Sized>(
    env: &E,
    expert_model: ConditionalFlow,
    config: &SoilTdmConfig,
    seed: u64,
) -> Result<SoilTdmRun> {
    check_dim("expert model width", env.state_dim(), expert_model.dim())?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut model = SoilTdm::new(expert_model, &config.dynamics, config.clip, &mut init_rng)?;
    check_dim(
        "dynamics model action width",
        env.action_dim(),
        model.models.action_dim(),
    )?;
    let result = run_imitation(env, &mut model, &config.run, seed)?;
    Ok(SoilTdmRun { model, result })
}
