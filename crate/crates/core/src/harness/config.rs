use std::collections::HashSet;
use std::fmt::Display;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::Form;
use crate::envs::{EnvKind, Environment};
use crate::error::{Error, Result};
use crate::flows::{FlowSpec, NoiseMode};
use crate::sac::EntropyMode;
use crate::soiltdm::{ClipSpec, DynamicsConfig, ExpertModelConfig, LoopConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    SoilTdm,
    Form,
    AblationExpertOnly,
    SacEnvReward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpertKind {
    /// Linear-Gaussian LQR controller (linear-Gaussian environment only).
    Lqr,
    /// Conditional-flow policy distilled from the LQR controller.
    LqrFlow,
    /// Saturating proportional controller (point mass only).
    Greedy,
    /// SAC policy trained on the environment reward.
    Sac,
}

macro_rules! name_enum {
    ($t:ty, $what:literal, $($v:path => $s:literal),+ $(,)?) => {
        impl $t {
            pub const NAMES: &'static [&'static str] = &[$($s),+];
            pub fn name(self) -> &'static str {
                match self { $($v => $s),+ }
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", $what, " '{}' (expected one of {:?})"),
                        other,
                        Self::NAMES
                    ))),
                }
            }
        }
        impl Display for $t {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

name_enum!(Profile, "profile", Profile::Desk => "desk", Profile::Paper => "paper");
name_enum!(
    Method,
    "method",
    Method::SoilTdm => "soiltdm",
    Method::Form => "form",
    Method::AblationExpertOnly => "ablation_expert_only",
    Method::SacEnvReward => "sac_env_reward",
);
name_enum!(
    ExpertKind,
    "expert kind",
    ExpertKind::Lqr => "lqr",
    ExpertKind::LqrFlow => "lqr_flow",
    ExpertKind::Greedy => "greedy",
    ExpertKind::Sac => "sac",
);

/// How the expert policy is obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    pub kind: ExpertKind,
    pub seed: u64,
    /// Discount of the LQR design.
    pub gamma: f64,
    /// Gaussian action noise of analytic experts.
    pub action_std: f64,
    pub distill_episodes: usize,
    pub distill_steps: usize,
    /// Epochs of SAC training for the `sac` expert.
    pub sac_epochs: usize,
}

impl ExpertConfig {
    pub fn default_for(env: &str) -> Self {
        let kind = match env {
            "lingauss" => ExpertKind::LqrFlow,
            "pointmass2d" => ExpertKind::Greedy,
            _ => ExpertKind::Sac,
        };
        Self {
            kind,
            seed: 100,
            gamma: 0.9,
            action_std: 0.1,
            distill_episodes: 20,
            distill_steps: 1500,
            sac_epochs: 100,
        }
    }
}

/// Complete, resolved configuration of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub env: String,
    pub method: Method,
    /// Number of expert trajectories.
    pub k: usize,
    pub seeds: Vec<u64>,
    pub expert: ExpertConfig,
    pub expert_model: ExpertModelConfig,
    pub dynamics: DynamicsConfig,
    /// Architecture of FORM's policy effect model.
    pub effect_model: FlowSpec,
    pub clip: ClipSpec,
    pub run: LoopConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_opt_f64(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid value '{value}' for '{key}' (expected true or false)"
        ))),
    }
}

impl RunConfig {
    /// Defaults of a profile for an environment and method.
    pub fn new(profile: Profile, env: &str, method: Method) -> Result<Self> {
        let e = EnvKind::from_name(env)?;
        let (d, m, horizon) = (e.state_dim(), e.action_dim(), e.horizon());
        let (mut run, dynamics, expert_model) = match profile {
            Profile::Desk => (
                LoopConfig::desk(horizon),
                DynamicsConfig::desk(d, m),
                ExpertModelConfig::desk(d),
            ),
            Profile::Paper => (
                LoopConfig::paper(horizon),
                DynamicsConfig::paper(d, m),
                ExpertModelConfig::paper(d),
            ),
        };
        if profile == Profile::Desk {
            run.epochs = 30;
        }
        match method {
            Method::Form => run.sac = Form::sac_config(&run.sac),
            Method::SacEnvReward => run.sac.entropy_mode = EntropyMode::Auto,
            _ => {}
        }
        Ok(Self {
            profile,
            env: env.to_string(),
            method,
            k: 10,
            seeds: vec![1, 2, 3],
            expert: ExpertConfig::default_for(env),
            effect_model: match profile {
                Profile::Desk => Form::desk_spec(d),
                Profile::Paper => FlowSpec::full(d, d, 64, 1.0),
            },
            expert_model,
            dynamics,
            clip: ClipSpec::default(),
            run,
        })
    }

    pub fn env_kind(&self) -> Result<EnvKind> {
        EnvKind::from_name(&self.env)
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let em = &self.expert_model;
        let dy = &self.dynamics;
        let s = &self.run.sac;
        let r = &self.run;
        vec![
            ("profile", self.profile.to_string()),
            ("env", self.env.clone()),
            ("method", self.method.to_string()),
            ("k", self.k.to_string()),
            ("seeds", list(&self.seeds)),
            ("expert.kind", self.expert.kind.to_string()),
            ("expert.seed", self.expert.seed.to_string()),
            ("expert.gamma", self.expert.gamma.to_string()),
            ("expert.action_std", self.expert.action_std.to_string()),
            (
                "expert.distill_episodes",
                self.expert.distill_episodes.to_string(),
            ),
            (
                "expert.distill_steps",
                self.expert.distill_steps.to_string(),
            ),
            ("expert.sac_epochs", self.expert.sac_epochs.to_string()),
            ("expert_model.blocks", em.spec.n_blocks.to_string()),
            ("expert_model.hidden", em.spec.hidden.to_string()),
            (
                "expert_model.hidden_layers",
                em.spec.hidden_layers.to_string(),
            ),
            ("expert_model.cond_hidden", em.spec.cond_hidden.to_string()),
            (
                "expert_model.cond_features",
                em.spec.cond_features.to_string(),
            ),
            ("expert_model.clamp", em.spec.clamp.to_string()),
            ("expert_model.noise", em.noise.to_string()),
            ("expert_model.steps", em.options.steps.to_string()),
            ("expert_model.batch", em.options.batch.to_string()),
            ("expert_model.lr", em.options.learning_rate.to_string()),
            ("expert_model.max_grad_norm", opt(em.options.max_grad_norm)),
            ("dynamics.blocks", dy.forward.n_blocks.to_string()),
            ("dynamics.hidden", dy.forward.hidden.to_string()),
            ("dynamics.cond_hidden", dy.forward.cond_hidden.to_string()),
            (
                "dynamics.inverse_cond_hidden",
                dy.inverse.cond_hidden.to_string(),
            ),
            (
                "dynamics.cond_features",
                dy.forward.cond_features.to_string(),
            ),
            ("dynamics.clamp", dy.forward.clamp.to_string()),
            ("dynamics.lr", dy.learning_rate.to_string()),
            ("dynamics.max_grad_norm", opt(dy.max_grad_norm)),
            (
                "effect_model.blocks",
                self.effect_model.n_blocks.to_string(),
            ),
            ("effect_model.hidden", self.effect_model.hidden.to_string()),
            ("effect_model.clamp", self.effect_model.clamp.to_string()),
            ("clip.low", self.clip.low.to_string()),
            ("clip.high", self.clip.high.to_string()),
            ("run.epochs", r.epochs.to_string()),
            ("run.steps_per_epoch", r.steps_per_epoch.to_string()),
            ("run.updates_per_epoch", r.updates_per_epoch.to_string()),
            (
                "run.model_updates_per_epoch",
                r.model_updates_per_epoch.to_string(),
            ),
            ("run.model_batch", r.model_batch.to_string()),
            ("run.buffer_capacity", r.buffer_capacity.to_string()),
            ("run.window", r.window.to_string()),
            ("run.eval_episodes", r.eval_episodes.to_string()),
            ("run.eval_seed", r.eval_seed.to_string()),
            ("sac.gamma", s.gamma.to_string()),
            ("sac.tau", s.tau.to_string()),
            ("sac.batch_size", s.batch_size.to_string()),
            ("sac.policy_lr", s.policy_lr.to_string()),
            ("sac.q_lr", s.q_lr.to_string()),
            ("sac.alpha_lr", s.alpha_lr.to_string()),
            ("sac.policy_hidden", list(&s.policy_hidden)),
            ("sac.q_hidden", list(&s.q_hidden)),
            ("sac.alpha", s.alpha.to_string()),
            ("sac.entropy", s.entropy_mode.to_string()),
            ("sac.target_entropy", opt(s.target_entropy)),
            ("sac.policy_first", s.policy_first.to_string()),
        ]
    }

    /// Sets one key. Unknown keys and malformed values are errors; the
    /// structural keys `profile`, `env` and `method` can only be chosen when
    /// the configuration is created.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let em = &mut self.expert_model;
        let dy = &mut self.dynamics;
        let r = &mut self.run;
        match key {
            "profile" | "env" | "method" => {
                let current = match key {
                    "profile" => self.profile.to_string(),
                    "env" => self.env.clone(),
                    _ => self.method.to_string(),
                };
                if current != value {
                    return Err(Error::Config(format!(
                        "'{key}' selects the defaults and must be given before other keys"
                    )));
                }
            }
            "k" => self.k = parse(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "expert.kind" => self.expert.kind = parse(key, value)?,
            "expert.seed" => self.expert.seed = parse(key, value)?,
            "expert.gamma" => self.expert.gamma = parse(key, value)?,
            "expert.action_std" => self.expert.action_std = parse(key, value)?,
            "expert.distill_episodes" => self.expert.distill_episodes = parse(key, value)?,
            "expert.distill_steps" => self.expert.distill_steps = parse(key, value)?,
            "expert.sac_epochs" => self.expert.sac_epochs = parse(key, value)?,
            "expert_model.blocks" => em.spec.n_blocks = parse(key, value)?,
            "expert_model.hidden" => em.spec.hidden = parse(key, value)?,
            "expert_model.hidden_layers" => em.spec.hidden_layers = parse(key, value)?,
            "expert_model.cond_hidden" => em.spec.cond_hidden = parse(key, value)?,
            "expert_model.cond_features" => em.spec.cond_features = parse(key, value)?,
            "expert_model.clamp" => em.spec.clamp = parse(key, value)?,
            "expert_model.noise" => em.noise = parse::<NoiseMode>(key, value)?,
            "expert_model.steps" => em.options.steps = parse(key, value)?,
            "expert_model.batch" => em.options.batch = parse(key, value)?,
            "expert_model.lr" => em.options.learning_rate = parse(key, value)?,
            "expert_model.max_grad_norm" => em.options.max_grad_norm = parse_opt_f64(key, value)?,
            "dynamics.blocks" => {
                let v = parse(key, value)?;
                dy.forward.n_blocks = v;
                dy.inverse.n_blocks = v;
            }
            "dynamics.hidden" => {
                let v = parse(key, value)?;
                dy.forward.hidden = v;
                dy.inverse.hidden = v;
            }
            "dynamics.cond_hidden" => dy.forward.cond_hidden = parse(key, value)?,
            "dynamics.inverse_cond_hidden" => dy.inverse.cond_hidden = parse(key, value)?,
            "dynamics.cond_features" => {
                let v = parse(key, value)?;
                dy.forward.cond_features = v;
                dy.inverse.cond_features = v;
            }
            "dynamics.clamp" => {
                let v = parse(key, value)?;
                dy.forward.clamp = v;
                dy.inverse.clamp = v;
            }
            "dynamics.lr" => dy.learning_rate = parse(key, value)?,
            "dynamics.max_grad_norm" => dy.max_grad_norm = parse_opt_f64(key, value)?,
            "effect_model.blocks" => self.effect_model.n_blocks = parse(key, value)?,
            "effect_model.hidden" => {
                let v = parse(key, value)?;
                self.effect_model.hidden = v;
                self.effect_model.cond_hidden = v;
            }
            "effect_model.clamp" => self.effect_model.clamp = parse(key, value)?,
            "clip.low" => self.clip.low = parse(key, value)?,
            "clip.high" => self.clip.high = parse(key, value)?,
            "run.epochs" => r.epochs = parse(key, value)?,
            "run.steps_per_epoch" => r.steps_per_epoch = parse(key, value)?,
            "run.updates_per_epoch" => r.updates_per_epoch = parse(key, value)?,
            "run.model_updates_per_epoch" => r.model_updates_per_epoch = parse(key, value)?,
            "run.model_batch" => r.model_batch = parse(key, value)?,
            "run.buffer_capacity" => r.buffer_capacity = parse(key, value)?,
            "run.window" => r.window = parse(key, value)?,
            "run.eval_episodes" => r.eval_episodes = parse(key, value)?,
            "run.eval_seed" => r.eval_seed = parse(key, value)?,
            "sac.gamma" => r.sac.gamma = parse(key, value)?,
            "sac.tau" => r.sac.tau = parse(key, value)?,
            "sac.batch_size" => r.sac.batch_size = parse(key, value)?,
            "sac.policy_lr" => r.sac.policy_lr = parse(key, value)?,
            "sac.q_lr" => r.sac.q_lr = parse(key, value)?,
            "sac.alpha_lr" => r.sac.alpha_lr = parse(key, value)?,
            "sac.policy_hidden" => r.sac.policy_hidden = parse_list(key, value)?,
            "sac.q_hidden" => r.sac.q_hidden = parse_list(key, value)?,
            "sac.alpha" => r.sac.alpha = parse(key, value)?,
            "sac.entropy" => r.sac.entropy_mode = parse(key, value)?,
            "sac.target_entropy" => r.sac.target_entropy = parse_opt_f64(key, value)?,
            "sac.policy_first" => r.sac.policy_first = parse_bool(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown configuration key '{other}'"
                )))
            }
        }
        Ok(())
    }

    /// Checks cross-field consistency.
    pub fn validate(&self) -> Result<()> {
        self.env_kind()?;
        if self.k == 0 {
            return Err(Error::Config(
                "at least one expert trajectory is required".into(),
            ));
        }
        match (self.expert.kind, self.env.as_str()) {
            (ExpertKind::Lqr | ExpertKind::LqrFlow, e) if e != "lingauss" => {
                return Err(Error::Config(format!(
                    "expert kind '{}' needs the lingauss environment",
                    self.expert.kind
                )))
            }
            (ExpertKind::Greedy, e) if e != "pointmass2d" => {
                return Err(Error::Config(
                    "expert kind 'greedy' needs the pointmass2d environment".into(),
                ))
            }
            _ => {}
        }
        if self.run.sac.policy_hidden.is_empty() || self.run.sac.q_hidden.is_empty() {
            return Err(Error::Config(
                "SAC networks need at least one hidden layer".into(),
            ));
        }
        if !(self.clip.low < self.clip.high) {
            return Err(Error::Config("clip.low must be below clip.high".into()));
        }
        Ok(())
    }

    /// The snapshot format: one `key = value` line per key.
    pub fn to_text(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Parses `key = value` lines (`#` starts a comment). `profile`, `env`
    /// and `method` pick the defaults (desk, lingauss, soiltdm when absent);
    /// every other key overrides one default.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut seen = HashSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if !seen.insert(k.clone()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{k}'",
                    lineno + 1
                )));
            }
            pairs.push((k, v));
        }
        Self::from_pairs(&pairs)
    }

    /// Builds a configuration from ordered key/value pairs.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let find = |key: &str| {
            pairs
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
        };
        let profile: Profile =
            find("profile").map_or(Ok(Profile::Desk), |v| parse("profile", v))?;
        let env = find("env").unwrap_or("lingauss");
        let method: Method = find("method").map_or(Ok(Method::SoilTdm), |v| parse("method", v))?;
        let mut cfg = Self::new(profile, env, method)?;
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides on top of this configuration.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = self
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| {
                Error::Config(format!("override '{o}' is not of the form key=value"))
            })?;
            let (k, v) = (k.trim(), v.trim());
            match pairs.iter_mut().find(|(key, _)| key == k) {
                Some(slot) => slot.1 = v.to_string(),
                None => return Err(Error::Config(format!("unknown configuration key '{k}'"))),
            }
        }
        // Structural keys rebuild the defaults, so keep only explicit changes
        // relative to a fresh configuration of the same shape.
        let structural: Vec<(String, String)> = pairs
            .iter()
            .filter(|(k, _)| matches!(k.as_str(), "profile" | "env" | "method"))
            .cloned()
            .collect();
        let base = Self::from_pairs(&structural)?;
        let base_entries = base.entries();
        let changed: Vec<(String, String)> = pairs
            .into_iter()
            .filter(|(k, v)| {
                let structural = matches!(k.as_str(), "profile" | "env" | "method");
                let differs = base_entries.iter().any(|(bk, bv)| bk == k && bv != v);
                structural || differs
            })
            .collect();
        Self::from_pairs(&changed)
    }
}
