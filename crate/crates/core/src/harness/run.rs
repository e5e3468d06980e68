use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{de::DeserializeOwned, Serialize};

use super::config::{Method, Profile, RunConfig};
use super::expert::{build_expert, expert_return, ExpertPolicy};
use super::metrics::{emit_metrics, write_atomic};
use crate::baselines::{ExpertOnly, Form, TrueReward};
use crate::envs::{gen_expert_dataset, EnvKind, ExpertDataset};
use crate::error::{Error, Result};
use crate::flows::ConditionalFlow;
use crate::sac::GaussianTanhPolicy;
use crate::soiltdm::{run_imitation, train_expert_model, RunResult, SoilTdm};

/// Environment variable naming the default root of run directories.
pub const RUN_ROOT_ENV: &str = "SOILTDM_RUN_ROOT";

pub const CONFIG_FILE: &str = "config.cfg";
pub const RUN_INFO_FILE: &str = "run_info.csv";
pub const PER_EPOCH_FILE: &str = "per_epoch.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SELECTED_FILE: &str = "selected.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// Root directory for runs: `$SOILTDM_RUN_ROOT`, else `./runs`.
pub fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// Default directory of one run below `root`.
pub fn run_dir_name(root: &Path, cfg: &RunConfig, seed: u64) -> PathBuf {
    root.join(format!("{}_{}_k{}_s{}", cfg.method, cfg.env, cfg.k, seed))
}

pub fn save_bincode<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = bincode::serialize(value)
        .map_err(|e| Error::Format(format!("cannot encode {}: {e}", path.display())))?;
    write_atomic(path, &bytes)
}

pub fn load_bincode<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    bincode::deserialize(&bytes)
        .map_err(|e| Error::Format(format!("cannot decode {}: {e}", path.display())))
}

/// Expert policy plus its reference return.
#[derive(Clone, Debug)]
pub struct ExpertArtifacts {
    pub policy: ExpertPolicy,
    pub expert_return: f64,
}

pub fn prepare_expert(cfg: &RunConfig) -> Result<ExpertArtifacts> {
    let env = cfg.env_kind()?;
    let policy = build_expert(&env, &cfg.expert, &cfg.run)?;
    let expert_return = expert_return(&env, &policy, cfg.run.eval_episodes, cfg.run.eval_seed)?;
    Ok(ExpertArtifacts {
        policy,
        expert_return,
    })
}

/// Seed of the expert dataset used by run seed `seed`.
pub fn dataset_seed(seed: u64) -> u64 {
    1000 + seed
}

/// `k` state-only expert trajectories for run seed `seed`.
pub fn expert_dataset(
    env: &EnvKind,
    expert: &ExpertPolicy,
    k: usize,
    seed: u64,
) -> Result<ExpertDataset> {
    gen_expert_dataset(env, expert, k, false, dataset_seed(seed))
}

/// Trains the expert transition model with a seed derived from `seed`.
pub fn fit_expert_model(
    cfg: &RunConfig,
    dataset: &ExpertDataset,
    seed: u64,
) -> Result<ConditionalFlow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0e4e_47b0_de15_eed5);
    Ok(train_expert_model(dataset, &cfg.expert_model, &mut rng)?.0)
}

/// Runs the configured method. Every method except `sac_env_reward` needs
/// the expert transition model.
pub fn run_method(
    cfg: &RunConfig,
    expert_model: Option<ConditionalFlow>,
    seed: u64,
) -> Result<RunResult> {
    let env = cfg.env_kind()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let need = |m: Option<ConditionalFlow>| {
        m.ok_or_else(|| Error::Config(format!("method '{}' needs an expert model", cfg.method)))
    };
    match cfg.method {
        Method::SoilTdm => {
            let mut model =
                SoilTdm::new(need(expert_model)?, &cfg.dynamics, cfg.clip, &mut init_rng)?;
            run_imitation(&env, &mut model, &cfg.run, seed)
        }
        Method::Form => {
            let mut model = Form::new(
                need(expert_model)?,
                cfg.effect_model.clone(),
                cfg.dynamics.learning_rate,
                cfg.clip,
                &mut init_rng,
            )?;
            run_imitation(&env, &mut model, &cfg.run, seed)
        }
        Method::AblationExpertOnly => {
            let mut model = ExpertOnly {
                expert_model: need(expert_model)?,
                clip: cfg.clip,
            };
            run_imitation(&env, &mut model, &cfg.run, seed)
        }
        Method::SacEnvReward => run_imitation(&env, &mut TrueReward, &cfg.run, seed),
    }
}

/// A finished run with everything needed to write its directory.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub seed: u64,
    pub expert_return: f64,
    pub result: RunResult,
}

/// Dataset, expert model and imitation run for one seed.
pub fn execute(cfg: &RunConfig, expert: &ExpertArtifacts, seed: u64) -> Result<RunOutcome> {
    let model = if cfg.method == Method::SacEnvReward {
        None
    } else {
        let env = cfg.env_kind()?;
        let data = expert_dataset(&env, &expert.policy, cfg.k, seed)?;
        Some(fit_expert_model(cfg, &data, seed)?)
    };
    execute_with_model(cfg, expert, model, seed)
}

pub fn execute_with_model(
    cfg: &RunConfig,
    expert: &ExpertArtifacts,
    model: Option<ConditionalFlow>,
    seed: u64,
) -> Result<RunOutcome> {
    let result = run_method(cfg, model, seed)?;
    Ok(RunOutcome {
        config: cfg.clone(),
        seed,
        expert_return: expert.expert_return,
        result,
    })
}

/// Column names of the criterion and model-NLL columns of a method.
pub fn method_columns(method: Method) -> (&'static str, &'static [&'static str]) {
    match method {
        Method::SoilTdm => ("kld", &["nll_mu_phi", "nll_mu_eta"]),
        Method::Form => ("form_est_reward", &["form_nll_policy_effect"]),
        Method::AblationExpertOnly => ("ablation_est_reward", &[]),
        Method::SacEnvReward => ("train_reward", &[]),
    }
}

/// Header of `per_epoch.csv` for a method.
pub fn per_epoch_header(method: Method) -> Vec<String> {
    let (crit, nll) = method_columns(method);
    let mut h = vec![
        "epoch".to_string(),
        "env_steps".to_string(),
        format!("{crit}_raw"),
        format!("{crit}_window"),
        "mean_reward_estimate".to_string(),
        "env_return".to_string(),
        "train_return".to_string(),
    ];
    h.extend(nll.iter().map(|s| s.to_string()));
    h
}

fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

/// `per_epoch.csv` contents. Floats use the shortest exact representation,
/// so equal runs give equal bytes.
pub fn per_epoch_csv(method: Method, result: &RunResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = per_epoch_header(method);
    let n_nll = method_columns(method).1.len();
    w.write_record(&header).map_err(csv_err)?;
    for m in &result.metrics {
        let mut row = vec![
            m.epoch.to_string(),
            m.env_steps.to_string(),
            fmt_f64(m.criterion_raw),
            fmt_f64(m.criterion_window),
            fmt_f64(m.mean_reward_estimate),
            m.env_return.map_or_else(String::new, fmt_f64),
            fmt_f64(m.train_return),
        ];
        row.extend([m.nll_a, m.nll_b].iter().take(n_nll).map(|&v| fmt_f64(v)));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("utf-8 csv"))
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

/// Key/value facts about a run that the metrics need.
pub fn run_info_csv(outcome: &RunOutcome) -> String {
    let c = &outcome.config;
    let budget = match c.profile {
        Profile::Desk => "desk budgets are repository choices",
        Profile::Paper => "paper-scale budgets",
    };
    let dir = match outcome.result.direction {
        crate::soiltdm::Direction::Minimize => "minimize",
        crate::soiltdm::Direction::Maximize => "maximize",
    };
    let rows = [
        ("method", c.method.to_string()),
        ("env", c.env.clone()),
        ("k", c.k.to_string()),
        ("seed", outcome.seed.to_string()),
        ("profile", c.profile.to_string()),
        ("budget", budget.to_string()),
        ("expert_kind", c.expert.kind.to_string()),
        ("expert_return", outcome.expert_return.to_string()),
        ("direction", dir.to_string()),
        ("window", c.run.window.to_string()),
    ];
    let mut s = String::from("key,value\n");
    for (k, v) in rows {
        s.push_str(&format!("{k},{v}\n"));
    }
    s
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(CHECKPOINT_DIR)
        .join(format!("epoch_{epoch:05}.bin"))
}

/// Writes the run directory: config snapshot, run facts, per-epoch metrics,
/// checkpoints, then `summary.csv` and the selection marker.
pub fn write_run_dir(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
    let mut cfg = outcome.config.clone();
    cfg.seeds = vec![outcome.seed];
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_text().as_bytes())?;
    write_atomic(&dir.join(RUN_INFO_FILE), run_info_csv(outcome).as_bytes())?;
    for (e, ckpt) in outcome.result.checkpoints.iter().enumerate() {
        save_bincode(&checkpoint_path(dir, e), ckpt)?;
    }
    write_atomic(
        &dir.join(PER_EPOCH_FILE),
        per_epoch_csv(outcome.config.method, &outcome.result)?.as_bytes(),
    )?;
    let rows = emit_metrics(dir)?;
    let mut marker = String::new();
    for r in &rows {
        marker.push_str(&format!("{} {}\n", r.selected_by, r.checkpoint));
    }
    write_atomic(&dir.join(SELECTED_FILE), marker.as_bytes())
}

pub fn load_checkpoint(dir: &Path, epoch: usize) -> Result<GaussianTanhPolicy> {
    load_bincode(&checkpoint_path(dir, epoch))
}

/// Reads the configuration snapshot of a run directory.
pub fn load_run_config(dir: &Path) -> Result<RunConfig> {
    let path = dir.join(CONFIG_FILE);
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} is not a run directory (no {CONFIG_FILE})",
            dir.display()
        )));
    }
    RunConfig::parse_text(&fs::read_to_string(path)?)
}

/// Number of checkpoint files in a run directory.
pub fn checkpoint_count(dir: &Path) -> Result<usize> {
    let mut n = 0;
    while checkpoint_path(dir, n).exists() {
        n += 1;
    }
    Ok(n)
}

/// Expert artifacts as written by `gen-expert`.
pub fn save_expert(dir: &Path, expert: &ExpertArtifacts) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_bincode(&dir.join("expert.bin"), &expert.policy)?;
    write_atomic(
        &dir.join("expert_return.txt"),
        format!("{}\n", expert.expert_return).as_bytes(),
    )
}

pub fn load_expert(dir: &Path) -> Result<ExpertArtifacts> {
    let policy = load_bincode(&dir.join("expert.bin"))?;
    let text = fs::read_to_string(dir.join("expert_return.txt"))?;
    let expert_return = text
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("bad expert return '{}'", text.trim())))?;
    Ok(ExpertArtifacts {
        policy,
        expert_return,
    })
}

/// Deterministic re-evaluation of every checkpoint of a run directory:
/// `(epoch, mean, std)` over `episodes` test episodes.
pub fn evaluate_run_dir(dir: &Path, episodes: usize) -> Result<Vec<(usize, f64, f64)>> {
    let cfg = load_run_config(dir)?;
    let env = cfg.env_kind()?;
    let n = checkpoint_count(dir)?;
    if n == 0 {
        return Err(Error::Config(format!(
            "{} holds no checkpoints",
            dir.display()
        )));
    }
    (0..n)
        .map(|e| {
            let p = load_checkpoint(dir, e)?;
            let r = crate::envs::evaluate_returns(
                &env,
                &crate::envs::Deterministic(&p),
                episodes,
                cfg.run.eval_seed,
            )?;
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / r.len() as f64;
            Ok((e, mean, var.sqrt()))
        })
        .collect()
}
