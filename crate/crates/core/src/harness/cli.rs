use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use super::config::{Method, Profile, RunConfig};
use super::metrics::{merge_rows, read_summary, summarize_run, write_atomic};
use super::plot::{plot_svg, Selection};
use super::run::{
    evaluate_run_dir, execute, expert_dataset, load_expert, prepare_expert, run_dir_name, run_root,
    save_bincode, save_expert, write_run_dir, ExpertArtifacts, RUN_INFO_FILE,
};
use super::sweep::{default_threads, noise_ablation, run_sweep, SweepSpec};
use crate::envs::ExpertDataset;
use crate::error::{Error, Result};
use crate::oracle::{run_suite, IdentityRow};
use crate::soiltdm::{expert_model_loglik, train_expert_model};

#[derive(Parser, Debug)]
#[command(
    name = "soiltdm",
    version,
    about = "State-only imitation learning by trajectory distribution matching"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Profile used when no configuration file is given (desk or paper).
    #[arg(long)]
    pub profile: Option<String>,
    /// Environment used when no configuration file is given.
    #[arg(long)]
    pub env: Option<String>,
    /// Method used when no configuration file is given.
    #[arg(long)]
    pub method: Option<String>,
    /// Override one key, e.g. `--set run.epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut base = match &self.config {
            Some(path) => RunConfig::parse_text(&fs::read_to_string(path)?)?,
            None => {
                let profile: Profile = self.profile.as_deref().unwrap_or("desk").parse()?;
                let method: Method = self.method.as_deref().unwrap_or("soiltdm").parse()?;
                RunConfig::new(profile, self.env.as_deref().unwrap_or("lingauss"), method)?
            }
        };
        if self.config.is_some() {
            if let Some(m) = &self.method {
                base = base.for_method(m.parse()?)?;
            }
            if self.profile.is_some() || self.env.is_some() {
                return Err(Error::Config(
                    "--profile and --env only apply without --config".into(),
                ));
            }
        }
        base.with_overrides(&self.overrides)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build the expert policy and record K state-only expert trajectories.
    GenExpert {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset seed index (the dataset of run seed N).
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory (expert.bin, expert_return.txt, dataset.bin, dataset.csv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the expert transition model on a dataset file.
    TrainExpertModel {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        /// Optional held-out dataset for the log-likelihood report.
        #[arg(long)]
        heldout: Option<PathBuf>,
        /// Seed of the expert-model initialization and training.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file of the trained flow.
        #[arg(long)]
        out: PathBuf,
    },
    /// One complete run: expert, dataset, expert model, imitation, metrics.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run seed; also fixes the dataset, expert-model and initialization seeds.
        #[arg(long)]
        seed: u64,
        /// Reuse an expert written by gen-expert.
        #[arg(long)]
        expert: Option<PathBuf>,
        /// Run directory; defaults to a name below $SOILTDM_RUN_ROOT (or ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-evaluate every checkpoint of a run directory (writes eval.csv).
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Show the checkpoints selected in a run directory and refresh summary.csv.
    Select {
        #[arg(long)]
        run: PathBuf,
        /// kld, est_reward or true_reward; all selections when omitted.
        #[arg(long)]
        by: Option<String>,
    },
    /// Check the tabular identities on random instances.
    Oracle {
        /// Number of random instances per identity.
        #[arg(long, default_value_t = 100)]
        seeds: usize,
        /// Base seed of the instance generator.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep methods over K and seeds, or compare expert-model noise modes.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `methods` (imitation sweep) or `noise` (expert-model noise modes).
        #[arg(long, default_value = "methods")]
        kind: String,
        /// Comma-separated methods of a methods sweep.
        #[arg(long, default_value = "soiltdm,form,ablation_expert_only")]
        methods: String,
        /// Comma-separated expert trajectory counts.
        #[arg(long, default_value = "1,10")]
        ks: String,
        /// Comma-separated seeds; defaults to the configuration's seeds.
        #[arg(long)]
        seeds: Option<String>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory; defaults to $SOILTDM_RUN_ROOT/ablate_<kind>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plot relative return against K from summary CSV files.
    Plot {
        /// One or more summary.csv files; rows are merged by (method, env, K, seed).
        #[arg(long, required = true, num_args = 1..)]
        summary: Vec<PathBuf>,
        /// Output SVG file.
        #[arg(long)]
        out: PathBuf,
        /// own (each method's criterion) or true_reward.
        #[arg(long, default_value = "own")]
        selection: String,
    },
}

fn list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid {what} '{}'", x.trim())))
        })
        .collect()
}

fn expert_for(cfg: &RunConfig, dir: Option<&Path>) -> Result<ExpertArtifacts> {
    match dir {
        Some(d) => load_expert(d),
        None => prepare_expert(cfg),
    }
}

/// Executes a parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenExpert { cfg, seed, out } => {
            let cfg = cfg.resolve()?;
            let expert = prepare_expert(&cfg)?;
            save_expert(&out, &expert)?;
            let data = expert_dataset(&cfg.env_kind()?, &expert.policy, cfg.k, seed)?;
            data.save(&out.join("dataset.bin"))?;
            let mut csv = Vec::new();
            data.write_csv(&mut csv)?;
            write_atomic(&out.join("dataset.csv"), &csv)?;
            println!(
                "expert {} return {:.4}; {} trajectories, {} transitions -> {}",
                expert.policy.kind_name(),
                expert.expert_return,
                data.n_episodes(),
                data.n_transitions(),
                out.display()
            );
        }
        Command::TrainExpertModel {
            cfg,
            dataset,
            heldout,
            seed,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let data = ExpertDataset::load(&dataset)?;
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let (flow, history) = train_expert_model(&data, &cfg.expert_model, &mut rng)?;
            save_bincode(&out, &flow)?;
            let last = history.nll.last().copied().unwrap_or(f64::NAN);
            print!("final training nll {last:.4}");
            if let Some(h) = heldout {
                print!(
                    "; held-out log-likelihood {:.4}",
                    expert_model_loglik(&flow, &ExpertDataset::load(&h)?)?
                );
            }
            println!(" -> {}", out.display());
        }
        Command::Train {
            cfg,
            seed,
            expert,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let expert = expert_for(&cfg, expert.as_deref())?;
            let outcome = execute(&cfg, &expert, seed)?;
            let dir = out.unwrap_or_else(|| run_dir_name(&run_root(), &cfg, seed));
            write_run_dir(&dir, &outcome)?;
            for r in summarize_run(&dir)? {
                println!(
                    "{} selected by {}: checkpoint {} return {:.4} relative {:.4}",
                    r.method,
                    r.selected_by,
                    r.checkpoint,
                    r.return_abs,
                    r.return_relative_to_expert
                );
            }
            println!("run directory {}", dir.display());
        }
        Command::Eval { run, episodes } => {
            if episodes == 0 {
                return Err(Error::Config("--episodes must be positive".into()));
            }
            let rows = evaluate_run_dir(&run, episodes)?;
            let mut s = String::from("epoch,return_mean,return_std\n");
            for (e, m, sd) in &rows {
                s.push_str(&format!("{e},{m},{sd}\n"));
            }
            write_atomic(&run.join("eval.csv"), s.as_bytes())?;
            let best = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
            println!(
                "{} checkpoints evaluated, best mean return {best:.4}",
                rows.len()
            );
        }
        Command::Select { run, by } => {
            if !run.join(RUN_INFO_FILE).exists() {
                return Err(Error::Config(format!("{} holds no run", run.display())));
            }
            let rows = super::metrics::emit_metrics(&run)?;
            let shown: Vec<_> = rows
                .iter()
                .filter(|r| by.as_deref().is_none_or(|b| r.selected_by == b))
                .collect();
            if shown.is_empty() {
                return Err(Error::Config(format!(
                    "no selection '{}' for this run",
                    by.unwrap_or_default()
                )));
            }
            for r in shown {
                println!(
                    "{} checkpoint {} return {:.4} relative {:.4}",
                    r.selected_by, r.checkpoint, r.return_abs, r.return_relative_to_expert
                );
            }
        }
        Command::Oracle { seeds, seed, out } => {
            let rows = run_suite(seeds, seed)?;
            let mut table = format!("{}\n", IdentityRow::CSV_HEADER);
            for r in &rows {
                table.push_str(&r.csv_line());
                table.push('\n');
            }
            print!("{table}");
            if let Some(path) = out {
                write_atomic(&path, table.as_bytes())?;
            }
            if let Some(f) = rows.iter().find(|r| !r.passed) {
                return Err(Error::Config(format!(
                    "identity '{}' failed: {}",
                    f.identity,
                    f.failure
                        .as_deref()
                        .unwrap_or("")
                        .lines()
                        .next()
                        .unwrap_or("")
                )));
            }
        }
        Command::Ablate {
            cfg,
            kind,
            methods,
            ks,
            seeds,
            threads,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let ks: Vec<usize> = list("K", &ks)?;
            let seeds: Vec<u64> = match seeds {
                Some(s) => list("seed", &s)?,
                None => cfg.seeds.clone(),
            };
            let out = out.unwrap_or_else(|| run_root().join(format!("ablate_{kind}")));
            match kind.as_str() {
                "methods" => {
                    let spec = SweepSpec {
                        methods: list("method", &methods)?,
                        ks,
                        seeds,
                        threads: threads.unwrap_or_else(default_threads),
                    };
                    let rows = run_sweep(&cfg, &spec, &out)?;
                    for a in super::metrics::aggregate(&rows) {
                        println!(
                            "{} K={} selected by {}: relative {:.3} [{:.3}, {:.3}] over {} seeds",
                            a.method,
                            a.k,
                            a.selected_by,
                            a.mean_relative,
                            a.ci_low,
                            a.ci_high,
                            a.n_seeds
                        );
                    }
                    println!("results in {}", out.display());
                }
                "noise" => {
                    let expert = prepare_expert(&cfg)?;
                    let mut s = String::from(
                        "noise,K,seed,heldout_loglik,heldout_loglik_median,heldout_loglik_clipped\n",
                    );
                    for &k in &ks {
                        for &seed in &seeds {
                            for r in noise_ablation(&cfg, &expert, k, seed)? {
                                println!(
                                    "K={k} seed={seed} {}: held-out log-likelihood {:.4} (median {:.4}, clipped {:.4})",
                                    r.mode, r.mean, r.median, r.clipped_mean
                                );
                                s.push_str(&format!(
                                    "{},{k},{seed},{},{},{}\n",
                                    r.mode, r.mean, r.median, r.clipped_mean
                                ));
                            }
                        }
                    }
                    write_atomic(&out.join("noise.csv"), s.as_bytes())?;
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown ablation kind '{other}' (expected methods or noise)"
                    )))
                }
            }
        }
        Command::Plot {
            summary,
            out,
            selection,
        } => {
            let selection: Selection = selection.parse()?;
            let mut rows = Vec::new();
            for p in &summary {
                rows.extend(read_summary(p)?);
            }
            let rows = merge_rows(rows);
            let svg = plot_svg(&rows, selection)?;
            write_atomic(&out, svg.as_bytes())?;
            println!("plot of {} rows -> {}", rows.len(), out.display());
        }
    }
    Ok(())
}

/// Entry point of the binary: exit 0 on success, 1 on a runtime error and
/// 2 on a usage error.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            eprintln!("error: {}", msg.lines().next().unwrap_or(""));
            ExitCode::from(1)
        }
    }
}
