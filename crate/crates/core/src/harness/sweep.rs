use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::config::{Method, RunConfig};
use super::metrics::{aggregate, aggregate_csv, merge_rows, summary_csv, write_atomic, SummaryRow};
use super::plot::{plot_svg, Selection};
use super::run::{
    dataset_seed, execute_with_model, expert_dataset, fit_expert_model, prepare_expert,
    run_dir_name, write_run_dir, ExpertArtifacts,
};
use crate::envs::gen_expert_dataset;
use crate::error::{Error, Result};
use crate::flows::{ConditionalFlow, NoiseMode};
use crate::soiltdm::expert_transitions;

/// Applies `f` to every item on up to `threads` worker threads; results keep
/// the input order.
pub fn parallel_map<T, U, F>(items: &[T], threads: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<U>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                out.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    out.into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

/// Default worker count: available parallelism.
pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl RunConfig {
    /// The same experiment for another method: the new method's defaults,
    /// with every key that this configuration changed relative to its own
    /// defaults carried over.
    pub fn for_method(&self, method: Method) -> Result<Self> {
        let own_defaults = RunConfig::new(self.profile, &self.env, self.method)?.entries();
        let mut target = RunConfig::new(self.profile, &self.env, method)?;
        for ((key, value), (_, default)) in self.entries().into_iter().zip(own_defaults) {
            if value != default && !matches!(key, "profile" | "env" | "method") {
                target.set(key, &value)?;
            }
        }
        target.validate()?;
        Ok(target)
    }
}

/// Grid of a sweep.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub methods: Vec<Method>,
    pub ks: Vec<usize>,
    pub seeds: Vec<u64>,
    pub threads: usize,
}

/// Runs every (method, K, seed) combination, writes one run directory per
/// combination below `root`, then the merged `summary.csv`, `aggregate.csv`
/// and `plot.svg`. The expert is built once; expert models are shared by
/// all methods with the same (K, seed).
pub fn run_sweep(base: &RunConfig, spec: &SweepSpec, root: &Path) -> Result<Vec<SummaryRow>> {
    if spec.methods.is_empty() || spec.ks.is_empty() || spec.seeds.is_empty() {
        return Err(Error::Config(
            "a sweep needs at least one method, K and seed".into(),
        ));
    }
    let expert = prepare_expert(base)?;
    let env = base.env_kind()?;
    let needs_model = spec.methods.iter().any(|m| *m != Method::SacEnvReward);
    let pairs: Vec<(usize, u64)> = spec
        .ks
        .iter()
        .flat_map(|&k| spec.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let mut models: BTreeMap<(usize, u64), ConditionalFlow> = BTreeMap::new();
    if needs_model {
        let fitted = parallel_map(&pairs, spec.threads, |&(k, seed)| {
            let data = expert_dataset(&env, &expert.policy, k, seed)?;
            fit_expert_model(base, &data, seed)
        });
        for (p, m) in pairs.iter().zip(fitted) {
            models.insert(*p, m?);
        }
    }
    let mut jobs = Vec::new();
    for &method in &spec.methods {
        let mut cfg = base.for_method(method)?;
        for &(k, seed) in &pairs {
            cfg.k = k;
            jobs.push((cfg.clone(), seed));
        }
    }
    let outcomes = parallel_map(
        &jobs,
        spec.threads,
        |(cfg, seed)| -> Result<Vec<SummaryRow>> {
            let model =
                (cfg.method != Method::SacEnvReward).then(|| models[&(cfg.k, *seed)].clone());
            let outcome = execute_with_model(cfg, &expert, model, *seed)?;
            let dir = run_dir_name(root, cfg, *seed);
            write_run_dir(&dir, &outcome)?;
            super::metrics::summarize_run(&dir)
        },
    );
    let mut rows = Vec::new();
    for o in outcomes {
        rows.extend(o?);
    }
    let rows = merge_rows(rows);
    write_sweep_outputs(root, &rows)?;
    Ok(rows)
}

/// Writes `summary.csv`, `aggregate.csv` and `plot.svg` for merged rows.
pub fn write_sweep_outputs(root: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_atomic(&root.join("summary.csv"), summary_csv(rows)?.as_bytes())?;
    write_atomic(
        &root.join("aggregate.csv"),
        aggregate_csv(&aggregate(rows))?.as_bytes(),
    )?;
    write_atomic(
        &root.join("plot.svg"),
        plot_svg(rows, Selection::Own)?.as_bytes(),
    )
}

/// Episodes of the held-out set used to score expert models.
pub const HELDOUT_EPISODES: usize = 10;

/// Held-out scores of one expert model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseScore {
    pub mode: NoiseMode,
    /// Mean held-out `log mu_E(s'|s)`.
    pub mean: f64,
    /// Median over held-out transitions.
    pub median: f64,
    /// Mean after applying the lower clip bound of the run configuration.
    pub clipped_mean: f64,
}

/// Held-out `log mu_E(s'|s)` of expert models trained on the same `k`
/// trajectories with each input-noise mode and the same initialization.
pub fn noise_ablation(
    cfg: &RunConfig,
    expert: &ExpertArtifacts,
    k: usize,
    seed: u64,
) -> Result<Vec<NoiseScore>> {
    let env = cfg.env_kind()?;
    let train = expert_dataset(&env, &expert.policy, k, seed)?;
    let heldout = gen_expert_dataset(
        &env,
        &expert.policy,
        HELDOUT_EPISODES,
        false,
        dataset_seed(seed) + 500_000,
    )?;
    let data = expert_transitions(&heldout)?;
    [NoiseMode::LinearDecay, NoiseMode::Constant, NoiseMode::None]
        .into_iter()
        .map(|mode| {
            let mut c = cfg.clone();
            c.expert_model.noise = mode;
            let model = fit_expert_model(&c, &train, seed)?;
            let mut lp = model.log_prob(data.x.view(), data.cond.view())?.to_vec();
            let n = lp.len() as f64;
            let mean = lp.iter().sum::<f64>() / n;
            let clipped_mean = lp.iter().map(|&v| cfg.clip.apply(v)).sum::<f64>() / n;
            lp.sort_by(f64::total_cmp);
            let mid = lp.len() / 2;
            let median = if lp.len() % 2 == 1 {
                lp[mid]
            } else {
                0.5 * (lp[mid - 1] + lp[mid])
            };
            Ok(NoiseScore {
                mode,
                mean,
                median,
                clipped_mean,
            })
        })
        .collect()
}
