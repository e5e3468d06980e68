use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::Method;
use super::run::{csv_err, PER_EPOCH_FILE, RUN_INFO_FILE, SUMMARY_FILE};
use crate::error::{Error, Result};
use crate::soiltdm::{select_by, Direction, KldTrace};

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Return normalized so that the expert scores 1. Negative (cost-like)
/// returns use `expert / return`, positive ones `return / expert`.
pub fn relative_return(ret: f64, expert: f64) -> f64 {
    if expert < 0.0 {
        if ret < 0.0 {
            expert / ret
        } else {
            1.0 + (ret - expert) / expert.abs()
        }
    } else {
        ret / expert
    }
}

/// One selected checkpoint of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub env: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub selected_by: String,
    pub return_abs: f64,
    pub return_relative_to_expert: f64,
    pub checkpoint: usize,
}

/// Label of a method's own selection criterion, if it differs from the
/// true reward.
pub fn criterion_label(method: Method) -> Option<&'static str> {
    match method {
        Method::SoilTdm => Some("kld"),
        Method::Form | Method::AblationExpertOnly => Some("est_reward"),
        Method::SacEnvReward => None,
    }
}

fn read_run_info(dir: &Path) -> Result<BTreeMap<String, String>> {
    let path = dir.join(RUN_INFO_FILE);
    if !path.exists() {
        return Err(Error::Config(format!(
            "{} holds no run ({RUN_INFO_FILE} missing)",
            dir.display()
        )));
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut map = BTreeMap::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        map.insert(rec[0].to_string(), rec[1].to_string());
    }
    Ok(map)
}

fn info<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    map.get(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Format(format!("run info lacks a valid '{key}'")))
}

fn parse_cell(s: &str) -> Result<f64> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse()
        .map_err(|_| Error::Format(format!("bad number '{s}' in {PER_EPOCH_FILE}")))
}

/// `(criterion_raw, env_return)` columns of a `per_epoch.csv`.
pub fn read_per_epoch(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    if !path.exists() {
        return Err(Error::Config(format!("{} is missing", path.display())));
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let crit = header
        .iter()
        .position(|h| h.ends_with("_raw"))
        .ok_or_else(|| Error::Format("per-epoch metrics lack a criterion column".into()))?;
    let ret = col("env_return")
        .ok_or_else(|| Error::Format("per-epoch metrics lack env_return".into()))?;
    let (mut c, mut e) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        c.push(parse_cell(&rec[crit])?);
        e.push(parse_cell(&rec[ret])?);
    }
    Ok((c, e))
}

/// Checkpoint with the highest value; ties go to the later one. NaNs are skipped.
pub fn argmax_later(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| v >= values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Computes the selected checkpoints of a run directory from its
/// `run_info.csv` and `per_epoch.csv` and writes `summary.csv`. Nothing is
/// written when the directory holds no complete run.
pub fn emit_metrics(dir: &Path) -> Result<Vec<SummaryRow>> {
    let rows = summarize_run(dir)?;
    write_atomic(&dir.join(SUMMARY_FILE), summary_csv(&rows)?.as_bytes())?;
    Ok(rows)
}

/// The rows `emit_metrics` would write.
pub fn summarize_run(dir: &Path) -> Result<Vec<SummaryRow>> {
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "{} is not a directory",
            dir.display()
        )));
    }
    let info_map = read_run_info(dir)?;
    let (crit, returns) = read_per_epoch(&dir.join(PER_EPOCH_FILE))?;
    if crit.is_empty() {
        return Err(Error::Config(format!("{} has no epochs", dir.display())));
    }
    let method: Method = info_map
        .get("method")
        .ok_or_else(|| Error::Format("run info lacks 'method'".into()))?
        .parse()?;
    let expert: f64 = info(&info_map, "expert_return")?;
    let window: usize = info(&info_map, "window")?;
    let direction = match info_map.get("direction").map(String::as_str) {
        Some("minimize") => Direction::Minimize,
        Some("maximize") => Direction::Maximize,
        _ => return Err(Error::Format("run info lacks a valid 'direction'".into())),
    };
    let base = |label: &str, ckpt: usize| SummaryRow {
        method: method.to_string(),
        env: info_map["env"].clone(),
        k: info(&info_map, "k").unwrap_or(0),
        seed: info(&info_map, "seed").unwrap_or(0),
        selected_by: label.to_string(),
        return_abs: returns[ckpt],
        return_relative_to_expert: relative_return(returns[ckpt], expert),
        checkpoint: ckpt,
    };
    let mut rows = Vec::new();
    if let Some(label) = criterion_label(method) {
        let sel = select_by(&KldTrace::from_values(crit, window)?, direction)?;
        rows.push(base(label, sel));
    }
    if let Some(best) = argmax_later(&returns) {
        rows.push(base("true_reward", best));
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    if rows.is_empty() {
        w.write_record([
            "method",
            "env",
            "K",
            "seed",
            "selected_by",
            "return_abs",
            "return_relative_to_expert",
            "checkpoint",
        ])
        .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("utf-8 csv"))
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|x| x.map_err(csv_err)).collect()
}

/// Sorts rows by (method, env, K, seed, selected_by) and drops duplicates
/// of that key, keeping the last one.
pub fn merge_rows(rows: impl IntoIterator<Item = SummaryRow>) -> Vec<SummaryRow> {
    let mut map = BTreeMap::new();
    for r in rows {
        map.insert(
            (
                r.method.clone(),
                r.env.clone(),
                r.k,
                r.seed,
                r.selected_by.clone(),
            ),
            r,
        );
    }
    map.into_values().collect()
}

pub const BOOTSTRAP_RESAMPLES: usize = 2000;
pub const BOOTSTRAP_SEED: u64 = 0xb007_5742;

/// Percentile bootstrap 95% interval of the mean with a fixed RNG seed.
pub fn bootstrap_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    if n == 1 {
        return (values[0], values[0]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut means: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| {
        let pos = q * (means.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        means[lo] + (means[hi] - means[lo]) * (pos - lo as f64)
    };
    (at(0.025), at(0.975))
}

/// Mean and bootstrap interval of the relative return over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub env: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub selected_by: String,
    pub n_seeds: usize,
    pub mean_return_abs: f64,
    pub mean_relative: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn aggregate(rows: &[SummaryRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, String, usize, String), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.method.clone(), r.env.clone(), r.k, r.selected_by.clone()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((method, env, k, selected_by), rs)| {
            let rel: Vec<f64> = rs.iter().map(|r| r.return_relative_to_expert).collect();
            let n = rel.len() as f64;
            let (ci_low, ci_high) = bootstrap_ci(&rel);
            AggregateRow {
                method,
                env,
                k,
                selected_by,
                n_seeds: rs.len(),
                mean_return_abs: rs.iter().map(|r| r.return_abs).sum::<f64>() / n,
                mean_relative: rel.iter().sum::<f64>() / n,
                ci_low,
                ci_high,
            }
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Format(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("utf-8 csv"))
}

/// Spearman rank correlation; tied values share their mean rank.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Config(
            "rank correlation needs two equal series of length >= 2".into(),
        ));
    }
    let ranks = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let mean_rank = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = mean_rank;
            }
            i = j + 1;
        }
        r
    };
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}
