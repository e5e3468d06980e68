use std::fs;
use std::process::Command;

use soiltdm::harness::metrics::{
    aggregate, bootstrap_ci, relative_return, spearman, summary_csv, SummaryRow,
};
use soiltdm::harness::run::{
    checkpoint_count, execute, load_checkpoint, prepare_expert, write_run_dir,
};
use soiltdm::harness::sweep::{parallel_map, run_sweep, SweepSpec};
use soiltdm::harness::{
    emit_metrics, plot_svg, read_summary, summarize_run, Method, Profile, RunConfig, Selection,
};
use soiltdm::sac::EntropyMode;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_soiltdm"))
}

/// A configuration small enough to run in seconds.
fn tiny(method: Method) -> RunConfig {
    let mut cfg = RunConfig::new(Profile::Desk, "lingauss", method).unwrap();
    for (k, v) in [
        ("expert.kind", "lqr"),
        ("expert_model.steps", "50"),
        ("run.epochs", "3"),
        ("run.steps_per_epoch", "50"),
        ("run.updates_per_epoch", "10"),
        ("run.model_updates_per_epoch", "10"),
        ("run.model_batch", "32"),
        ("run.eval_episodes", "2"),
        ("run.window", "2"),
        ("sac.batch_size", "32"),
        ("k", "1"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

fn row(method: &str, k: usize, seed: u64, rel: f64) -> SummaryRow {
    SummaryRow {
        method: method.into(),
        env: "lingauss".into(),
        k,
        seed,
        selected_by: if method == "soiltdm" {
            "kld"
        } else {
            "est_reward"
        }
        .into(),
        return_abs: -2.0 / rel,
        return_relative_to_expert: rel,
        checkpoint: 0,
    }
}

#[test]
fn config_snapshot_round_trips_for_every_profile_and_method() {
    for profile in [Profile::Desk, Profile::Paper] {
        for env in ["lingauss", "pointmass2d", "pendulum"] {
            for method in [
                Method::SoilTdm,
                Method::Form,
                Method::AblationExpertOnly,
                Method::SacEnvReward,
            ] {
                let cfg = RunConfig::new(profile, env, method).unwrap();
                assert_eq!(RunConfig::parse_text(&cfg.to_text()).unwrap(), cfg);
            }
        }
    }
    let paper = RunConfig::new(Profile::Paper, "lingauss", Method::SoilTdm).unwrap();
    assert_eq!(paper.run.model_batch, 2048);
    assert_eq!(paper.run.sac.gamma, 0.9);
}

#[test]
fn unknown_and_duplicate_keys_are_rejected() {
    assert!(RunConfig::parse_text("env = lingauss\nrun.epochz = 3\n").is_err());
    assert!(RunConfig::parse_text("run.epochs = 3\nrun.epochs = 4\n").is_err());
    assert!(RunConfig::parse_text("run.epochs = three\n").is_err());
    assert!(RunConfig::parse_text("just words\n").is_err());
    let cfg =
        RunConfig::parse_text("# comment\nmethod = form\nrun.epochs = 7 # trailing\n").unwrap();
    assert_eq!((cfg.method, cfg.run.epochs), (Method::Form, 7));
    assert!(cfg.with_overrides(&["nope=1".into()]).is_err());
    assert!(cfg.with_overrides(&["run.epochs".into()]).is_err());
    assert_eq!(
        cfg.with_overrides(&["run.epochs=9".into()])
            .unwrap()
            .run
            .epochs,
        9
    );
}

#[test]
fn switching_method_keeps_explicit_changes_and_method_defaults() {
    let mut cfg = RunConfig::new(Profile::Desk, "lingauss", Method::SoilTdm).unwrap();
    cfg.set("run.epochs", "12").unwrap();
    cfg.set("clip.low", "-10").unwrap();
    let form = cfg.for_method(Method::Form).unwrap();
    assert_eq!(form.method, Method::Form);
    assert_eq!((form.run.epochs, form.clip.low), (12, -10.0));
    assert_eq!(form.run.sac.entropy_mode, EntropyMode::Auto);
    assert_eq!(cfg.run.sac.entropy_mode, EntropyMode::Fixed);
}

#[test]
fn expert_on_itself_is_exactly_one() {
    for r in [-2.7, 3.5, -1e-3, 120.0] {
        assert_eq!(relative_return(r, r), 1.0);
    }
    assert!(relative_return(-4.0, -2.0) < 1.0 && relative_return(-1.0, -2.0) > 1.0);
    assert!(relative_return(5.0, 10.0) < 1.0);
}

#[test]
fn empty_run_directory_is_an_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_metrics(dir.path()).is_err());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
    assert!(emit_metrics(&dir.path().join("missing")).is_err());
}

#[test]
fn aggregate_matches_recomputation_from_seed_rows() {
    let rows: Vec<SummaryRow> = [(1, 0.8), (2, 0.95), (3, 1.1)]
        .iter()
        .map(|&(s, r)| row("soiltdm", 10, s, r))
        .collect();
    let agg = aggregate(&rows);
    assert_eq!(agg.len(), 1);
    let a = &agg[0];
    assert_eq!(a.n_seeds, 3);
    assert!((a.mean_relative - (0.8 + 0.95 + 1.1) / 3.0).abs() < 1e-15);
    // With three seeds the extreme resample means each have probability
    // 1/27 > 2.5%, so the percentile interval spans exactly [min, max].
    assert!(
        (a.ci_low - 0.8).abs() < 1e-12 && (a.ci_high - 1.1).abs() < 1e-12,
        "{a:?}"
    );
    assert_eq!(bootstrap_ci(&[0.7]), (0.7, 0.7));
    let many: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
    let (lo, hi) = bootstrap_ci(&many);
    let mean = many.iter().sum::<f64>() / 40.0;
    let se = (many.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 39.0 / 40.0).sqrt();
    assert!(
        (lo - (mean - 1.96 * se)).abs() < 0.03 && (hi - (mean + 1.96 * se)).abs() < 0.03,
        "{lo} {hi}"
    );
}

#[test]
fn spearman_examples() {
    let a = [1.0, 2.0, 3.0, 4.0];
    assert!((spearman(&a, &[10.0, 8.0, 3.0, -1.0]).unwrap() + 1.0).abs() < 1e-15);
    assert!((spearman(&a, &[1.0, 4.0, 9.0, 16.0]).unwrap() - 1.0).abs() < 1e-15);
    // Ties share ranks: ranks (0.5, 0.5, 2, 3) against (0, 1, 2, 3).
    let rho = spearman(&[1.0, 1.0, 2.0, 3.0], &a).unwrap();
    assert!((rho - 0.948_683_298_050_513_8).abs() < 1e-12, "{rho}");
    assert!(spearman(&a, &a[..3]).is_err());
}

#[test]
fn plots_are_deterministic_and_show_series_and_bands() {
    let single = vec![row("soiltdm", 10, 1, 0.9)];
    let svg = plot_svg(&single, Selection::Own).unwrap();
    assert_eq!(svg.matches("<circle").count(), 1);
    assert!(!svg.contains("fill-opacity") && !svg.contains("stroke-opacity"));

    let mut two = Vec::new();
    for (s, r) in [(1, 0.9), (2, 1.0), (3, 1.05)] {
        two.push(row("soiltdm", 1, s, r));
        two.push(row("soiltdm", 10, s, r + 0.02));
        two.push(row("ablation_expert_only", 1, s, r - 0.3));
        two.push(row("ablation_expert_only", 10, s, r - 0.1));
    }
    let svg = plot_svg(&two, Selection::Own).unwrap();
    assert!(svg.contains(">soiltdm</text>") && svg.contains(">ablation_expert_only</text>"));
    assert_eq!(svg.matches("fill-opacity").count(), 2);
    assert_eq!(svg, plot_svg(&two, Selection::Own).unwrap());
    let golden =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/plot_two_methods.svg");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&golden, &svg).unwrap();
    }
    assert_eq!(svg, fs::read_to_string(&golden).unwrap());
    assert!(plot_svg(&two, Selection::TrueReward).is_err());
}

#[test]
fn summary_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![row("soiltdm", 1, 1, 0.9), row("form", 10, 2, 0.5)];
    let path = dir.path().join("summary.csv");
    fs::write(&path, summary_csv(&rows).unwrap()).unwrap();
    assert_eq!(read_summary(&path).unwrap(), rows);
    let header = fs::read_to_string(&path).unwrap();
    assert!(
        header.starts_with("method,env,K,seed,selected_by,return_abs,return_relative_to_expert")
    );
}

#[test]
fn parallel_map_keeps_order() {
    let items: Vec<u64> = (0..50).collect();
    assert_eq!(
        parallel_map(&items, 4, |x| x * x),
        items.iter().map(|x| x * x).collect::<Vec<_>>()
    );
    assert!(parallel_map(&[] as &[u64], 3, |x| *x).is_empty());
}

#[test]
fn run_directory_holds_config_metrics_checkpoints_and_selection() {
    let cfg = tiny(Method::SoilTdm);
    let expert = prepare_expert(&cfg).unwrap();
    let out = execute(&cfg, &expert, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run_dir(dir.path(), &out).unwrap();
    let snapshot = fs::read_to_string(dir.path().join("config.cfg")).unwrap();
    let mut expected = cfg.clone();
    expected.seeds = vec![5];
    assert_eq!(snapshot, expected.to_text());
    let per_epoch = fs::read_to_string(dir.path().join("per_epoch.csv")).unwrap();
    assert!(per_epoch.starts_with(
        "epoch,env_steps,kld_raw,kld_window,mean_reward_estimate,env_return,train_return,nll_mu_phi,nll_mu_eta\n"
    ));
    assert_eq!(per_epoch.lines().count(), 4);
    assert_eq!(checkpoint_count(dir.path()).unwrap(), 3);
    assert_eq!(
        load_checkpoint(dir.path(), 2).unwrap(),
        out.result.checkpoints[2]
    );
    let rows = summarize_run(dir.path()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].selected_by, "kld");
    assert_eq!(rows[0].checkpoint, out.result.selected.unwrap());
    assert_eq!(rows[1].checkpoint, out.result.best_by_return().unwrap());
    let marker = fs::read_to_string(dir.path().join("selected.txt")).unwrap();
    assert!(marker.starts_with(&format!("kld {}\n", rows[0].checkpoint)));

    let status = bin()
        .args(["eval", "--episodes", "2", "--run"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let eval = fs::read_to_string(dir.path().join("eval.csv")).unwrap();
    assert_eq!(eval.lines().count(), 4);
    let out = bin()
        .args(["select", "--by", "true_reward", "--run"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("true_reward checkpoint"));
}

#[test]
fn sweep_merges_runs_by_method_k_and_seed() {
    let cfg = tiny(Method::SoilTdm);
    let root = tempfile::tempdir().unwrap();
    let spec = SweepSpec {
        methods: vec![Method::AblationExpertOnly, Method::SacEnvReward],
        ks: vec![1, 2],
        seeds: vec![1, 2],
        threads: 2,
    };
    let rows = run_sweep(&cfg, &spec, root.path()).unwrap();
    // Ablation: own criterion and true reward; SAC: true reward only.
    assert_eq!(rows.len(), 2 * 2 * 2 + 2 * 2);
    assert_eq!(
        read_summary(&root.path().join("summary.csv")).unwrap(),
        rows
    );
    for f in ["aggregate.csv", "plot.svg"] {
        assert!(root.path().join(f).exists());
    }
    assert!(root
        .path()
        .join("ablation_expert_only_lingauss_k2_s1/per_epoch.csv")
        .exists());
    let header = fs::read_to_string(
        root.path()
            .join("sac_env_reward_lingauss_k1_s2/per_epoch.csv"),
    )
    .unwrap();
    assert!(header.starts_with("epoch,env_steps,train_reward_raw,train_reward_window"));
}

#[test]
fn cli_exit_codes() {
    let out = bin().arg("--no-such-flag").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let help = String::from_utf8_lossy(&out.stdout);
    for sub in [
        "gen-expert",
        "train-expert-model",
        "train",
        "eval",
        "select",
        "oracle",
        "ablate",
        "plot",
    ] {
        assert!(help.contains(sub), "{sub} missing from help");
    }

    let out = bin().args(["oracle", "--seeds", "20"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let table = String::from_utf8_lossy(&out.stdout);
    assert_eq!(table.lines().count(), 5);
    assert!(table.lines().skip(1).all(|l| l.ends_with(",true")));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "run.epochz = 3\n").unwrap();
    let out = bin()
        .args(["train", "--seed", "1", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1);
    assert!(err.contains("run.epochz"));

    let out = bin()
        .args(["select", "--run"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn gen_expert_and_train_expert_model_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "gen-expert",
            "--set",
            "expert.kind=lqr",
            "--set",
            "k=2",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let data = soiltdm::envs::ExpertDataset::load(&dir.path().join("dataset.bin")).unwrap();
    assert_eq!(data.n_episodes(), 2);
    let model = dir.path().join("model.bin");
    let out = bin()
        .args([
            "train-expert-model",
            "--set",
            "expert_model.steps=20",
            "--dataset",
        ])
        .arg(dir.path().join("dataset.bin"))
        .arg("--heldout")
        .arg(dir.path().join("dataset.bin"))
        .arg("--out")
        .arg(&model)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("held-out log-likelihood"));
    assert!(model.exists());
}
