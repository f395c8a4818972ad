use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use pcbgen::backend::{BackendKind, FileExchange};
use pcbgen::config::ExperimentConfig;
use pcbgen::render::render_report;
use pcbgen::runner::{read_manifest, run_pipeline, RunLock};
use pcbgen::store::{load_store, verify_scores};
use pcbgen::Error;
use pcbgen_core::sim::Surrogate;

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

/// Example 1 at test-sized budgets.
fn small(q_factor: f64) -> ExperimentConfig {
    let mut c = ExperimentConfig::load(&config_path("example1.json")).unwrap();
    c.selector.n_p = 8;
    c.generator.n_batch = 45;
    c.generator.n_iter = 2;
    c.generator.train.max_epochs = 4;
    c.generator.max_proposals_per_accept = 100;
    c.tuner.budget = 40;
    c.tolerance.n_runs = 3;
    c.backend.oracle.q_factor = q_factor;
    c.validate().unwrap();
    c
}

fn sur(c: &ExperimentConfig) -> Surrogate {
    Surrogate::new(c.backend.oracle)
}

fn files(dir: &Path) -> BTreeSet<String> {
    fn walk(root: &Path, d: &Path, out: &mut BTreeSet<String>) {
        for e in fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(dir, dir, &mut out);
    out
}

#[test]
fn example_configs_parse() {
    let one = ExperimentConfig::load(&config_path("example1.json")).unwrap();
    assert_eq!((one.space.w, one.space.h), (30.0, 6.0));
    assert_eq!(one.candidates.len(), 5);
    assert!(one.candidates.iter().all(|c| c.dims.len() == 5));
    assert_eq!(one.target.bands.len(), 2);

    let two = ExperimentConfig::load(&config_path("example2.json")).unwrap();
    assert_eq!((two.space.w, two.space.h), (22.0, 5.0));
    assert!(two.candidates.iter().all(|c| c.dims.len() == 6));
    assert!(two.candidates.iter().any(|c| c.id == "set6'"));
    assert!(!two.space.keepouts.is_empty());
}

#[test]
fn mismatched_config_file_names_the_set() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config_path("example1.json"))
        .unwrap()
        .replace("[[1, 4], [6, 4], [8, 3], [10, 2], [2, 3]]", "[[1, 4], [6, 4], [8, 3], [10, 2]]");
    let path = dir.path().join("bad.json");
    fs::write(&path, text).unwrap();
    let err = ExperimentConfig::load(&path).unwrap_err().to_string();
    assert!(err.contains("candidate set 'set3' has 4 components, expected 5"), "{err}");
}

#[test]
fn pipeline_writes_every_stage_and_renders() {
    let cfg = small(4.0);
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = run_pipeline(&cfg, &sur(&cfg), &run).unwrap();
    let m = read_manifest(&run).unwrap();
    assert_eq!(m.status, "complete");
    assert_eq!(m.final_score, Some(out.final_score.0));
    assert_eq!(out.exit_code() == 0, out.final_score.0 <= 0.0);
    assert!(!run.join(".lock").exists());

    let stages: BTreeSet<&str> = m.artifacts.iter().map(|a| a.stage.as_str()).collect();
    for s in ["run", "select", "generate", "tolerance", "final"] {
        assert!(stages.contains(s), "{s} missing from {stages:?}");
    }
    assert_eq!(stages.contains("optimize"), out.optimized);

    for store in ["select/store", "generate/store"] {
        verify_scores(&load_store(&run.join(store)).unwrap(), &cfg.target).unwrap();
    }

    let written = render_report(&run).unwrap();
    let report = run.join("report");
    let names = files(&report);
    for want in [
        "candidate_scores.csv",
        "candidate_medians.csv",
        "iteration_scores.csv",
        "iteration_histograms.csv",
        "best_models.csv",
        "best_1.pgm",
        "best_1_s11.csv",
        "training_log.csv",
        "tolerance_curves.csv",
        "tolerance_runs.csv",
        "final_s11.csv",
    ] {
        assert!(names.contains(want), "{want} missing from {names:?}");
    }
    assert_eq!(written.len(), names.len());
    let medians = fs::read_to_string(report.join("candidate_medians.csv")).unwrap();
    assert_eq!(medians.lines().count(), 1 + cfg.candidates.len());
    let iters = fs::read_to_string(report.join("iteration_scores.csv")).unwrap();
    assert_eq!(iters.lines().count(), 1 + cfg.generator.n_iter);

    // rendering again gives the same bytes and leaves the manifest valid
    let before: Vec<Vec<u8>> = written.iter().map(|p| fs::read(p).unwrap()).collect();
    let again = render_report(&run).unwrap();
    assert_eq!(again, written);
    let after: Vec<Vec<u8>> = again.iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(before, after);
    assert_eq!(read_manifest(&run).unwrap(), m);

    // a run directory is used once
    let err = run_pipeline(&cfg, &sur(&cfg), &run).unwrap_err();
    assert!(err.to_string().contains("already holds a run"), "{err}");
}

#[test]
fn failing_generation_still_tunes() {
    // with the default Q no random layout gets near the target
    let cfg = small(30.0);
    let dir = tempfile::tempdir().unwrap();
    let out = run_pipeline(&cfg, &sur(&cfg), dir.path()).unwrap();
    assert!(out.optimized);
    assert_eq!(out.exit_code(), 1);
    let trace = fs::read_to_string(dir.path().join("optimize/trace.csv")).unwrap();
    assert!(trace.starts_with("eval,kind,value,best,radius,accepted,w1,h1,x1,"), "{}", &trace[..80]);
    assert!(trace.lines().count() - 1 <= cfg.tuner.budget);
}

#[test]
fn identical_runs_share_a_digest() {
    let cfg = small(4.0);
    let dir = tempfile::tempdir().unwrap();
    let a = run_pipeline(&cfg, &sur(&cfg), &dir.path().join("a")).unwrap();
    let b = run_pipeline(&cfg, &sur(&cfg), &dir.path().join("b")).unwrap();
    assert_eq!(a.manifest.digest, b.manifest.digest);
    assert_eq!(a.manifest.artifacts, b.manifest.artifacts);

    let mut other = cfg.clone();
    other.seed += 1;
    let c = run_pipeline(&other, &sur(&other), &dir.path().join("c")).unwrap();
    assert_ne!(c.manifest.digest, a.manifest.digest);
}

#[test]
fn stage_errors_keep_partial_artifacts() {
    let mut cfg = small(4.0);
    cfg.backend.kind = BackendKind::FileExchange;
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    // no solver answers, so the first simulation fails
    let fx = FileExchange::new(dir.path().join("exchange"));
    match run_pipeline(&cfg, &fx, &run).unwrap_err() {
        Error::Stage { stage, source } => {
            assert_eq!(stage, "select-dims");
            assert!(source.to_string().contains("no solver result yet"), "{source}");
        }
        e => panic!("unexpected error {e}"),
    }
    let m = read_manifest(&run).unwrap();
    assert_eq!(m.status, "failed");
    assert_eq!(m.failed_stage.as_deref(), Some("select-dims"));
    assert!(m.artifacts.iter().any(|a| a.path == "config.json"));
    assert!(fs::read_dir(dir.path().join("exchange/jobs")).unwrap().count() >= 1);
    // partial runs render what they have
    render_report(&run).unwrap();
}

#[test]
fn render_needs_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(render_report(dir.path()), Err(Error::MissingManifest(_))));
}

#[test]
fn run_directory_lock_is_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let lock = RunLock::acquire(dir.path()).unwrap();
    let cfg = small(4.0);
    assert!(matches!(run_pipeline(&cfg, &sur(&cfg), dir.path()), Err(Error::Locked(_))));
    drop(lock);
    assert!(RunLock::acquire(dir.path()).is_ok());
}

#[test]
fn cli_pipeline_render_and_stats() {
    let exe = env!("CARGO_BIN_EXE_pcbgen");
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("small.json");
    fs::write(&cfg_path, serde_json::to_string(&small(4.0)).unwrap()).unwrap();
    let run = dir.path().join("run");

    let out = Command::new(exe)
        .args(["pipeline", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&run)
        .env("PCBGEN_WORKERS", "2")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    let m = read_manifest(&run).unwrap();
    let want = if m.final_score.unwrap() <= 0.0 { 0 } else { 1 };
    assert_eq!(out.status.code(), Some(want), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains(&m.digest));

    let render = Command::new(exe).args(["render", "--run"]).arg(&run).output().unwrap();
    assert!(render.status.success());
    assert!(String::from_utf8_lossy(&render.stdout).contains("final_s11.csv"));

    let stats = Command::new(exe)
        .args(["dataset-stats", "--store"])
        .arg(run.join("generate/store"))
        .arg("--config")
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(stats.status.success(), "{}", String::from_utf8_lossy(&stats.stderr));
    let text = String::from_utf8_lossy(&stats.stdout);
    assert_eq!(text.lines().count(), 3);

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let bad = Command::new(exe).args(["render", "--run"]).arg(&empty).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("no manifest"));
}

#[test]
fn cli_stage_commands_chain() {
    let exe = env!("CARGO_BIN_EXE_pcbgen");
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("small.json");
    fs::write(&cfg_path, serde_json::to_string(&small(4.0)).unwrap()).unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(exe)
            .args(args)
            .arg("--config")
            .arg(&cfg_path)
            .env("RUST_LOG", "warn")
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(out.status.code().is_some_and(|c| c < 2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["select-dims", "--out", "stats.csv"]);
    assert!(dir.path().join("stats.csv").is_file());
    run(&["generate", "--dims", "select/chosen.json", "--out", "gen"]);
    run(&["optimize", "--start", "gen/best.json", "--budget", "40", "--out", "opt"]);
    run(&["tolerance", "--model", "opt/model.json", "--runs", "2", "--out", "tol"]);
    let curves = fs::read_to_string(dir.path().join("tol/curves.csv")).unwrap();
    assert!(curves.starts_with("freq_ghz,baseline,run_1,run_2\n"));
}
