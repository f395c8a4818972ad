//! End-to-end pipeline: select dimensions, generate placements, tune when
//! needed, then run the tolerance study. Every file a stage writes lands in
//! that stage's subdirectory and is hashed into `manifest.json`.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use log::info;
use pcbgen_core::dim_select::{export_stats, select, Selection};
use pcbgen_core::geometry::{AntennaModel, DimensionSet};
use pcbgen_core::placement::{run_generation, GenerationResult};
use pcbgen_core::scoring::{score, FrequencyResponse, Score};
use pcbgen_core::sim::{SimRequest, Simulator};
use pcbgen_core::tuner::{optimize, tolerance_study, OptimizeResult, ToleranceResult};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::write_checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{io_err, Error, Result};
use crate::formats::{training_log_csv, write_geometry, write_json, write_response_csv};
use crate::store::save_store;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".lock";

/// Exclusive ownership of a run directory, released on drop.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(io_err(&path)(e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub stage: String,
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub status: String,
    #[serde(default)]
    pub failed_stage: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub final_score: Option<f64>,
    /// Hash over every artifact's path and content hash.
    pub digest: String,
    pub artifacts: Vec<Artifact>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    pcbgen_core::seed::hex(&Sha256::digest(bytes))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        let rel = path.strip_prefix(root).unwrap_or(&path).to_path_buf();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(rel);
        }
    }
    Ok(())
}

/// Hashes every stage artifact under `dir`. The manifest itself, the lock
/// and rendered reports are not artifacts.
pub fn scan_artifacts(dir: &Path) -> Result<Vec<Artifact>> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    let mut out = Vec::new();
    for rel in files {
        let name = rel.to_string_lossy().replace('\\', "/");
        if name == MANIFEST_FILE || name == LOCK_FILE || name.starts_with("report/") {
            continue;
        }
        let full = dir.join(&rel);
        let bytes = fs::read(&full).map_err(io_err(&full))?;
        let stage = name.split('/').next().filter(|_| name.contains('/')).unwrap_or("run");
        out.push(Artifact {
            stage: stage.to_string(),
            path: name.clone(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
    }
    out.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(out)
}

pub fn manifest_digest(artifacts: &[Artifact]) -> String {
    let mut text = String::new();
    for a in artifacts {
        let _ = writeln!(text, "{} {}", a.sha256, a.path);
    }
    sha256_hex(text.as_bytes())
}

fn write_manifest(
    dir: &Path,
    failed: Option<(&str, &Error)>,
    final_score: Option<f64>,
) -> Result<Manifest> {
    let artifacts = scan_artifacts(dir)?;
    let m = Manifest {
        status: if failed.is_some() { "failed" } else { "complete" }.to_string(),
        failed_stage: failed.map(|(s, _)| s.to_string()),
        error: failed.map(|(_, e)| e.to_string()),
        final_score,
        digest: manifest_digest(&artifacts),
        artifacts,
    };
    write_json(&dir.join(MANIFEST_FILE), &m)?;
    Ok(m)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::MissingManifest(dir.to_path_buf()));
    }
    crate::formats::read_json(&path)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// Dimension selection. Writes `stats.csv`, `chosen.json` and the sample
/// store under `dir`.
pub fn stage_select<S: Simulator + ?Sized>(cfg: &ExperimentConfig, backend: &S, dir: &Path) -> Result<Selection> {
    ensure_dir(dir)?;
    let sel = select(&cfg.design_space(), &cfg.candidate_sets(), &cfg.selector_config(), backend)?;
    write_text(&dir.join("stats.csv"), &export_stats(&sel.stats))?;
    write_json(&dir.join("chosen.json"), &sel.chosen)?;
    save_store(&dir.join("store"), &sel.records)?;
    info!("selected dimension set {}", sel.chosen.id);
    Ok(sel)
}

/// Generative placement. Writes the store, the iteration log, the best
/// model and the classifier under `dir`.
pub fn stage_generate<S: Simulator + ?Sized>(
    cfg: &ExperimentConfig,
    dims: &DimensionSet,
    backend: &S,
    dir: &Path,
) -> Result<(GenerationResult, AntennaModel)> {
    ensure_dir(dir)?;
    let space = cfg.design_space();
    let gen = run_generation(&space, dims, &cfg.generator_config(), backend, &cfg.target, None)?;
    save_store(&dir.join("store"), gen.store.records())?;
    let mut log = String::from("iteration,threshold,proposals,rejected,duplicates,failures,relaxed,median,min,train_epochs\n");
    for l in &gen.log {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let _ = writeln!(
            log,
            "{},{},{},{},{},{},{},{},{},{}",
            l.iteration,
            opt(l.threshold.map(|t| t.to_string())),
            l.proposals,
            l.rejected,
            l.duplicates,
            l.failures,
            l.relaxed,
            l.median,
            l.min,
            opt(l.train_epochs.map(|e| e.to_string()))
        );
    }
    write_text(&dir.join("iterations.csv"), &log)?;
    let best = gen
        .best
        .first()
        .ok_or_else(|| Error::Config("generation produced no records".into()))?;
    let model = best.model(&space)?;
    write_geometry(&dir.join("best.json"), &model)?;
    write_response_csv(&dir.join("best_response.csv"), &best.response)?;
    if let Some(c) = &gen.classifier {
        write_checkpoint(&dir.join("classifier.ckpt"), c)?;
        write_text(&dir.join("training_log.csv"), &training_log_csv(&c.meta.log))?;
    }
    Ok((gen, model))
}

pub fn trace_csv(res: &OptimizeResult) -> String {
    let mut out = format!("eval,kind,value,best,radius,accepted,{}\n", res.params.names().join(","));
    for e in &res.trace {
        let kind = serde_json::to_value(e.kind)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        let xs: Vec<String> = e.x.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.eval,
            kind,
            e.value,
            e.best,
            e.radius,
            e.accepted,
            xs.join(",")
        );
    }
    out
}

pub fn stage_optimize<S: Simulator + ?Sized>(
    cfg: &ExperimentConfig,
    start: &AntennaModel,
    backend: &S,
    dir: &Path,
) -> Result<OptimizeResult> {
    ensure_dir(dir)?;
    let freqs = cfg.freqs.freqs()?;
    let res = optimize(start, &cfg.tuner, backend, &cfg.target, &freqs)?;
    write_text(&dir.join("trace.csv"), &trace_csv(&res))?;
    write_geometry(&dir.join("model.json"), &res.best)?;
    write_response_csv(&dir.join("response.csv"), &res.response)?;
    info!(
        "tuner: score {:.3} after {} evaluations ({:?})",
        res.score.0, res.evaluations, res.stop
    );
    Ok(res)
}

/// `curves.csv` (one column per run after the baseline) and `runs.csv`.
pub fn stage_tolerance<S: Simulator + ?Sized>(
    cfg: &ExperimentConfig,
    model: &AntennaModel,
    backend: &S,
    dir: &Path,
) -> Result<ToleranceResult> {
    ensure_dir(dir)?;
    let freqs = cfg.freqs.freqs()?;
    let res = tolerance_study(model, &cfg.tolerance_config(), backend, &cfg.target, &freqs)?;
    write_text(&dir.join("curves.csv"), &tolerance_curves_csv(&res))?;
    let mut runs = String::from("run,score,passed,attempts\n");
    for (i, r) in res.runs.iter().enumerate() {
        let _ = writeln!(runs, "{},{},{},{}", i + 1, r.score.0, r.score.meets_target(), r.attempts);
    }
    write_text(&dir.join("runs.csv"), &runs)?;
    Ok(res)
}

pub fn tolerance_curves_csv(res: &ToleranceResult) -> String {
    let mut out = String::from("freq_ghz,baseline");
    for i in 1..=res.runs.len() {
        let _ = write!(out, ",run_{i}");
    }
    out.push('\n');
    for (k, (f, base)) in res.baseline.iter().enumerate() {
        let _ = write!(out, "{f},{base}");
        for r in &res.runs {
            let _ = write!(out, ",{}", r.response.s11_db()[k]);
        }
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, Serialize)]
struct Summary<'a> {
    name: &'a str,
    backend: &'a str,
    chosen: &'a str,
    generated_best: f64,
    optimized: bool,
    final_score: f64,
    tolerance_pass_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct PipelineOutcome {
    pub chosen: DimensionSet,
    pub final_model: AntennaModel,
    pub final_response: FrequencyResponse,
    pub final_score: Score,
    pub optimized: bool,
    pub manifest: Manifest,
}

impl PipelineOutcome {
    /// Process exit code: 0 exactly when the final design meets the target.
    pub fn exit_code(&self) -> i32 {
        if self.final_score.meets_target() {
            0
        } else {
            1
        }
    }
}

/// Runs every stage into `dir`, which must not already hold a run. On a
/// stage error the artifacts written so far stay in place and the manifest
/// records the failing stage.
pub fn run_pipeline<S: Simulator + ?Sized>(cfg: &ExperimentConfig, backend: &S, dir: &Path) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let _lock = RunLock::acquire(dir)?;
    if dir.join(MANIFEST_FILE).exists() {
        return Err(Error::Config(format!("{} already holds a run", dir.display())));
    }
    let mut stored = cfg.clone();
    stored.out_dir = None;
    write_json(&dir.join("config.json"), &stored)?;

    let mut stage = "select-dims";
    let result = (|| -> Result<PipelineOutcome> {
        let sel = stage_select(cfg, backend, &dir.join("select"))?;

        stage = "generate";
        let (gen, generated) = stage_generate(cfg, &sel.chosen, backend, &dir.join("generate"))?;
        let best = &gen.best[0];

        let (final_model, final_response, final_score, optimized) = if best.score.meets_target() {
            (generated, best.response.clone(), best.score, false)
        } else {
            stage = "optimize";
            let res = stage_optimize(cfg, &generated, backend, &dir.join("optimize"))?;
            (res.best, res.response, res.score, true)
        };

        stage = "tolerance";
        let tol = stage_tolerance(cfg, &final_model, backend, &dir.join("tolerance"))?;

        stage = "final";
        let fin = dir.join("final");
        ensure_dir(&fin)?;
        write_geometry(&fin.join("model.json"), &final_model)?;
        write_response_csv(&fin.join("response.csv"), &final_response)?;
        write_json(
            &fin.join("summary.json"),
            &Summary {
                name: &cfg.name,
                backend: backend.name(),
                chosen: &sel.chosen.id,
                generated_best: best.score.0,
                optimized,
                final_score: final_score.0,
                tolerance_pass_fraction: tol.pass_fraction(),
            },
        )?;
        let manifest = write_manifest(dir, None, Some(final_score.0))?;
        Ok(PipelineOutcome {
            chosen: sel.chosen,
            final_model,
            final_response,
            final_score,
            optimized,
            manifest,
        })
    })();

    result.map_err(|e| {
        let _ = write_manifest(dir, Some((stage, &e)), None);
        Error::Stage {
            stage,
            source: Box::new(e),
        }
    })
}

/// Scores a model once on the configured grid.
pub fn evaluate_model<S: Simulator + ?Sized>(
    cfg: &ExperimentConfig,
    model: &AntennaModel,
    backend: &S,
) -> Result<(FrequencyResponse, Score)> {
    let freqs = cfg.freqs.freqs()?;
    let resp = backend.simulate(&SimRequest::new(model, &freqs)?)?;
    let s = score(&resp, &cfg.target)?;
    Ok((resp, s))
}
