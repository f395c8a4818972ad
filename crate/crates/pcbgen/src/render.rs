//! Plot-ready CSV and PGM report for a run directory.
//!
//! Everything is derived from the stage artifacts, so rendering twice
//! produces the same bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pcbgen_core::dim_select::{export_stats, DimensionStats};
use pcbgen_core::scoring::Score;
use pcbgen_core::stats::{median, Histogram};

use crate::error::{io_err, Result};
use crate::runner::read_manifest;
use crate::store::{read_entries, RecordEntry, MANIFEST};

pub const REPORT_DIR: &str = "report";
pub const HISTOGRAM_BIN_DB: f64 = 0.5;
pub const BEST_IMAGES: usize = 5;

/// Per-iteration `iteration,n,median,min` rows.
pub fn iteration_curve_csv(entries: &[RecordEntry]) -> String {
    let mut out = String::from("iteration,n,median,min\n");
    for (k, scores) in by_iteration(entries) {
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let _ = writeln!(out, "{k},{},{},{}", scores.len(), median(&scores).unwrap_or(f64::NAN), min);
    }
    out
}

/// Per-iteration histogram rows `iteration,bin_lo,bin_hi,count`.
pub fn histogram_csv(entries: &[RecordEntry], width: f64) -> String {
    let mut out = String::from("iteration,bin_lo,bin_hi,count\n");
    for (k, scores) in by_iteration(entries) {
        if let Some(h) = Histogram::new(&scores, width) {
            for ((lo, hi), c) in h.edges().zip(&h.counts) {
                let _ = writeln!(out, "{k},{lo},{hi},{c}");
            }
        }
    }
    out
}

fn by_iteration(entries: &[RecordEntry]) -> BTreeMap<usize, Vec<f64>> {
    let mut m: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for e in entries {
        m.entry(e.iteration).or_default().push(e.score);
    }
    m
}

fn copy(src: &Path, dst: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    if src.is_file() {
        fs::copy(src, dst).map_err(io_err(src))?;
        written.push(dst.to_path_buf());
    }
    Ok(())
}

fn put(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text).map_err(io_err(&path))?;
    written.push(path);
    Ok(())
}

/// Writes `report/` inside `run` and returns the files written. Stages that
/// did not run are skipped, so partial runs render too.
pub fn render_report(run: &Path) -> Result<Vec<PathBuf>> {
    read_manifest(run)?;
    let out = run.join(REPORT_DIR);
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let mut written = Vec::new();

    let select_store = run.join("select/store");
    if select_store.join(MANIFEST).is_file() {
        let entries = read_entries(&select_store)?;
        let mut per: Vec<(String, Vec<Score>)> = Vec::new();
        for e in &entries {
            match per.iter_mut().find(|(id, _)| *id == e.dims.id) {
                Some((_, v)) => v.push(Score(e.score)),
                None => per.push((e.dims.id.clone(), vec![Score(e.score)])),
            }
        }
        let stats: Vec<DimensionStats> = per
            .into_iter()
            .filter_map(|(id, s)| DimensionStats::from_scores(id, s))
            .collect();
        put(out.join("candidate_scores.csv"), &export_stats(&stats), &mut written)?;
        let mut medians = String::from("candidate,n,median\n");
        for s in &stats {
            let _ = writeln!(medians, "{},{},{}", s.id, s.scores.len(), s.median.0);
        }
        put(out.join("candidate_medians.csv"), &medians, &mut written)?;
    }

    let gen_store = run.join("generate/store");
    if gen_store.join(MANIFEST).is_file() {
        let entries = read_entries(&gen_store)?;
        put(out.join("iteration_scores.csv"), &iteration_curve_csv(&entries), &mut written)?;
        put(
            out.join("iteration_histograms.csv"),
            &histogram_csv(&entries, HISTOGRAM_BIN_DB),
            &mut written,
        )?;
        let mut ranked: Vec<&RecordEntry> = entries.iter().collect();
        ranked.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.id.cmp(&b.id)));
        let mut table = String::from("rank,id,iteration,score\n");
        for (i, e) in ranked.iter().take(BEST_IMAGES).enumerate() {
            let rank = i + 1;
            let _ = writeln!(table, "{rank},{},{},{}", e.id, e.iteration, e.score);
            copy(
                &gen_store.join("images").join(format!("{}.pgm", e.id)),
                &out.join(format!("best_{rank}.pgm")),
                &mut written,
            )?;
            copy(
                &gen_store.join("responses").join(format!("{}.csv", e.id)),
                &out.join(format!("best_{rank}_s11.csv")),
                &mut written,
            )?;
        }
        put(out.join("best_models.csv"), &table, &mut written)?;
    }

    copy(&run.join("generate/training_log.csv"), &out.join("training_log.csv"), &mut written)?;
    copy(&run.join("optimize/trace.csv"), &out.join("optimize_trace.csv"), &mut written)?;
    copy(&run.join("optimize/response.csv"), &out.join("optimized_s11.csv"), &mut written)?;
    copy(&run.join("tolerance/curves.csv"), &out.join("tolerance_curves.csv"), &mut written)?;
    copy(&run.join("tolerance/runs.csv"), &out.join("tolerance_runs.csv"), &mut written)?;
    copy(&run.join("final/response.csv"), &out.join("final_s11.csv"), &mut written)?;
    Ok(written)
}
