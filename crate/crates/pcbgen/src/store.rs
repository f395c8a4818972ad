//! On-disk dataset store: `manifest.jsonl` plus `images/{id}.pgm` and
//! `responses/{id}.csv`. Records are only ever appended.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use pcbgen_core::classifier::DatasetRecord;
use pcbgen_core::geometry::{ComponentPos, DimensionSet};
use pcbgen_core::placement::DatasetStore;
use pcbgen_core::scoring::{score, Score, TargetSpec};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::formats::{read_pgm, read_response_csv, write_pgm, write_response_csv};

pub const MANIFEST: &str = "manifest.jsonl";

/// One manifest line. Image and response live in their own files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub id: String,
    pub iteration: usize,
    pub score: f64,
    pub dims: DimensionSet,
    pub positions: Vec<ComponentPos>,
    #[serde(default)]
    pub predicted: Option<f64>,
    #[serde(default)]
    pub threshold: Option<f64>,
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
}

impl RecordEntry {
    fn of(r: &DatasetRecord) -> Self {
        RecordEntry {
            id: r.id.clone(),
            iteration: r.iteration,
            score: r.score.0,
            dims: r.dims.clone(),
            positions: r.positions.clone(),
            predicted: r.predicted,
            threshold: r.threshold,
            width: r.image.width(),
            height: r.image.height(),
            resolution: r.image.resolution(),
        }
    }
}

pub struct StoreWriter {
    dir: PathBuf,
    manifest: BufWriter<File>,
}

impl StoreWriter {
    /// Opens a store directory for appending, creating it when missing.
    pub fn open(dir: &Path) -> Result<Self> {
        for sub in ["images", "responses"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let path = dir.join(MANIFEST);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        Ok(StoreWriter {
            dir: dir.to_path_buf(),
            manifest: BufWriter::new(file),
        })
    }

    /// Writes image and response first, so a manifest line never points at
    /// missing files.
    pub fn append(&mut self, r: &DatasetRecord) -> Result<()> {
        write_pgm(&self.dir.join("images").join(format!("{}.pgm", r.id)), &r.image)?;
        write_response_csv(&self.dir.join("responses").join(format!("{}.csv", r.id)), &r.response)?;
        let path = self.dir.join(MANIFEST);
        let line = serde_json::to_string(&RecordEntry::of(r)).map_err(crate::error::json_err(&path))?;
        writeln!(self.manifest, "{line}").map_err(io_err(&path))?;
        self.manifest.flush().map_err(io_err(&path))
    }
}

pub fn save_store(dir: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut w = StoreWriter::open(dir)?;
    for r in records {
        w.append(r)?;
    }
    Ok(())
}

pub fn read_entries(dir: &Path) -> Result<Vec<RecordEntry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::format("store manifest", format!("line {}: {e}", i + 1)).in_file(&path))
        })
        .collect()
}

pub fn load_store(dir: &Path) -> Result<DatasetStore> {
    let mut store = DatasetStore::new();
    for e in read_entries(dir)? {
        let image = read_pgm(&dir.join("images").join(format!("{}.pgm", e.id)), e.resolution)?;
        if (image.width(), image.height()) != (e.width, e.height) {
            return Err(Error::format("store", format!("image {} has the wrong shape", e.id)));
        }
        let response = read_response_csv(&dir.join("responses").join(format!("{}.csv", e.id)))?;
        store.append(DatasetRecord {
            id: e.id,
            iteration: e.iteration,
            image,
            response,
            score: Score(e.score),
            dims: e.dims,
            positions: e.positions,
            predicted: e.predicted,
            threshold: e.threshold,
        })?;
    }
    Ok(store)
}

/// Recomputes every score from its stored response; mismatches are errors.
pub fn verify_scores(store: &DatasetStore, target: &TargetSpec) -> Result<()> {
    for r in store.records() {
        let s = score(&r.response, target)?;
        if s.0.to_bits() != r.score.0.to_bits() {
            return Err(Error::format(
                "store",
                format!("record {}: stored score {} but response gives {}", r.id, r.score.0, s.0),
            ));
        }
    }
    Ok(())
}
