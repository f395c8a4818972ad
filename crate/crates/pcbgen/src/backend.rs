//! Simulation backends that need the standard library: a thread-pool
//! wrapper and the file-exchange bridge to external solvers.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use pcbgen_core::scoring::FrequencyResponse;
use pcbgen_core::sim::{sim_error, OracleConfig, SimRequest, Simulator, Surrogate};
use pcbgen_core::Result as CoreResult;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::formats::GeometryJson;
use crate::touchstone::read_s1p;

/// Worker threads for batch simulation.
pub const WORKERS_ENV: &str = "PCBGEN_WORKERS";

/// `PCBGEN_WORKERS` when set to a positive integer, else the available
/// parallelism.
pub fn workers_from_env() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs batches on scoped worker threads. Results keep request order, so
/// the output does not depend on the worker count.
#[derive(Clone, Debug)]
pub struct Parallel<S> {
    pub inner: S,
    pub workers: usize,
}

impl<S> Parallel<S> {
    pub fn new(inner: S, workers: usize) -> Self {
        Parallel {
            inner,
            workers: workers.max(1),
        }
    }

    pub fn from_env(inner: S) -> Self {
        Parallel::new(inner, workers_from_env())
    }
}

impl<S: Simulator + Sync> Simulator for Parallel<S> {
    fn simulate(&self, req: &SimRequest<'_>) -> CoreResult<FrequencyResponse> {
        self.inner.simulate(req)
    }

    fn simulate_batch(&self, reqs: &[SimRequest<'_>]) -> Vec<CoreResult<FrequencyResponse>> {
        if self.workers == 1 || reqs.len() < 2 {
            return self.inner.simulate_batch(reqs);
        }
        let chunk = reqs.len().div_ceil(self.workers);
        thread::scope(|s| {
            let handles: Vec<_> = reqs
                .chunks(chunk)
                .map(|part| s.spawn(move || self.inner.simulate_batch(part)))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("simulation worker panicked"))
                .collect()
        })
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}

/// Job file handed to an external solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExchangeJob {
    pub geometry: GeometryJson,
    pub freqs_ghz: Vec<f64>,
}

/// Writes each request to `jobs/{key}.json` and reads the solver's answer
/// from `results/{key}.s1p`. The key is a digest of the job file, so
/// identical requests map to the same result. A missing result is a
/// simulation error naming the expected path; rerun once the solver is done.
///
/// The returned response must sample exactly the requested grid (to within
/// 1e-9 relative, which absorbs unit conversion).
#[derive(Clone, Debug)]
pub struct FileExchange {
    pub dir: PathBuf,
}

impl FileExchange {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FileExchange { dir: dir.into() }
    }

    pub fn job_key(job: &ExchangeJob) -> String {
        let bytes = serde_json::to_vec(job).expect("job serializes");
        let d = Sha256::digest(&bytes);
        pcbgen_core::seed::hex(&d[..16])
    }

    pub fn job_path(&self, key: &str) -> PathBuf {
        self.dir.join("jobs").join(format!("{key}.json"))
    }

    pub fn result_path(&self, key: &str) -> PathBuf {
        self.dir.join("results").join(format!("{key}.s1p"))
    }

    fn post(&self, path: &Path, job: &ExchangeJob) -> std::io::Result<()> {
        if path.exists() {
            return Ok(());
        }
        fs::create_dir_all(self.dir.join("jobs"))?;
        fs::create_dir_all(self.dir.join("results"))?;
        let text = serde_json::to_string_pretty(job).expect("job serializes");
        // write then rename, so a solver polling jobs/ never sees half a file
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, path)
    }
}

fn grid_matches(got: &[f64], want: &[f64]) -> bool {
    got.len() == want.len()
        && got
            .iter()
            .zip(want)
            .all(|(a, b)| (a - b).abs() <= 1e-9 * b.abs().max(1.0))
}

impl Simulator for FileExchange {
    fn simulate(&self, req: &SimRequest<'_>) -> CoreResult<FrequencyResponse> {
        let job = ExchangeJob {
            geometry: GeometryJson::from_model(req.model),
            freqs_ghz: req.freqs.to_vec(),
        };
        let key = Self::job_key(&job);
        let job_path = self.job_path(&key);
        self.post(&job_path, &job)
            .map_err(|e| sim_error(req.model, format!("{}: {e}", job_path.display())))?;
        let result = self.result_path(&key);
        if !result.exists() {
            return Err(sim_error(
                req.model,
                format!("no solver result yet, expected {}", result.display()),
            ));
        }
        let resp = read_s1p(&result).map_err(|e| sim_error(req.model, e.to_string()))?;
        if !grid_matches(resp.freqs(), req.freqs) {
            return Err(sim_error(
                req.model,
                format!("{} does not sample the requested frequency grid", result.display()),
            ));
        }
        FrequencyResponse::new(req.freqs.to_vec(), resp.s11_db().to_vec())
    }

    fn name(&self) -> &str {
        "file-exchange"
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    #[default]
    Surrogate,
    FileExchange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub oracle: OracleConfig,
    /// Exchange directory for the file-exchange backend.
    pub exchange_dir: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Surrogate,
            oracle: OracleConfig::default(),
            exchange_dir: None,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Backend {
    Surrogate(Parallel<Surrogate>),
    FileExchange(FileExchange),
}

impl Backend {
    /// `fallback_dir` holds exchange files when the config names none.
    pub fn from_config(cfg: &BackendConfig, fallback_dir: &Path) -> crate::Result<Self> {
        Ok(match cfg.kind {
            BackendKind::Surrogate => {
                cfg.oracle.check()?;
                Backend::Surrogate(Parallel::from_env(Surrogate::new(cfg.oracle)))
            }
            BackendKind::FileExchange => Backend::FileExchange(FileExchange::new(
                cfg.exchange_dir.clone().unwrap_or_else(|| fallback_dir.join("exchange")),
            )),
        })
    }
}

impl Simulator for Backend {
    fn simulate(&self, req: &SimRequest<'_>) -> CoreResult<FrequencyResponse> {
        match self {
            Backend::Surrogate(s) => s.simulate(req),
            Backend::FileExchange(f) => f.simulate(req),
        }
    }

    fn simulate_batch(&self, reqs: &[SimRequest<'_>]) -> Vec<CoreResult<FrequencyResponse>> {
        match self {
            Backend::Surrogate(s) => s.simulate_batch(reqs),
            Backend::FileExchange(f) => f.simulate_batch(reqs),
        }
    }

    fn name(&self) -> &str {
        match self {
            Backend::Surrogate(s) => s.name(),
            Backend::FileExchange(f) => f.name(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::touchstone::write_s1p;
    use pcbgen_core::geometry::{random_model, DesignSpace, DimensionSet};
    use pcbgen_core::seed::rng;

    fn models(n: u64) -> Vec<pcbgen_core::geometry::AntennaModel> {
        let space = DesignSpace::new(30.0, 6.0);
        let dims = DimensionSet::from_pairs("d", &[(1.0, 4.0), (12.0, 1.0), (6.0, 2.0)]);
        (0..n).map(|s| random_model(&space, &dims, &mut rng(s)).unwrap()).collect()
    }

    #[test]
    fn parallel_batches_match_serial() {
        let freqs = pcbgen_core::sim::FrequencyGrid::default().freqs().unwrap();
        let ms = models(7);
        let reqs: Vec<_> = ms.iter().map(|m| SimRequest::new(m, &freqs).unwrap()).collect();
        let serial = Surrogate::default().simulate_batch(&reqs);
        for w in [1, 2, 3, 8] {
            let par = Parallel::new(Surrogate::default(), w).simulate_batch(&reqs);
            assert_eq!(par, serial, "{w} workers");
        }
    }

    #[test]
    fn file_exchange_posts_jobs_and_reads_results() {
        let dir = tempfile::tempdir().unwrap();
        let fx = FileExchange::new(dir.path());
        let freqs = vec![2.0, 2.5, 3.0];
        let m = &models(1)[0];
        let req = SimRequest::new(m, &freqs).unwrap();

        let err = fx.simulate(&req).unwrap_err().to_string();
        assert!(err.contains("no solver result yet"), "{err}");
        let jobs: Vec<_> = fs::read_dir(dir.path().join("jobs")).unwrap().collect();
        assert_eq!(jobs.len(), 1);
        let job: ExchangeJob =
            serde_json::from_str(&fs::read_to_string(jobs[0].as_ref().unwrap().path()).unwrap()).unwrap();
        assert_eq!(job.freqs_ghz, freqs);
        assert_eq!(job.geometry.to_model().unwrap().port, m.port);

        let key = FileExchange::job_key(&job);
        // a solver answering in MHz: the grid matches after conversion
        fs::write(
            fx.result_path(&key),
            "# MHZ S DB R 50\n2000 -3 0\n2500 -12.5 0\n3000 -4 0\n",
        )
        .unwrap();
        let r = fx.simulate(&req).unwrap();
        assert_eq!(r.freqs(), &freqs[..]);
        assert_eq!(r.s11_db(), &[-3.0, -12.5, -4.0]);
        assert_eq!(fx.simulate(&req).unwrap(), r);

        let off = FrequencyResponse::new(vec![2.0, 2.5, 3.1], vec![-1.0; 3]).unwrap();
        write_s1p(&fx.result_path(&key), &off).unwrap();
        assert!(fx.simulate(&req).unwrap_err().to_string().contains("frequency grid"));
    }
}
