use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcbgen::backend::{Backend, BackendKind};
use pcbgen::config::ExperimentConfig;
use pcbgen::formats::{read_geometry, read_json, write_geometry};
use pcbgen::runner::{run_pipeline, stage_generate, stage_optimize, stage_select, stage_tolerance};
use pcbgen::store::{load_store, verify_scores};
use pcbgen::{render, Error, Result};
use pcbgen_core::geometry::DimensionSet;
use pcbgen_core::placement::batch_stats;

/// Generative PCB antenna prototyping from fixed-size rectangles.
#[derive(Parser)]
#[command(name = "pcbgen", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the backend named in the config.
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Exchange directory for the file-exchange backend.
    #[arg(long)]
    exchange_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self, work_dir: &Path) -> Result<(ExperimentConfig, Backend)> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(k) = self.backend {
            cfg.backend.kind = k;
        }
        if let Some(d) = &self.exchange_dir {
            cfg.backend.exchange_dir = Some(d.clone());
        }
        let backend = Backend::from_config(&cfg.backend, work_dir)?;
        Ok((cfg, backend))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Rank candidate dimension sets by the median score of random placements.
    SelectDims {
        #[command(flatten)]
        common: Common,
        /// Per-candidate score table.
        #[arg(long)]
        out: PathBuf,
    },
    /// Place a dimension set with the classifier-filtered generator.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Dimension set JSON, as written by select-dims.
        #[arg(long)]
        dims: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tune a model with the trust-region optimizer.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Starting geometry JSON.
        #[arg(long)]
        start: PathBuf,
        #[arg(long)]
        budget: Option<usize>,
        /// Output directory for trace, model and response.
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate randomly perturbed copies of a model.
    Tolerance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dimension selection, generation, tuning and tolerance in one run.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Run directory; defaults to the config's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write plot-ready CSV and PGM files for a run directory.
    Render {
        #[arg(long)]
        run: PathBuf,
    },
    /// Per-iteration score statistics of a dataset store.
    DatasetStats {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        bin_width: f64,
        /// Recompute every stored score against this config's target.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn stats_dir(out: &Path) -> PathBuf {
    out.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn run(cli: Cli) -> Result<i32> {
    match cli.cmd {
        Command::SelectDims { common, out } => {
            let dir = stats_dir(&out).join("select");
            let (cfg, backend) = common.load(&dir)?;
            let sel = stage_select(&cfg, &backend, &dir)?;
            std::fs::copy(dir.join("stats.csv"), &out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            println!("chosen {} ({})", sel.chosen.id, dir.join("chosen.json").display());
            Ok(0)
        }
        Command::Generate { common, dims, out } => {
            let (cfg, backend) = common.load(&out)?;
            let dims: DimensionSet = read_json(&dims)?;
            let (gen, _) = stage_generate(&cfg, &dims, &backend, &out)?;
            let best = gen.best.first().map_or(f64::NAN, |r| r.score.0);
            println!("{} records, best score {best}", gen.store.len());
            Ok(0)
        }
        Command::Optimize { common, start, budget, out } => {
            let (mut cfg, backend) = common.load(&out)?;
            if let Some(b) = budget {
                cfg.tuner.budget = b;
            }
            let model = read_geometry(&start)?;
            let res = stage_optimize(&cfg, &model, &backend, &out)?;
            println!("score {} after {} evaluations", res.score.0, res.evaluations);
            Ok(if res.score.meets_target() { 0 } else { 1 })
        }
        Command::Tolerance { common, model, runs, out } => {
            let (mut cfg, backend) = common.load(&out)?;
            if let Some(n) = runs {
                cfg.tolerance.n_runs = n;
            }
            let m = read_geometry(&model)?;
            let res = stage_tolerance(&cfg, &m, &backend, &out)?;
            write_geometry(&out.join("model.json"), &m)?;
            println!("{}/{} perturbed runs meet the target", res.passed, res.runs.len());
            Ok(0)
        }
        Command::Pipeline { common, out } => {
            let cfg_probe = ExperimentConfig::load(&common.config)?;
            let dir = out
                .or(cfg_probe.out_dir)
                .ok_or_else(|| Error::Config("no run directory: pass --out or set out_dir".into()))?;
            let (cfg, backend) = common.load(&dir)?;
            let outcome = run_pipeline(&cfg, &backend, &dir)?;
            println!(
                "chosen {}, final score {}, manifest {}",
                outcome.chosen.id, outcome.final_score.0, outcome.manifest.digest
            );
            Ok(outcome.exit_code())
        }
        Command::Render { run } => {
            let files = render::render_report(&run)?;
            for f in files {
                println!("{}", f.display());
            }
            Ok(0)
        }
        Command::DatasetStats { store, bin_width, config } => {
            let s = load_store(&store)?;
            if let Some(c) = config {
                verify_scores(&s, &ExperimentConfig::load(&c)?.target)?;
            }
            println!("iteration,n,median,min,histogram_lo,histogram_counts");
            for b in batch_stats(&s, bin_width) {
                let counts: Vec<String> = b.histogram.counts.iter().map(usize::to_string).collect();
                println!(
                    "{},{},{},{},{},{}",
                    b.iteration,
                    b.n,
                    b.median,
                    b.min,
                    b.histogram.lo,
                    counts.join(" ")
                );
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
