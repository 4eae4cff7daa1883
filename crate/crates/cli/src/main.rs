//! `smoothda` command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when the
//! filter diverged or a numerical failure stopped the work. Every invocation
//! that starts work leaves a `manifest.json` in the output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use smoothda::experiments::{
    free_run_spectrum_study, inclusive_range, run_twin_experiment, semi_joint_tune, smoothing_diagnostics,
    tune_baseline, ExperimentConfig, TuningGrid, TwinData, DEFAULT_END_TIME,
};
use smoothda::models::write_truth_csv;
use smoothda::Error;

#[derive(Debug, Parser)]
#[command(name = "smoothda", version, about = "Lorenz 96 twin experiments for the ETKF with spectrum smoothing")]
struct Cli {
    /// More log output on stderr (repeat for more).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Spin up and write the truth trajectory.
    Truth {
        #[command(flatten)]
        common: Common,
    },
    /// Run one twin experiment.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Semi-joint grid search over inflation, localization and kernel width.
    Tune {
        #[command(flatten)]
        common: Common,
        /// Inflation grid `start:stop:step`.
        #[arg(long, default_value = "1:1.2:0.01")]
        rho: String,
        /// Localization half-width grid `start:stop:step`.
        #[arg(long, default_value = "1:15:1")]
        c: String,
        /// Kernel width grid `start:stop:step`.
        #[arg(long, default_value = "0.1:1:0.1")]
        sigma: String,
        /// Tune inflation and localization only, without smoothing.
        #[arg(long)]
        baseline_only: bool,
        /// Worker threads for grid cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Free-run mean power spectra for several ensemble sizes.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Comma-separated ensemble sizes.
        #[arg(long, value_delimiter = ',', default_value = "10,20,1000")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_END_TIME)]
        end_time: f64,
    },
    /// Record how smoothing changes the prior covariance at given times.
    Diagnose {
        #[command(flatten)]
        common: Common,
        /// Comma-separated snapshot times; each must be an assimilation time.
        #[arg(long, value_delimiter = ',', default_value = "45,90,135,180")]
        times: Vec<f64>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Truth { common }
            | Command::Run { common }
            | Command::Tune { common, .. }
            | Command::Spectrum { common, .. }
            | Command::Diagnose { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Truth { .. } => "truth",
            Command::Run { .. } => "run",
            Command::Tune { .. } => "tune",
            Command::Spectrum { .. } => "spectrum",
            Command::Diagnose { .. } => "diagnose",
        }
    }
}

/// How a command that started work ended.
enum Status {
    Ok,
    Diverged(String),
}

struct Report {
    status: Status,
    outputs: Vec<String>,
    summary: serde_json::Value,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    status: &'a str,
    message: Option<String>,
    wall_time_secs: f64,
    outputs: Vec<String>,
    summary: serde_json::Value,
    config: &'a ExperimentConfig,
}

fn parse_grid(flag: &str, text: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("--{flag} expects numbers, got {text:?}"))?;
    match nums[..] {
        [v] => Ok(vec![v]),
        [start, stop, step] => Ok(inclusive_range(start, stop, step)?),
        _ => bail!("--{flag} expects start:stop:step or a single value, got {text:?}"),
    }
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let text =
        fs::read_to_string(&common.config).with_context(|| format!("reading {}", common.config.display()))?;
    let mut cfg = ExperimentConfig::from_toml_str(&text).with_context(|| format!("parsing {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    Ok(cfg)
}

fn create(dir: &Path, name: &str, outputs: &mut Vec<String>) -> Result<BufWriter<File>, Error> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::Io(format!("creating {}: {e}", path.display())))?;
    outputs.push(name.to_string());
    Ok(BufWriter::new(file))
}

fn execute(command: &Command, cfg: &ExperimentConfig, out: &Path) -> Result<Report, Error> {
    let mut outputs = Vec::new();
    match command {
        Command::Truth { .. } => {
            let data = TwinData::generate(cfg)?;
            let mut truth = vec![data.initial_truth.clone()];
            truth.extend(data.truth.iter().cloned());
            write_truth_csv(
                create(out, "truth.csv", &mut outputs)?,
                &truth,
                cfg.observation.steps_per_cycle,
                cfg.model.dt,
            )?;
            let summary = json!({ "cycles": cfg.run.n_cycles, "dimension": cfg.model.dimension });
            Ok(Report { status: Status::Ok, outputs, summary })
        }
        Command::Run { .. } => {
            let result = run_twin_experiment(cfg)?;
            result.write_csv(create(out, "rmse.csv", &mut outputs)?)?;
            let status = match &result.outcome {
                smoothda::experiments::Outcome::Completed => Status::Ok,
                smoothda::experiments::Outcome::Diverged { cycle, reason } => {
                    Status::Diverged(format!("diverged after cycle {cycle}: {reason}"))
                }
            };
            let summary = json!({
                "time_averaged_rmse": finite_or_null(result.time_averaged_rmse),
                "cycles_completed": result.rmse_series.len(),
                "outcome": result.outcome,
            });
            Ok(Report { status, outputs, summary })
        }
        Command::Tune { rho, c, sigma, baseline_only, jobs, .. } => {
            let grid = TuningGrid {
                inflation: parse_grid("rho", rho).map_err(|e| Error::InvalidParameter(format!("{e:#}")))?,
                localization: parse_grid("c", c).map_err(|e| Error::InvalidParameter(format!("{e:#}")))?,
                sigma: parse_grid("sigma", sigma).map_err(|e| Error::InvalidParameter(format!("{e:#}")))?,
            };
            let report =
                if *baseline_only { tune_baseline(cfg, &grid, *jobs)? } else { semi_joint_tune(cfg, &grid, *jobs)? };
            report.write_csv(create(out, "tuning.csv", &mut outputs)?)?;
            let summary = json!({
                "cells": report.cells.len(),
                "baseline": report.baseline,
                "best": report.best,
            });
            let status = match report.best() {
                Ok(_) => Status::Ok,
                Err(e) => Status::Diverged(e.to_string()),
            };
            Ok(Report { status, outputs, summary })
        }
        Command::Spectrum { sizes, end_time, .. } => {
            let study = free_run_spectrum_study(cfg, sizes, *end_time, cfg.filter.sigma > 0.0)?;
            study.write_csv(create(out, "spectrum.csv", &mut outputs)?)?;
            let summary = json!({ "sizes": sizes, "end_time": end_time, "sigma": cfg.filter.sigma });
            Ok(Report { status: Status::Ok, outputs, summary })
        }
        Command::Diagnose { times, .. } => {
            let (diag, result) = smoothing_diagnostics(cfg, times)?;
            diag.write_csv(create(out, "diagnostics.csv", &mut outputs)?)?;
            result.write_csv(create(out, "rmse.csv", &mut outputs)?)?;
            let status = if result.diverged() {
                Status::Diverged(format!("diverged: {:?}", result.outcome))
            } else {
                Status::Ok
            };
            let summary = json!({
                "snapshots": diag.snapshots.len(),
                "time_averaged_rmse": finite_or_null(result.time_averaged_rmse),
            });
            Ok(Report { status, outputs, summary })
        }
    }
}

fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        serde_json::Value::Null
    }
}

fn is_numerical(e: &Error) -> bool {
    matches!(
        e,
        Error::NumericalOverflow { .. }
            | Error::NumericalFailure { .. }
            | Error::SymmetryViolation { .. }
            | Error::ImaginaryResidue { .. }
            | Error::DegenerateEnsemble(_)
            | Error::TuningFailure { .. }
    )
}

fn write_manifest(out: &Path, manifest: &Manifest<'_>) -> anyhow::Result<()> {
    let file = File::create(out.join("manifest.json")).context("creating manifest.json")?;
    serde_json::to_writer_pretty(BufWriter::new(file), manifest)?;
    Ok(())
}

fn run(cli: Cli) -> ExitCode {
    let common = cli.command.common();
    let cfg = match load_config(common) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = fs::create_dir_all(&common.out) {
        eprintln!("error: creating {}: {e}", common.out.display());
        return ExitCode::from(1);
    }

    let start = Instant::now();
    let outcome = execute(&cli.command, &cfg, &common.out);
    let wall = start.elapsed().as_secs_f64();

    let (code, status, message, outputs, summary) = match outcome {
        Ok(Report { status: Status::Ok, outputs, summary }) => (0, "ok", None, outputs, summary),
        Ok(Report { status: Status::Diverged(msg), outputs, summary }) => (2, "diverged", Some(msg), outputs, summary),
        Err(e) => {
            let code = if is_numerical(&e) { 2 } else { 1 };
            (code, "error", Some(e.to_string()), Vec::new(), serde_json::Value::Null)
        }
    };
    let manifest = Manifest {
        command: cli.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.run.seed,
        status,
        message: message.clone(),
        wall_time_secs: wall,
        outputs,
        summary,
        config: &cfg,
    };
    if let Err(e) = write_manifest(&common.out, &manifest) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    if let Some(msg) = message {
        eprintln!("{status}: {msg}");
    }
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    run(cli)
}
