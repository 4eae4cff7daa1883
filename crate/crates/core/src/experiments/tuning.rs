//! Semi-joint grid search over inflation, localization and kernel width.
//!
//! Stage 1 searches (inflation, localization) without smoothing, stage 2
//! searches the kernel width at the stage-1 optimum, and stage 3 searches
//! (inflation, localization) again at the chosen width.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::config::ExperimentConfig;
use crate::experiments::twin::{run_with_data, TwinData};
use crate::filter::SmoothingMode;

/// Values `start, start + step, ...` up to and including `stop`, each rounded
/// to 12 decimals so that accumulated floating error does not leak into the grid.
pub fn inclusive_range(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || !step.is_finite() {
        return Err(Error::InvalidParameter(format!("bad grid {start}:{stop}:{step}")));
    }
    if stop < start {
        return Err(Error::InvalidParameter(format!("grid stop {stop} is below start {start}")));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningGrid {
    pub inflation: Vec<f64>,
    pub localization: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl TuningGrid {
    /// Inflation 1..1.2 by 0.01, half-width 1..15 by 1, kernel width 0.1..1 by 0.1.
    pub fn standard() -> Self {
        Self {
            inflation: inclusive_range(1.0, 1.2, 0.01).expect("static grid"),
            localization: inclusive_range(1.0, 15.0, 1.0).expect("static grid"),
            sigma: inclusive_range(0.1, 1.0, 0.1).expect("static grid"),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.inflation.is_empty() || self.localization.is_empty() || self.sigma.is_empty() {
            return Err(Error::InvalidParameter("tuning grids must be nonempty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TuningCell {
    /// Stage (1, 2 or 3) in which the cell was first evaluated.
    pub stage: u8,
    pub inflation: f64,
    pub localization: f64,
    pub sigma: f64,
    pub mode: SmoothingMode,
    /// Time-averaged RMSE; NaN when diverged.
    pub rmse: f64,
    pub diverged: bool,
}

impl TuningCell {
    fn score(&self) -> f64 {
        if self.diverged || !self.rmse.is_finite() {
            f64::INFINITY
        } else {
            self.rmse
        }
    }

    /// `base` with this cell's filter settings.
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        base.with_filter(self.inflation, Some(self.localization), self.sigma, self.mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningReport {
    /// Every distinct cell evaluated, in evaluation order.
    pub cells: Vec<TuningCell>,
    /// Best stage-1 cell (no smoothing).
    pub baseline: Option<TuningCell>,
    /// Best cell after the final stage.
    pub best: Option<TuningCell>,
}

impl TuningReport {
    /// The optimum, or a tuning failure when every cell diverged.
    pub fn best(&self) -> Result<&TuningCell> {
        self.best.as_ref().ok_or(Error::TuningFailure { cells: self.cells.len() })
    }

    pub fn baseline(&self) -> Result<&TuningCell> {
        self.baseline.as_ref().ok_or(Error::TuningFailure { cells: self.cells.len() })
    }

    /// CSV `rho,c,sigma,rmse,diverged`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rho", "c", "sigma", "rmse", "diverged"])?;
        for c in &self.cells {
            w.write_record([
                format!("{}", c.inflation),
                format!("{}", c.localization),
                format!("{}", c.sigma),
                format!("{}", c.rmse),
                c.diverged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

type CellKey = (u64, u64, u64, SmoothingMode);

fn key(rho: f64, c: f64, sigma: f64, mode: SmoothingMode) -> CellKey {
    (rho.to_bits(), c.to_bits(), sigma.to_bits(), mode)
}

/// Evaluates grid cells on shared twin data, caching repeated cells.
struct Evaluator<'a> {
    base: &'a ExperimentConfig,
    data: TwinData,
    pool: rayon::ThreadPool,
    cache: HashMap<CellKey, TuningCell>,
    order: Vec<CellKey>,
}

impl<'a> Evaluator<'a> {
    fn new(base: &'a ExperimentConfig, jobs: usize) -> Result<Self> {
        let data = TwinData::generate(base)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
        Ok(Self { base, data, pool, cache: HashMap::new(), order: Vec::new() })
    }

    /// Scores `(rho, c, sigma, mode)` candidates; returns cells in input order.
    fn evaluate(&mut self, stage: u8, candidates: &[(f64, f64, f64, SmoothingMode)]) -> Result<Vec<TuningCell>> {
        let mut todo: Vec<(f64, f64, f64, SmoothingMode)> = Vec::new();
        for &(r, c, s, m) in candidates {
            let k = key(r, c, s, m);
            if !self.cache.contains_key(&k) && !todo.iter().any(|&(r2, c2, s2, m2)| key(r2, c2, s2, m2) == k) {
                todo.push((r, c, s, m));
            }
        }
        let base = self.base;
        let data = &self.data;
        let results: Vec<Result<TuningCell>> = self.pool.install(|| {
            todo.par_iter()
                .map(|&(rho, c, sigma, mode)| {
                    let cfg = base.with_filter(rho, Some(c), sigma, mode);
                    let r = run_with_data(&cfg, data)?;
                    log::debug!("cell rho={rho} c={c} sigma={sigma} {mode}: rmse {}", r.time_averaged_rmse);
                    Ok(TuningCell {
                        stage,
                        inflation: rho,
                        localization: c,
                        sigma,
                        mode,
                        rmse: r.time_averaged_rmse,
                        diverged: r.diverged(),
                    })
                })
                .collect()
        });
        for cell in results {
            let cell = cell?;
            let k = key(cell.inflation, cell.localization, cell.sigma, cell.mode);
            self.order.push(k);
            self.cache.insert(k, cell);
        }
        Ok(candidates.iter().map(|&(r, c, s, m)| self.cache[&key(r, c, s, m)]).collect())
    }

    fn cells(&self) -> Vec<TuningCell> {
        self.order.iter().map(|k| self.cache[k]).collect()
    }
}

/// Lowest finite score, first in grid order on ties.
fn best_of(cells: &[TuningCell]) -> Option<TuningCell> {
    cells
        .iter()
        .filter(|c| c.score().is_finite())
        .fold(None, |best: Option<TuningCell>, &c| match best {
            Some(b) if b.score() <= c.score() => Some(b),
            _ => Some(c),
        })
}

fn pair_grid(grid: &TuningGrid, sigma: f64, mode: SmoothingMode) -> Vec<(f64, f64, f64, SmoothingMode)> {
    grid.inflation
        .iter()
        .flat_map(|&r| grid.localization.iter().map(move |&c| (r, c, sigma, mode)))
        .collect()
}

/// Stage 1 only: the tuned baseline without smoothing.
pub fn tune_baseline(base: &ExperimentConfig, grid: &TuningGrid, jobs: usize) -> Result<TuningReport> {
    grid.validate()?;
    let mut eval = Evaluator::new(base, jobs)?;
    let stage1 = eval.evaluate(1, &pair_grid(grid, 0.0, SmoothingMode::Off))?;
    let best = best_of(&stage1);
    Ok(TuningReport { cells: eval.cells(), baseline: best, best })
}

/// Full three-stage search. Smoothing stages use the base config's mode, or
/// perturbation rescaling when the base has smoothing off.
pub fn semi_joint_tune(base: &ExperimentConfig, grid: &TuningGrid, jobs: usize) -> Result<TuningReport> {
    grid.validate()?;
    let mode = match base.filter.mode {
        SmoothingMode::Off => SmoothingMode::Perturbation,
        m => m,
    };
    let mut eval = Evaluator::new(base, jobs)?;

    let stage1 = eval.evaluate(1, &pair_grid(grid, 0.0, SmoothingMode::Off))?;
    let baseline = best_of(&stage1);
    let anchor = baseline.unwrap_or(stage1[0]);

    let sigma_cells: Vec<_> =
        grid.sigma.iter().map(|&s| (anchor.inflation, anchor.localization, s, smoothing_mode(s, mode))).collect();
    let stage2 = eval.evaluate(2, &sigma_cells)?;
    let sigma = best_of(&stage2).unwrap_or(stage2[0]).sigma;

    let stage3 = eval.evaluate(3, &pair_grid(grid, sigma, smoothing_mode(sigma, mode)))?;
    let best = best_of(&stage3);
    Ok(TuningReport { cells: eval.cells(), baseline, best })
}

fn smoothing_mode(sigma: f64, mode: SmoothingMode) -> SmoothingMode {
    if sigma == 0.0 {
        SmoothingMode::Off
    } else {
        mode
    }
}
