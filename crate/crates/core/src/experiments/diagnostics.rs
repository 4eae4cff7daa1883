//! Effective inflation and localization implied by spectrum smoothing.
//!
//! At chosen assimilation cycles the prior covariance is compared before and
//! after one smoothing pass (with no inflation or localization involved): the
//! diagonal ratio is the per-component inflation, the first off-diagonal
//! ratio shows how neighbour covariances are reshaped.

use std::io::Write;

use serde::Serialize;

use crate::ensemble::{decompose, Ensemble};
use crate::error::{Error, Result};
use crate::experiments::config::ExperimentConfig;
use crate::experiments::twin::{run_with_hook, ExperimentResult, TwinData};
use crate::spectral::{apply_spectrum_smoothing, SmoothingKernel};

/// Before-values at or below this fraction of the largest variance make a ratio undefined.
pub const UNDEFINED_RATIO: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub time: f64,
    pub cycle: usize,
    /// `C_after(i,i) / C_before(i,i)`; `None` where the before-variance vanishes.
    pub variance_ratio: Vec<Option<f64>>,
    /// `C_after(i,i+1) / C_before(i,i+1)` cyclically; `None` where undefined.
    pub offdiag_ratio: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsResult {
    pub snapshots: Vec<Snapshot>,
}

impl DiagnosticsResult {
    /// CSV `time,component,variance_ratio,offdiag_ratio`; undefined ratios are `NaN`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time", "component", "variance_ratio", "offdiag_ratio"])?;
        let fmt = |v: Option<f64>| v.map_or_else(|| "NaN".to_string(), |x| format!("{x}"));
        for s in &self.snapshots {
            for (i, (v, o)) in s.variance_ratio.iter().zip(&s.offdiag_ratio).enumerate() {
                w.write_record([format!("{}", s.time), i.to_string(), fmt(*v), fmt(*o)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Diagonal and first cyclic off-diagonal ratios for one prior ensemble.
pub fn covariance_ratios(
    prior: &Ensemble<f64>,
    kernel: &SmoothingKernel<f64>,
) -> Result<(Vec<Option<f64>>, Vec<Option<f64>>)> {
    let smoothed = apply_spectrum_smoothing(prior, kernel)?;
    let before = decompose(prior)?;
    let after = decompose(&smoothed)?;
    let n = prior.dim();
    let var_before: Vec<f64> = (0..n).map(|i| before.covariance_entry(i, i)).collect();
    let floor = UNDEFINED_RATIO * var_before.iter().fold(0.0f64, |a, &b| a.max(b));
    let ratio = |num: f64, den: f64| if den.abs() <= floor || den == 0.0 { None } else { Some(num / den) };
    let variance = (0..n).map(|i| ratio(after.covariance_entry(i, i), var_before[i])).collect();
    let offdiag = (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            ratio(after.covariance_entry(i, j), before.covariance_entry(i, j))
        })
        .collect();
    Ok((variance, offdiag))
}

/// Runs the configured filter and records smoothing ratios of the prior at
/// each snapshot time. Times must coincide with assimilation cycles.
pub fn smoothing_diagnostics(
    config: &ExperimentConfig,
    snapshot_times: &[f64],
) -> Result<(DiagnosticsResult, ExperimentResult)> {
    config.validate()?;
    let dt_obs = config.observation_interval();
    let mut cycles = Vec::with_capacity(snapshot_times.len());
    for &t in snapshot_times {
        let j = (t / dt_obs).round();
        if j < 1.0 || (j * dt_obs - t).abs() > 1e-9 * t.abs().max(1.0) || j as usize > config.run.n_cycles {
            return Err(Error::InvalidParameter(format!(
                "snapshot time {t} is not an assimilation cycle (interval {dt_obs}, {} cycles)",
                config.run.n_cycles
            )));
        }
        cycles.push(j as usize);
    }
    let kernel = SmoothingKernel::gaussian(config.filter.sigma)?;
    let data = TwinData::generate(config)?;
    let mut snapshots = Vec::new();
    let result = run_with_hook(config, &data, &mut |cycle, prior| {
        for (&c, &t) in cycles.iter().zip(snapshot_times) {
            if c == cycle {
                let (variance_ratio, offdiag_ratio) = covariance_ratios(prior, &kernel)?;
                snapshots.push(Snapshot { time: t, cycle, variance_ratio, offdiag_ratio });
            }
        }
        Ok(())
    })?;
    Ok((DiagnosticsResult { snapshots }, result))
}
