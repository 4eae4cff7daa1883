//! Free-run mean power spectra for several ensemble sizes.

use std::io::Write;

use serde::Serialize;

use crate::ensemble::propagate;
use crate::error::{Error, Result};
use crate::experiments::config::ExperimentConfig;
use crate::experiments::twin::initial_ensemble;
use crate::models::spin_up;
use crate::spectral::{apply_spectrum_smoothing, mean_power_spectrum, SmoothingKernel, SpectrumProfile};

/// Default free-run horizon.
pub const DEFAULT_END_TIME: f64 = 48.8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumDump {
    pub ensemble_size: usize,
    pub raw: Vec<f64>,
    /// Spectrum after one smoothing pass, when requested.
    pub smoothed: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumStudy {
    pub end_time: f64,
    pub sigma: f64,
    pub dumps: Vec<SpectrumDump>,
}

impl SpectrumStudy {
    /// CSV `ensemble_size,smoothed,wavenumber,power` over the half spectrum.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["ensemble_size", "smoothed", "wavenumber", "power"])?;
        for d in &self.dumps {
            let half = d.raw.len() / 2 + 1;
            for (flag, spec) in [(false, Some(&d.raw)), (true, d.smoothed.as_ref())] {
                if let Some(spec) = spec {
                    for (i, p) in spec[..half].iter().enumerate() {
                        w.write_record([d.ensemble_size.to_string(), flag.to_string(), i.to_string(), format!("{p}")])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Free-runs one ensemble of the largest requested size from perturbations
/// of the spun-up state, then takes leading members for each size. Members
/// evolve independently, so a prefix of the large run is exactly the run of
/// the smaller ensemble.
pub fn free_run_spectrum_study(
    config: &ExperimentConfig,
    sizes: &[usize],
    end_time: f64,
    with_smoothing: bool,
) -> Result<SpectrumStudy> {
    config.validate()?;
    let k_max = *sizes.iter().max().ok_or_else(|| Error::InvalidParameter("no ensemble sizes given".into()))?;
    if sizes.iter().any(|&k| k < 2) {
        return Err(Error::InvalidParameter("ensemble sizes must be at least 2".into()));
    }
    let params = config.model_params()?;
    let steps = (end_time / params.dt).round() as usize;
    if steps == 0 {
        return Err(Error::InvalidParameter(format!("end time {end_time} is shorter than one step")));
    }
    let truth0 = spin_up(&params, config.model.spinup_perturbation, config.model.spinup_duration)?;
    let initial = initial_ensemble(&truth0, k_max, config.initial_spread()?, config.run.seed)?;
    let evolved = propagate(&initial, &params, steps)?;
    let kernel = SmoothingKernel::gaussian(config.filter.sigma)?;
    let dumps = sizes
        .iter()
        .map(|&k| {
            let e = evolved.truncated(k)?;
            let raw = mean_power_spectrum(&e)?.power;
            let smoothed = if with_smoothing {
                Some(mean_power_spectrum(&apply_spectrum_smoothing(&e, &kernel)?)?.power)
            } else {
                None
            };
            Ok(SpectrumDump { ensemble_size: k, raw, smoothed })
        })
        .collect::<Result<_>>()?;
    Ok(SpectrumStudy { end_time, sigma: config.filter.sigma, dumps })
}

/// Total variation of `log10` power over the half spectrum: a roughness
/// measure insensitive to the overall energy level.
pub fn log_roughness(spectrum: &[f64]) -> f64 {
    let half = SpectrumProfile { power: spectrum.to_vec() };
    let logs: Vec<f64> = half.half().iter().map(|p| p.max(f64::MIN_POSITIVE).log10()).collect();
    logs.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roughness_of_smooth_and_jagged() {
        let smooth: Vec<f64> = (0..16).map(|i| 10f64.powf(-(i.min(16 - i) as f64) * 0.1)).collect();
        let jagged: Vec<f64> = smooth.iter().enumerate().map(|(i, p)| if i % 2 == 0 { p * 3.0 } else { *p }).collect();
        assert!(log_roughness(&jagged) > log_roughness(&smooth));
        assert!((log_roughness(&smooth) - 0.8).abs() < 1e-12);
    }
}
