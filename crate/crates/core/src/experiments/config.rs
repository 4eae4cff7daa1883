//! Twin-experiment configuration, read from TOML.
//!
//! ```toml
//! [model]
//! dimension = 128
//! forcing = 8.0
//! dt = 0.01
//! spinup_duration = 100.0
//! spinup_perturbation = 0.001
//! climatological_std = 3.640      # optional for forcing 4, 8 or 16
//!
//! [observation]
//! steps_per_cycle = 15
//! resolution_stride = 2
//! noise_std = 0.364               # optional, default 10% of climatological_std
//!
//! [filter]
//! ensemble_size = 20
//! inflation = 1.05
//! localization = 4.0              # optional, omit to disable localization
//! sigma = 0.5
//! mode = "perturbation"           # "off" | "perturbation" | "whole-ensemble"
//! additive_inflation = 0.0        # optional
//!
//! [run]
//! n_cycles = 1333
//! rmse_window = 350
//! seed = 1
//! initial_spread = 0.364          # optional, default noise_std
//! ```
//!
//! Unknown keys are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{FilterConfig, ObservationSetup, SmoothingMode};
use crate::models::ModelParams;

/// Free-run climatological standard deviation of the 128-variable ring at
/// forcing 4, 8 and 16.
pub const CLIMATOLOGICAL_STD: [(f64, f64); 3] = [(4.0, 1.854), (8.0, 3.640), (16.0, 6.298)];

/// Observation noise as a fraction of the climatological standard deviation.
pub const NOISE_FRACTION: f64 = 0.1;

pub fn climatological_std_for(forcing: f64) -> Option<f64> {
    CLIMATOLOGICAL_STD.iter().find(|(f, _)| *f == forcing).map(|&(_, s)| s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub dimension: usize,
    pub forcing: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_spinup_duration")]
    pub spinup_duration: f64,
    #[serde(default = "default_spinup_perturbation")]
    pub spinup_perturbation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub climatological_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSection {
    #[serde(default = "default_steps_per_cycle")]
    pub steps_per_cycle: usize,
    pub resolution_stride: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub ensemble_size: usize,
    #[serde(default = "one")]
    pub inflation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localization: Option<f64>,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub mode: SmoothingMode,
    #[serde(default)]
    pub additive_inflation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_cycles")]
    pub n_cycles: usize,
    #[serde(default = "default_window")]
    pub rmse_window: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_spread: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub observation: ObservationSection,
    pub filter: FilterSection,
    pub run: RunSection,
}

fn default_dt() -> f64 {
    0.01
}
fn default_spinup_duration() -> f64 {
    100.0
}
fn default_spinup_perturbation() -> f64 {
    1e-3
}
fn default_steps_per_cycle() -> usize {
    15
}
fn one() -> f64 {
    1.0
}
fn default_cycles() -> usize {
    1333
}
fn default_window() -> usize {
    350
}

impl ExperimentConfig {
    /// The standard 128-variable setup for one forcing regime, observing every
    /// `stride`-th component with an ensemble of `ensemble_size`. Filter
    /// settings start neutral (no inflation, localization or smoothing).
    pub fn regime(forcing: f64, stride: usize, ensemble_size: usize) -> Self {
        Self {
            model: ModelSection {
                dimension: 128,
                forcing,
                dt: default_dt(),
                spinup_duration: default_spinup_duration(),
                spinup_perturbation: default_spinup_perturbation(),
                climatological_std: None,
            },
            observation: ObservationSection {
                steps_per_cycle: default_steps_per_cycle(),
                resolution_stride: stride,
                noise_std: None,
            },
            filter: FilterSection {
                ensemble_size,
                inflation: 1.0,
                localization: None,
                sigma: 0.0,
                mode: SmoothingMode::Off,
                additive_inflation: 0.0,
            },
            run: RunSection {
                n_cycles: default_cycles(),
                rmse_window: default_window(),
                seed: 0,
                initial_spread: None,
            },
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.model_params()?;
        self.climatological_std()?;
        let noise = self.noise_std()?;
        if !(noise > 0.0) {
            return Err(Error::Config(format!("observation noise {noise} must be positive")));
        }
        if self.observation.steps_per_cycle == 0 {
            return Err(Error::Config("steps_per_cycle must be at least 1".into()));
        }
        self.observation_setup()?;
        if self.filter.ensemble_size < 2 {
            return Err(Error::Config("ensemble_size must be at least 2".into()));
        }
        self.filter_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        let spread = self.initial_spread()?;
        if !(spread > 0.0) {
            return Err(Error::Config(format!("initial spread {spread} must be positive")));
        }
        if !(self.model.spinup_duration > 0.0) {
            return Err(Error::Config("spinup_duration must be positive".into()));
        }
        if self.run.rmse_window == 0 || self.run.rmse_window > self.run.n_cycles {
            return Err(Error::Config(format!(
                "need n_cycles ({}) >= rmse_window ({}) >= 1",
                self.run.n_cycles, self.run.rmse_window
            )));
        }
        Ok(())
    }

    pub fn model_params(&self) -> Result<ModelParams<f64>> {
        ModelParams::new(self.model.dimension, self.model.forcing, self.model.dt)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn climatological_std(&self) -> Result<f64> {
        self.model
            .climatological_std
            .or_else(|| climatological_std_for(self.model.forcing))
            .ok_or_else(|| {
                Error::Config(format!(
                    "climatological_std is required for forcing {}",
                    self.model.forcing
                ))
            })
    }

    pub fn noise_std(&self) -> Result<f64> {
        match self.observation.noise_std {
            Some(s) => Ok(s),
            None => Ok(NOISE_FRACTION * self.climatological_std()?),
        }
    }

    pub fn initial_spread(&self) -> Result<f64> {
        match self.run.initial_spread {
            Some(s) => Ok(s),
            None => self.noise_std(),
        }
    }

    pub fn observation_setup(&self) -> Result<ObservationSetup<f64>> {
        ObservationSetup::strided(self.model.dimension, self.observation.resolution_stride, self.noise_std()?)
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn filter_config(&self) -> FilterConfig<f64> {
        FilterConfig {
            inflation: self.filter.inflation,
            localization: self.filter.localization,
            sigma: self.filter.sigma,
            mode: self.filter.mode,
            additive_inflation: self.filter.additive_inflation,
        }
    }

    /// Model time between observations.
    pub fn observation_interval(&self) -> f64 {
        self.observation.steps_per_cycle as f64 * self.model.dt
    }

    /// Cycles `n_cycles - rmse_window + 1 ..= n_cycles` (1-based).
    pub fn rmse_window_cycles(&self) -> std::ops::RangeInclusive<usize> {
        self.run.n_cycles - self.run.rmse_window + 1..=self.run.n_cycles
    }

    /// Same config with filter settings replaced.
    pub fn with_filter(&self, inflation: f64, localization: Option<f64>, sigma: f64, mode: SmoothingMode) -> Self {
        let mut c = self.clone();
        c.filter.inflation = inflation;
        c.filter.localization = localization;
        c.filter.sigma = sigma;
        c.filter.mode = mode;
        c
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.run.seed = seed;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[model]
dimension = 128
forcing = 8.0

[observation]
resolution_stride = 2

[filter]
ensemble_size = 20
inflation = 1.05
localization = 4.0
sigma = 0.5
mode = "perturbation"

[run]
seed = 3
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml_str(SAMPLE).unwrap();
        assert_eq!(c.model.dt, 0.01);
        assert_eq!(c.observation.steps_per_cycle, 15);
        assert!((c.observation_interval() - 0.15).abs() < 1e-15);
        assert!((c.noise_std().unwrap() - 0.364).abs() < 1e-12);
        assert_eq!(c.filter.mode, SmoothingMode::Perturbation);
        assert_eq!(c.run.n_cycles, 1333);
        assert_eq!(c.rmse_window_cycles(), 984..=1333);
        assert_eq!(c.observation_setup().unwrap().len(), 64);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = SAMPLE.replace("seed = 3", "seed = 3\nbogus = 1");
        assert!(matches!(ExperimentConfig::from_toml_str(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_rejected() {
        let bad = SAMPLE.replace("inflation = 1.05", "inflation = 0.5");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
        let bad = SAMPLE.replace("seed = 3", "seed = 3\nrmse_window = 5000");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
        let bad = SAMPLE.replace("forcing = 8.0", "forcing = 5.0");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::regime(16.0, 4, 10);
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
