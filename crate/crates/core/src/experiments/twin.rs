//! Truth runs, synthetic observations and the assimilation loop.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::ensemble::{propagate, Ensemble};
use crate::error::{Error, Result};
use crate::experiments::config::ExperimentConfig;
use crate::filter::{assimilation_cycle, ObservationSetup};
use crate::models::{generate_truth, spin_up, StateVector};

/// RMSE above this multiple of the climatological std counts toward divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// Consecutive cycles above the threshold that declare divergence.
pub const DIVERGENCE_CYCLES: usize = 50;

const OBSERVATION_STREAM: u64 = 1;
const ENSEMBLE_STREAM: u64 = 2;

/// Counter-based generator for one purpose; streams never overlap.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `y_j = H u_j + eps_j` with i.i.d. `N(0, noise_std^2)` noise.
pub fn make_observations(truth: &[StateVector<f64>], observed: &[usize], noise_std: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, OBSERVATION_STREAM);
    truth
        .iter()
        .map(|u| {
            observed
                .iter()
                .map(|&i| {
                    let z: f64 = rng.sample(StandardNormal);
                    u[i] + noise_std * z
                })
                .collect()
        })
        .collect()
}

/// Observations for a filter setup, using its (uniform) noise level.
pub fn observe_truth(truth: &[StateVector<f64>], setup: &ObservationSetup<f64>, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, OBSERVATION_STREAM);
    truth
        .iter()
        .map(|u| {
            setup
                .observed()
                .iter()
                .zip(setup.noise_std())
                .map(|(&i, &s)| {
                    let z: f64 = rng.sample(StandardNormal);
                    u[i] + s * z
                })
                .collect()
        })
        .collect()
}

/// `K` members `truth0 + N(0, spread^2)` per component.
pub fn initial_ensemble(truth0: &StateVector<f64>, k: usize, spread: f64, seed: u64) -> Result<Ensemble<f64>> {
    if k < 2 {
        return Err(Error::DegenerateEnsemble(format!("need at least 2 members, got {k}")));
    }
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::DegenerateEnsemble(format!("initial spread {spread} must be positive")));
    }
    let mut rng = stream_rng(seed, ENSEMBLE_STREAM);
    let mut data = Vec::with_capacity(k * truth0.len());
    for _ in 0..k {
        for &u in truth0.as_slice() {
            let z: f64 = rng.sample(StandardNormal);
            data.push(u + spread * z);
        }
    }
    Ensemble::from_row_major(k, truth0.len(), data)
}

/// Everything about a twin experiment that does not depend on filter settings.
#[derive(Debug, Clone)]
pub struct TwinData {
    pub initial_truth: StateVector<f64>,
    /// Truth at cycles `1..=n_cycles`.
    pub truth: Vec<StateVector<f64>>,
    pub observations: Vec<Vec<f64>>,
    pub initial_ensemble: Ensemble<f64>,
}

impl TwinData {
    pub fn generate(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let params = config.model_params()?;
        let initial_truth = spin_up(&params, config.model.spinup_perturbation, config.model.spinup_duration)?;
        let truth = generate_truth(&initial_truth, &params, config.run.n_cycles, config.observation.steps_per_cycle)?;
        let setup = config.observation_setup()?;
        let observations = observe_truth(&truth, &setup, config.run.seed);
        let initial_ensemble =
            initial_ensemble(&initial_truth, config.filter.ensemble_size, config.initial_spread()?, config.run.seed)?;
        Ok(Self { initial_truth, truth, observations, initial_ensemble })
    }

    /// Whether this data was generated for a config with the same truth,
    /// observation and initial-ensemble inputs.
    pub fn matches(&self, config: &ExperimentConfig) -> bool {
        self.truth.len() == config.run.n_cycles
            && self.initial_ensemble.size() == config.filter.ensemble_size
            && self.initial_truth.len() == config.model.dimension
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Outcome {
    Completed,
    /// Stopped early; `cycle` is the last cycle whose RMSE was recorded.
    Diverged { cycle: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Posterior-mean RMSE for cycles `1..`.
    pub rmse_series: Vec<f64>,
    /// Component-averaged posterior ensemble std per cycle.
    pub spread_series: Vec<f64>,
    /// Mean of the RMSE over the last `rmse_window` cycles; NaN unless completed.
    pub time_averaged_rmse: f64,
    pub outcome: Outcome,
    pub wall_time_secs: f64,
}

impl ExperimentResult {
    pub fn diverged(&self) -> bool {
        !matches!(self.outcome, Outcome::Completed)
    }

    /// RMSE used for ranking tuning cells: diverged runs rank last.
    pub fn score(&self) -> f64 {
        if self.diverged() || !self.time_averaged_rmse.is_finite() {
            f64::INFINITY
        } else {
            self.time_averaged_rmse
        }
    }

    /// CSV `cycle,time,rmse,spread`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let steps = self.config.observation.steps_per_cycle;
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["cycle", "time", "rmse", "spread"])?;
        for (j, (r, s)) in self.rmse_series.iter().zip(&self.spread_series).enumerate() {
            let cycle = j + 1;
            w.write_record([cycle.to_string(), format!("{}", (cycle * steps) as f64 * self.config.model.dt), format!("{r}"), format!("{s}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn rmse(estimate: &[f64], truth: &[f64]) -> f64 {
    let ss: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    (ss / truth.len() as f64).sqrt()
}

/// Mean of the last `window` entries.
pub fn window_average(series: &[f64], window: usize) -> f64 {
    let tail = &series[series.len() - window..];
    tail.iter().sum::<f64>() / window as f64
}

pub fn run_twin_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let data = TwinData::generate(config)?;
    run_with_data(config, &data)
}

/// Per-cycle hook for callers that need the prior ensemble (diagnostics).
pub(crate) type PriorHook<'a> = dyn FnMut(usize, &Ensemble<f64>) -> Result<()> + 'a;

/// Runs the assimilation loop on pregenerated truth and observations.
pub fn run_with_data(config: &ExperimentConfig, data: &TwinData) -> Result<ExperimentResult> {
    run_with_hook(config, data, &mut |_, _| Ok(()))
}

pub(crate) fn run_with_hook(config: &ExperimentConfig, data: &TwinData, hook: &mut PriorHook<'_>) -> Result<ExperimentResult> {
    config.validate()?;
    if !data.matches(config) {
        return Err(Error::Config("twin data was generated for a different configuration".into()));
    }
    let start = Instant::now();
    let params = config.model_params()?;
    let setup = config.observation_setup()?;
    let filter = config.filter_config();
    let threshold = DIVERGENCE_FACTOR * config.climatological_std()?;
    let steps = config.observation.steps_per_cycle;

    let mut ensemble = data.initial_ensemble.clone();
    let mut rmse_series = Vec::with_capacity(config.run.n_cycles);
    let mut spread_series = Vec::with_capacity(config.run.n_cycles);
    let mut above = 0usize;
    let mut outcome = Outcome::Completed;

    for (j, (truth, obs)) in data.truth.iter().zip(&data.observations).enumerate() {
        let cycle = j + 1;
        let step = propagate(&ensemble, &params, steps)
            .and_then(|prior| {
                hook(cycle, &prior)?;
                Ok(prior)
            })
            .and_then(|prior| assimilation_cycle(&prior, obs, &setup, &filter));
        ensemble = match step {
            Ok(e) => e,
            Err(e @ (Error::NumericalOverflow { .. }
            | Error::NumericalFailure { .. }
            | Error::SymmetryViolation { .. }
            | Error::ImaginaryResidue { .. }
            | Error::DegenerateEnsemble(_))) => {
                outcome = Outcome::Diverged { cycle: cycle - 1, reason: e.to_string() };
                break;
            }
            Err(e) => return Err(e),
        };
        let r = rmse(&ensemble.mean(), truth.as_slice());
        rmse_series.push(r);
        spread_series.push(ensemble.mean_spread()?);
        if r > threshold {
            above += 1;
            if above >= DIVERGENCE_CYCLES {
                outcome = Outcome::Diverged {
                    cycle,
                    reason: format!("RMSE above {threshold} for {DIVERGENCE_CYCLES} consecutive cycles"),
                };
                break;
            }
        } else {
            above = 0;
        }
    }

    let time_averaged_rmse = match outcome {
        Outcome::Completed => window_average(&rmse_series, config.run.rmse_window),
        Outcome::Diverged { .. } => f64::NAN,
    };
    Ok(ExperimentResult {
        config: config.clone(),
        rmse_series,
        spread_series,
        time_averaged_rmse,
        outcome,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}
