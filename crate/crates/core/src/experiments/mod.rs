//! Twin-experiment orchestration on the Lorenz 96 ring.

pub mod config;
pub mod diagnostics;
pub mod spectrum_study;
pub mod tuning;
pub mod twin;

pub use config::ExperimentConfig;
pub use diagnostics::{smoothing_diagnostics, DiagnosticsResult, Snapshot};
pub use spectrum_study::{free_run_spectrum_study, log_roughness, SpectrumDump, SpectrumStudy, DEFAULT_END_TIME};
pub use tuning::{inclusive_range, semi_joint_tune, tune_baseline, TuningCell, TuningGrid, TuningReport};
pub use twin::{
    initial_ensemble, make_observations, run_twin_experiment, run_with_data, ExperimentResult, Outcome, TwinData,
};
