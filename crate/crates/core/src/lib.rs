//! Ensemble transform Kalman filtering with spectrum-smoothing sampling-error
//! mitigation, and a Lorenz 96 twin-experiment harness.
//!
//! The numerical core ([`models`], [`ensemble`], [`spectral`], [`filter`]) is
//! generic over the scalar type through [`Real`]; the experiment harness runs
//! in `f64`. Concrete aliases for both precisions are re-exported here.

pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod filter;
pub mod linalg;
pub mod models;
pub mod scalar;
pub mod spectral;

pub use error::{Error, Result};
pub use scalar::Real;

pub type StateVector = models::StateVector<f64>;
pub type StateVector32 = models::StateVector<f32>;
pub type ModelParams = models::ModelParams<f64>;
pub type ModelParams32 = models::ModelParams<f32>;
pub type Ensemble = ensemble::Ensemble<f64>;
pub type Ensemble32 = ensemble::Ensemble<f32>;
pub type EnsembleStats = ensemble::EnsembleStats<f64>;
pub type SpectrumProfile = spectral::SpectrumProfile<f64>;
pub type SmoothingKernel = spectral::SmoothingKernel<f64>;
pub type SmoothingKernel32 = spectral::SmoothingKernel<f32>;
pub type RescalingFactors = spectral::RescalingFactors<f64>;
pub type ObservationSetup = filter::ObservationSetup<f64>;
pub type FilterConfig = filter::FilterConfig<f64>;
pub type FilterConfig32 = filter::FilterConfig<f32>;
pub type LocalizationMatrix = filter::LocalizationMatrix<f64>;
pub type Matrix = linalg::Matrix<f64>;

pub use filter::SmoothingMode;
