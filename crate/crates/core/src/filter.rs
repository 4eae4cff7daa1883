//! Ensemble transform Kalman filter with multiplicative inflation,
//! Gaspari-Cohn covariance localization and the spectrum-smoothing hook.
//!
//! One assimilation cycle runs, in order: spectrum smoothing of the prior,
//! inflation, then the ETKF update. The mean update uses the localized
//! covariance in the Kalman gain; the perturbation update uses the transform
//! `T = [I + (HX)^T R^-1 (HX)]^-1` built from the unlocalized perturbations.

use serde::{Deserialize, Serialize};

use crate::ensemble::{decompose, recompose, Ensemble};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix, SymmetricEigen};
use crate::scalar::Real;
use crate::spectral::{apply_spectrum_smoothing, apply_whole_ensemble_rescaling, SmoothingKernel};

/// Gain-system condition number above which a warning is logged.
pub const CONDITION_WARN: f64 = 1e12;

/// Observation operator (pure subsampling) and diagonal noise covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSetup<T> {
    dim: usize,
    observed: Vec<usize>,
    noise_std: Vec<T>,
}

impl<T: Real> ObservationSetup<T> {
    pub fn new(dim: usize, observed: Vec<usize>, noise_std: Vec<T>) -> Result<Self> {
        if observed.is_empty() || observed.len() > dim {
            return Err(Error::InvalidParameter(format!(
                "{} observed components for state dimension {dim}",
                observed.len()
            )));
        }
        if observed.windows(2).any(|w| w[0] >= w[1]) || observed.last().is_some_and(|&i| i >= dim) {
            return Err(Error::InvalidParameter("observed indices must be strictly increasing and in range".into()));
        }
        if noise_std.len() != observed.len() {
            return Err(Error::Shape(format!(
                "{} noise levels for {} observations",
                noise_std.len(),
                observed.len()
            )));
        }
        if noise_std.iter().any(|s| !(*s > T::zero()) || !s.is_finite()) {
            return Err(Error::InvalidParameter("observation noise must be positive".into()));
        }
        Ok(Self { dim, observed, noise_std })
    }

    /// Every `stride`-th component starting at 0, all with the same noise.
    pub fn strided(dim: usize, stride: usize, noise_std: T) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidParameter("observation stride must be positive".into()));
        }
        let observed: Vec<usize> = (0..dim).step_by(stride).collect();
        let m = observed.len();
        Self::new(dim, observed, vec![noise_std; m])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn noise_std(&self) -> &[T] {
        &self.noise_std
    }

    /// Number of observations `M`.
    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    /// `H u`.
    pub fn observe(&self, state: &[T]) -> Vec<T> {
        self.observed.iter().map(|&i| state[i]).collect()
    }

    /// Diagonal of `Gamma`.
    pub fn noise_variance(&self) -> Vec<T> {
        self.noise_std.iter().map(|&s| s * s).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothingMode {
    #[default]
    Off,
    /// Rescale perturbations only; keeps the ensemble mean.
    Perturbation,
    /// Rescale whole members; moves the mean.
    WholeEnsemble,
}

impl std::fmt::Display for SmoothingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SmoothingMode::Off => "off",
            SmoothingMode::Perturbation => "perturbation",
            SmoothingMode::WholeEnsemble => "whole-ensemble",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig<T> {
    /// Multiplicative inflation `rho >= 1`; perturbations scale by `sqrt(rho)`.
    pub inflation: T,
    /// Gaspari-Cohn half-width `c` in grid units; `None` disables localization.
    pub localization: Option<T>,
    /// Gaussian kernel width in wavenumber bins; zero disables smoothing.
    pub sigma: T,
    pub mode: SmoothingMode,
    /// Additive inflation added to the diagonal of the gain covariance.
    pub additive_inflation: T,
}

impl<T: Real> FilterConfig<T> {
    /// Plain ETKF: no inflation, localization or smoothing.
    pub fn plain() -> Self {
        Self {
            inflation: T::one(),
            localization: None,
            sigma: T::zero(),
            mode: SmoothingMode::Off,
            additive_inflation: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.inflation >= T::one()) || !self.inflation.is_finite() {
            return Err(Error::InvalidParameter(format!("inflation {} must be at least 1", self.inflation)));
        }
        if let Some(c) = self.localization {
            if !(c > T::zero()) || !c.is_finite() {
                return Err(Error::InvalidParameter(format!("localization half-width {c} must be positive")));
            }
        }
        if !(self.sigma >= T::zero()) || !self.sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("kernel width {} must be nonnegative", self.sigma)));
        }
        if !(self.additive_inflation >= T::zero()) || !self.additive_inflation.is_finite() {
            return Err(Error::InvalidParameter("additive inflation must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Gaspari-Cohn fifth-order piecewise rational taper with support `2c`.
pub fn gaspari_cohn<T: Real>(distance: T, c: T) -> Result<T> {
    if !(c > T::zero()) || !c.is_finite() {
        return Err(Error::InvalidParameter(format!("half-width {c} must be positive")));
    }
    if !(distance >= T::zero()) {
        return Err(Error::InvalidParameter(format!("distance {distance} must be nonnegative")));
    }
    let z = distance / c;
    let l = T::lit;
    let v = if z <= T::one() {
        (((-l(0.25) * z + l(0.5)) * z + l(0.625)) * z - l(5.0 / 3.0)) * z * z + T::one()
    } else if z < l(2.0) {
        ((((z / l(12.0) - l(0.5)) * z + l(0.625)) * z + l(5.0 / 3.0)) * z - l(5.0)) * z + l(4.0)
            - l(2.0) / (l(3.0) * z)
    } else {
        T::zero()
    };
    // clip round-off near the support edge
    Ok(v.max(T::zero()).min(T::one()))
}

/// Periodic distance on a ring of `n` points.
pub fn ring_distance(i: usize, j: usize, n: usize) -> usize {
    let d = i.abs_diff(j);
    d.min(n - d)
}

/// Translation-invariant localization on a periodic ring, stored by distance.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationMatrix<T> {
    n: usize,
    by_distance: Vec<T>,
}

impl<T: Real> LocalizationMatrix<T> {
    /// All ones: no localization.
    pub fn none(n: usize) -> Self {
        Self { n, by_distance: vec![T::one(); n / 2 + 1] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.by_distance[ring_distance(i, j, self.n)]
    }

    /// Taper value for each periodic distance `0..=N/2`.
    pub fn by_distance(&self) -> &[T] {
        &self.by_distance
    }

    pub fn to_dense(&self) -> Matrix<T> {
        Matrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }
}

pub fn localization_matrix<T: Real>(n: usize, c: T) -> Result<LocalizationMatrix<T>> {
    if n == 0 {
        return Err(Error::InvalidParameter("localization needs a positive dimension".into()));
    }
    let by_distance = (0..=n / 2).map(|d| gaspari_cohn(T::from_count(d), c)).collect::<Result<_>>()?;
    Ok(LocalizationMatrix { n, by_distance })
}

/// Member `k` becomes `mean + sqrt(rho) (u_k - mean)`.
pub fn inflate<T: Real>(ensemble: &Ensemble<T>, rho: T) -> Result<Ensemble<T>> {
    if !(rho >= T::one()) || !rho.is_finite() {
        return Err(Error::InvalidParameter(format!("inflation {rho} must be at least 1")));
    }
    if rho == T::one() {
        return Ok(ensemble.clone());
    }
    let mean = ensemble.mean();
    let s = rho.sqrt();
    let data = ensemble
        .members()
        .flat_map(|m| m.iter().zip(&mean).map(move |(&u, &mu)| mu + s * (u - mu)))
        .collect();
    Ensemble::from_row_major(ensemble.size(), ensemble.dim(), data)
}

/// Eigen-decomposition of `T^-1 = I + (HX)^T Gamma^-1 (HX)` from which both
/// the transform and its symmetric square root are formed.
#[derive(Debug, Clone)]
pub struct TransformFactor<T> {
    inverse_eigen: SymmetricEigen<T>,
}

impl<T: Real> TransformFactor<T> {
    /// `hx` is `K x M`: row `k` holds the observed part of scaled perturbation `k`.
    pub fn new(hx: &Matrix<T>, noise_variance: &[T]) -> Result<Self> {
        if hx.cols() != noise_variance.len() {
            return Err(Error::Shape(format!(
                "{} observed columns, {} noise variances",
                hx.cols(),
                noise_variance.len()
            )));
        }
        let k = hx.rows();
        let mut a = Matrix::<T>::identity(k);
        for r in 0..k {
            for c in r..k {
                let mut s = T::zero();
                for ((&x, &y), &g) in hx.row(r).iter().zip(hx.row(c)).zip(noise_variance) {
                    s = s + x * y / g;
                }
                a[(r, c)] = a[(r, c)] + s;
                if c != r {
                    a[(c, r)] = a[(r, c)];
                }
            }
        }
        let inverse_eigen = SymmetricEigen::new(&a)?;
        // eigenvalues of T are reciprocals; they must be positive
        if let Some(&bad) = inverse_eigen.values.iter().find(|&&v| !(v > T::zero())) {
            let t_eig = if bad == T::zero() { f64::NEG_INFINITY } else { 1.0 / bad.to_f64_lossy() };
            return Err(Error::SymmetryViolation { eigenvalue: t_eig });
        }
        Ok(Self { inverse_eigen })
    }

    /// The transform `T`.
    pub fn transform(&self) -> Matrix<T> {
        self.inverse_eigen.reconstruct_with(|l| T::one() / l)
    }

    /// Symmetric square root `T^{1/2}`.
    pub fn sqrt(&self) -> Matrix<T> {
        self.inverse_eigen.reconstruct_with(|l| T::one() / l.sqrt())
    }
}

/// ETKF analysis of `prior` against observations `obs`.
pub fn etkf_assimilate<T: Real>(
    prior: &Ensemble<T>,
    obs: &[T],
    setup: &ObservationSetup<T>,
    localization: &LocalizationMatrix<T>,
) -> Result<Ensemble<T>> {
    etkf_assimilate_with(prior, obs, setup, localization, T::zero())
}

/// As [`etkf_assimilate`], with `additive` added to the diagonal of the
/// localized covariance used in the Kalman gain.
pub fn etkf_assimilate_with<T: Real>(
    prior: &Ensemble<T>,
    obs: &[T],
    setup: &ObservationSetup<T>,
    localization: &LocalizationMatrix<T>,
    additive: T,
) -> Result<Ensemble<T>> {
    let n = prior.dim();
    if setup.dim() != n || localization.dim() != n {
        return Err(Error::Shape(format!(
            "ensemble dimension {n}, observation setup {}, localization {}",
            setup.dim(),
            localization.dim()
        )));
    }
    if obs.len() != setup.len() {
        return Err(Error::Shape(format!("{} observations for {} observed components", obs.len(), setup.len())));
    }
    let stats = decompose(prior)?;
    let p = &stats.perturbations;
    let k = p.rows();
    let idx = setup.observed();
    let m = idx.len();
    let gamma = setup.noise_variance();

    // H X (K x M)
    let hx = Matrix::from_fn(k, m, |r, j| p[(r, idx[j])]);

    // (L o C) H^T (N x M)
    let mut gain_cov = Matrix::zeros(n, m);
    for r in 0..k {
        let prow = p.row(r);
        let hrow = hx.row(r);
        for i in 0..n {
            let pi = prow[i];
            for (g, &h) in gain_cov.row_mut(i).iter_mut().zip(hrow) {
                *g = *g + pi * h;
            }
        }
    }
    for i in 0..n {
        for (j, g) in gain_cov.row_mut(i).iter_mut().enumerate() {
            *g = *g * localization.get(i, idx[j]);
        }
    }
    if additive > T::zero() {
        for (j, &i) in idx.iter().enumerate() {
            gain_cov[(i, j)] = gain_cov[(i, j)] + additive;
        }
    }

    // H (L o C) H^T + Gamma
    let mut innov_cov = Matrix::from_fn(m, m, |a, b| gain_cov[(idx[a], b)]);
    for a in 0..m {
        innov_cov[(a, a)] = innov_cov[(a, a)] + gamma[a];
    }
    let chol = Cholesky::new(&innov_cov).map_err(|e| match e {
        Error::NumericalFailure { context, .. } => Error::NumericalFailure {
            context: format!("innovation covariance: {context}"),
            condition: f64::INFINITY,
        },
        other => other,
    })?;
    let cond = chol.condition_estimate();
    if cond > CONDITION_WARN {
        log::warn!("innovation covariance is ill-conditioned (estimate {cond:e})");
    }
    let innovation: Vec<T> = obs.iter().zip(setup.observe(&stats.mean)).map(|(&y, hm)| y - hm).collect();
    let w = chol.solve(&innovation);
    let mut mean = stats.mean.clone();
    for (i, mu) in mean.iter_mut().enumerate() {
        let row = gain_cov.row(i);
        *mu = *mu + row.iter().zip(&w).fold(T::zero(), |acc, (&g, &x)| acc + g * x);
    }

    let root = TransformFactor::new(&hx, &gamma)?.sqrt();
    // posterior perturbations X T^{1/2}; in member-row layout row k is sum_l R[l,k] P[l]
    let mut post = Matrix::zeros(k, n);
    for l in 0..k {
        let prow = p.row(l);
        for c in 0..k {
            let r = root[(l, c)];
            for (o, &x) in post.row_mut(c).iter_mut().zip(prow) {
                *o = *o + r * x;
            }
        }
    }
    recompose(&mean, &post)
}

/// One analysis step: smoothing (per mode), inflation, ETKF with localization.
pub fn assimilation_cycle<T: Real>(
    prior: &Ensemble<T>,
    obs: &[T],
    setup: &ObservationSetup<T>,
    config: &FilterConfig<T>,
) -> Result<Ensemble<T>> {
    config.validate()?;
    let smoothed = match config.mode {
        SmoothingMode::Off => prior.clone(),
        SmoothingMode::Perturbation => apply_spectrum_smoothing(prior, &SmoothingKernel::gaussian(config.sigma)?)?,
        SmoothingMode::WholeEnsemble => {
            apply_whole_ensemble_rescaling(prior, &SmoothingKernel::gaussian(config.sigma)?)?
        }
    };
    let inflated = inflate(&smoothed, config.inflation)?;
    let loc = match config.localization {
        Some(c) => localization_matrix(prior.dim(), c)?,
        None => LocalizationMatrix::none(prior.dim()),
    };
    etkf_assimilate_with(&inflated, obs, setup, &loc, config.additive_inflation)
}
