//! Fourier-domain ensemble rescaling.
//!
//! The mean power spectrum of an ensemble is smoothed by circular
//! convolution with a Gaussian kernel, clamped from below by the power of
//! the ensemble mean, and the ensemble is then rescaled per wavenumber so
//! that its mean power spectrum equals the smoothed one. The default variant
//! rescales only the perturbations and therefore keeps the ensemble mean; the
//! whole-ensemble variant rescales every member and moves the mean.

use std::io::Write;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Bins whose perturbation power falls below this fraction of the largest
/// bin of the ensemble spectrum keep `alpha = 1`.
pub const DEGENERATE_BIN_RATIO: f64 = 1e-14;

/// Allowed imaginary residue after the inverse transform, relative to the
/// largest absolute member entry (in double precision; single precision uses
/// a multiple of its machine epsilon instead).
pub const IMAGINARY_TOLERANCE: f64 = 1e-9;

fn imaginary_tolerance<T: Real>() -> T {
    T::lit(IMAGINARY_TOLERANCE).max(T::lit(1e3) * T::epsilon())
}

/// Unnormalized forward DFT and `1/N`-normalized inverse of one length.
#[derive(Clone)]
pub struct Dft<T: Real> {
    len: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for Dft<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dft").field("len", &self.len).finish()
    }
}

impl<T: Real> Dft<T> {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { len, forward: planner.plan_fft_forward(len), inverse: planner.plan_fft_inverse(len) }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `F[w] = sum_n u_n exp(-2 pi i n w / N)`.
    pub fn forward(&self, values: &[T]) -> Result<Vec<Complex<T>>> {
        self.check(values.len())?;
        let mut buf: Vec<Complex<T>> = values.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.forward.process(&mut buf);
        Ok(buf)
    }

    /// `u_n = (1/N) sum_w F[w] exp(2 pi i n w / N)`.
    pub fn inverse(&self, coeffs: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        self.check(coeffs.len())?;
        let mut buf = coeffs.to_vec();
        self.inverse.process(&mut buf);
        let inv = T::one() / T::from_count(self.len);
        buf.iter_mut().for_each(|c| *c = *c * inv);
        Ok(buf)
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.len {
            return Err(Error::Shape(format!("transform of length {} given {len} values", self.len)));
        }
        Ok(())
    }
}

pub fn forward_transform<T: Real>(state: &[T]) -> Result<Vec<Complex<T>>> {
    Dft::new(state.len()).forward(state)
}

pub fn inverse_transform<T: Real>(coeffs: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    Dft::new(coeffs.len()).inverse(coeffs)
}

/// Nonnegative power per integer wavenumber `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumProfile<T> {
    pub power: Vec<T>,
}

impl<T: Real> SpectrumProfile<T> {
    pub fn new(power: Vec<T>) -> Result<Self> {
        if power.iter().any(|p| !(*p >= T::zero()) || !p.is_finite()) {
            return Err(Error::InvalidParameter("spectrum power must be finite and nonnegative".into()));
        }
        Ok(Self { power })
    }

    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }

    pub fn max(&self) -> T {
        self.power.iter().fold(T::zero(), |a, &b| a.max(b))
    }

    /// Wavenumbers `0..=N/2`.
    pub fn half(&self) -> &[T] {
        &self.power[..self.power.len() / 2 + 1]
    }
}

/// `|F[w]|^2` for every bin.
pub fn power_of<T: Real>(coeffs: &[Complex<T>]) -> Vec<T> {
    coeffs.iter().map(|c| c.norm_sqr()).collect()
}

/// `(1/K) sum_k |F(u_k)[w]|^2`.
pub fn mean_power_spectrum<T: Real>(ensemble: &Ensemble<T>) -> Result<SpectrumProfile<T>> {
    let dft = Dft::new(ensemble.dim());
    let mut acc = vec![T::zero(); ensemble.dim()];
    for m in ensemble.members() {
        for (a, c) in acc.iter_mut().zip(dft.forward(m)?) {
            *a = *a + c.norm_sqr();
        }
    }
    let inv = T::one() / T::from_count(ensemble.size());
    Ok(SpectrumProfile { power: acc.into_iter().map(|a| a * inv).collect() })
}

/// Symmetric, unit-sum convolution weights centred at offset zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingKernel<T> {
    sigma: T,
    weights: Vec<T>,
}

impl<T: Real> SmoothingKernel<T> {
    /// The identity kernel.
    pub fn delta() -> Self {
        Self { sigma: T::zero(), weights: vec![T::one()] }
    }

    /// Gaussian with the default truncation radius `max(1, ceil(4 sigma))`;
    /// `sigma = 0` gives the delta kernel.
    pub fn gaussian(sigma: T) -> Result<Self> {
        let radius = (T::lit(4.0) * sigma).ceil().to_usize().unwrap_or(1).max(1);
        gaussian_kernel(sigma, radius)
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.weights.len() / 2
    }

    /// Weights for offsets `-radius..=radius`.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn is_identity(&self) -> bool {
        self.weights.len() == 1
    }
}

/// Gaussian weights `exp(-tau^2 / (2 sigma^2))` for `|tau| <= radius`,
/// normalized to unit sum.
pub fn gaussian_kernel<T: Real>(sigma: T, truncation_radius: usize) -> Result<SmoothingKernel<T>> {
    if !(sigma >= T::zero()) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("kernel width {sigma} must be nonnegative")));
    }
    if sigma == T::zero() {
        return Ok(SmoothingKernel::delta());
    }
    let r = truncation_radius as isize;
    let two_var = T::lit(2.0) * sigma * sigma;
    let raw: Vec<T> = (-r..=r)
        .map(|tau| {
            let t = T::from_isize(tau).expect("offset representable");
            (-(t * t) / two_var).exp()
        })
        .collect();
    // pairwise from the tails inward so the mirrored halves sum identically
    let mut total = raw[r as usize];
    for i in (1..=r as usize).rev() {
        total = total + (raw[r as usize - i] + raw[r as usize + i]);
    }
    Ok(SmoothingKernel { sigma, weights: raw.into_iter().map(|w| w / total).collect() })
}

/// Circular convolution over the wavenumber index modulo `N`.
pub fn smooth_spectrum<T: Real>(spectrum: &SpectrumProfile<T>, kernel: &SmoothingKernel<T>) -> Result<SpectrumProfile<T>> {
    let n = spectrum.len();
    Ok(SpectrumProfile { power: circular_convolve(&spectrum.power, kernel)?.into_iter().take(n).collect() })
}

fn circular_convolve<T: Real>(power: &[T], kernel: &SmoothingKernel<T>) -> Result<Vec<T>> {
    let n = power.len();
    if kernel.weights.len() > n {
        return Err(Error::InvalidParameter(format!(
            "kernel of width {} exceeds the {n} spectral bins",
            kernel.weights.len()
        )));
    }
    if kernel.is_identity() {
        return Ok(power.to_vec());
    }
    let r = kernel.radius();
    let out = (0..n)
        .map(|w| {
            kernel.weights.iter().enumerate().fold(T::zero(), |acc, (i, &kw)| {
                // tau = i - r; index w - tau mod n
                let idx = (w + n + r - i) % n;
                acc + power[idx] * kw
            })
        })
        .collect();
    Ok(out)
}

/// `max(smooth(ensemble_spectrum), mean_field_spectrum)` per bin.
pub fn clamped_smooth<T: Real>(
    ensemble_spectrum: &SpectrumProfile<T>,
    mean_field_spectrum: &SpectrumProfile<T>,
    kernel: &SmoothingKernel<T>,
) -> Result<SpectrumProfile<T>> {
    if ensemble_spectrum.len() != mean_field_spectrum.len() {
        return Err(Error::Shape(format!(
            "ensemble spectrum has {} bins, mean-field spectrum {}",
            ensemble_spectrum.len(),
            mean_field_spectrum.len()
        )));
    }
    let smooth = smooth_spectrum(ensemble_spectrum, kernel)?;
    Ok(SpectrumProfile {
        power: smooth.power.iter().zip(&mean_field_spectrum.power).map(|(&s, &f)| s.max(f)).collect(),
    })
}

/// Per-wavenumber multipliers, mirrored so that `alpha[w] == alpha[N - w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RescalingFactors<T> {
    pub alpha: Vec<T>,
    /// Bins where the denominator vanished and `alpha` was forced to one.
    pub degenerate: Vec<bool>,
    /// The spectrum the rescaled ensemble is built to have.
    pub target: SpectrumProfile<T>,
}

/// Fourier coefficients of an ensemble split into mean and perturbation parts.
#[derive(Debug, Clone)]
pub struct SpectralSplit<T> {
    pub mean: Vec<Complex<T>>,
    /// Row `k`: `F(u_k) - F(mean)`.
    pub perturbations: Vec<Vec<Complex<T>>>,
    /// `(1/K) sum_k |F(u_k)|^2`.
    pub ensemble_power: SpectrumProfile<T>,
}

impl<T: Real> SpectralSplit<T> {
    /// Splits already-transformed members.
    pub fn from_member_coefficients(members: Vec<Vec<Complex<T>>>) -> Result<Self> {
        let k = members.len();
        if k < 2 {
            return Err(Error::DegenerateEnsemble(format!("need at least 2 members, got {k}")));
        }
        let n = members[0].len();
        if members.iter().any(|m| m.len() != n) {
            return Err(Error::Shape("member spectra differ in length".into()));
        }
        let inv = T::one() / T::from_count(k);
        let mut mean = vec![Complex::new(T::zero(), T::zero()); n];
        let mut power = vec![T::zero(); n];
        for m in &members {
            for w in 0..n {
                mean[w] = mean[w] + m[w];
                power[w] = power[w] + m[w].norm_sqr();
            }
        }
        mean.iter_mut().for_each(|c| *c = *c * inv);
        power.iter_mut().for_each(|p| *p = *p * inv);
        let perturbations = members
            .into_iter()
            .map(|m| m.into_iter().zip(&mean).map(|(c, &mu)| c - mu).collect())
            .collect();
        Ok(Self { mean, perturbations, ensemble_power: SpectrumProfile { power } })
    }

    pub fn new(ensemble: &Ensemble<T>, dft: &Dft<T>) -> Result<Self> {
        let coeffs = ensemble.members().map(|m| dft.forward(m)).collect::<Result<Vec<_>>>()?;
        Self::from_member_coefficients(coeffs)
    }

    pub fn mean_field_power(&self) -> SpectrumProfile<T> {
        SpectrumProfile { power: power_of(&self.mean) }
    }

    /// `(1/K) sum_k |F(x_k)|^2`.
    pub fn perturbation_power(&self) -> Vec<T> {
        let n = self.mean.len();
        let inv = T::one() / T::from_count(self.perturbations.len());
        let mut acc = vec![T::zero(); n];
        for p in &self.perturbations {
            for (a, c) in acc.iter_mut().zip(p) {
                *a = *a + c.norm_sqr();
            }
        }
        acc.into_iter().map(|a| a * inv).collect()
    }

    /// Perturbation-only factors:
    /// `alpha = sqrt((S(P_u) - |F(m)|^2) / ((1/K) sum |F(x_k)|^2))`.
    pub fn perturbation_factors(&self, kernel: &SmoothingKernel<T>) -> Result<RescalingFactors<T>> {
        let floor = self.mean_field_power();
        let target = clamped_smooth(&self.ensemble_power, &floor, kernel)?;
        let denom = self.perturbation_power();
        let eps = T::lit(DEGENERATE_BIN_RATIO) * self.ensemble_power.max();
        Ok(mirrored_factors(target, |w, t| {
            if denom[w] <= eps {
                None
            } else {
                Some(((t - floor.power[w]) / denom[w]).sqrt())
            }
        }))
    }

    /// Whole-member factors:
    /// `alpha~ = sqrt(S(P_u) / (|F(m)|^2 + (1/K) sum |F(x_k)|^2))`.
    pub fn whole_ensemble_factors(&self, kernel: &SmoothingKernel<T>) -> Result<RescalingFactors<T>> {
        let floor = self.mean_field_power();
        let target = clamped_smooth(&self.ensemble_power, &floor, kernel)?;
        let pert = self.perturbation_power();
        let eps = T::lit(DEGENERATE_BIN_RATIO) * self.ensemble_power.max();
        Ok(mirrored_factors(target, |w, t| {
            let denom = floor.power[w] + pert[w];
            if denom <= eps {
                None
            } else {
                Some((t / denom).sqrt())
            }
        }))
    }
}

/// Evaluates `factor` on bins `0..=N/2` and mirrors onto `N/2+1..N`.
/// `None` marks a degenerate bin (alpha = 1).
fn mirrored_factors<T: Real>(
    target: SpectrumProfile<T>,
    factor: impl Fn(usize, T) -> Option<T>,
) -> RescalingFactors<T> {
    let n = target.len();
    let mut alpha = vec![T::one(); n];
    let mut degenerate = vec![false; n];
    for w in 0..=n / 2 {
        let (a, d) = match factor(w, target.power[w]) {
            Some(a) => (a, false),
            None => (T::one(), true),
        };
        alpha[w] = a;
        degenerate[w] = d;
        let mirror = (n - w) % n;
        alpha[mirror] = a;
        degenerate[mirror] = d;
    }
    RescalingFactors { alpha, degenerate, target }
}

pub fn rescaling_factors<T: Real>(ensemble: &Ensemble<T>, kernel: &SmoothingKernel<T>) -> Result<RescalingFactors<T>> {
    SpectralSplit::new(ensemble, &Dft::new(ensemble.dim()))?.perturbation_factors(kernel)
}

pub fn whole_ensemble_factors<T: Real>(
    ensemble: &Ensemble<T>,
    kernel: &SmoothingKernel<T>,
) -> Result<RescalingFactors<T>> {
    SpectralSplit::new(ensemble, &Dft::new(ensemble.dim()))?.whole_ensemble_factors(kernel)
}

fn rebuild<T: Real>(
    dft: &Dft<T>,
    ensemble: &Ensemble<T>,
    member_coeffs: impl Iterator<Item = Vec<Complex<T>>>,
) -> Result<Ensemble<T>> {
    let scale = ensemble.as_slice().iter().fold(T::zero(), |a, v| a.max(v.abs())).max(T::min_positive_value());
    let mut data = Vec::with_capacity(ensemble.size() * ensemble.dim());
    let mut residue = T::zero();
    for coeffs in member_coeffs {
        for c in dft.inverse(&coeffs)? {
            residue = residue.max(c.im.abs());
            data.push(c.re);
        }
    }
    if residue > imaginary_tolerance::<T>() * scale {
        return Err(Error::ImaginaryResidue { residue: residue.to_f64_lossy(), scale: scale.to_f64_lossy() });
    }
    Ensemble::from_row_major(ensemble.size(), ensemble.dim(), data)
}

/// Result of a rescaling pass, with the factors that produced it.
#[derive(Debug, Clone)]
pub struct Smoothed<T> {
    pub ensemble: Ensemble<T>,
    pub factors: RescalingFactors<T>,
}

/// Rescales the perturbations: member `k` becomes `F^-1(F(m) + alpha F(x_k))`.
pub fn smooth_perturbations<T: Real>(ensemble: &Ensemble<T>, kernel: &SmoothingKernel<T>) -> Result<Smoothed<T>> {
    let dft = Dft::new(ensemble.dim());
    let split = SpectralSplit::new(ensemble, &dft)?;
    let factors = split.perturbation_factors(kernel)?;
    let coeffs = split.perturbations.iter().map(|x| {
        x.iter().zip(&split.mean).zip(&factors.alpha).map(|((&xw, &mw), &a)| mw + xw * a).collect()
    });
    Ok(Smoothed { ensemble: rebuild(&dft, ensemble, coeffs)?, factors })
}

pub fn apply_spectrum_smoothing<T: Real>(ensemble: &Ensemble<T>, kernel: &SmoothingKernel<T>) -> Result<Ensemble<T>> {
    if kernel.is_identity() {
        // the rescaling would be the identity up to transform round-off
        if ensemble.size() < 2 {
            return Err(Error::DegenerateEnsemble(format!("need at least 2 members, got {}", ensemble.size())));
        }
        return Ok(ensemble.clone());
    }
    Ok(smooth_perturbations(ensemble, kernel)?.ensemble)
}

/// Rescales whole members: member `k` becomes `F^-1(alpha~ F(u_k))`. Moves the mean.
pub fn smooth_whole_members<T: Real>(ensemble: &Ensemble<T>, kernel: &SmoothingKernel<T>) -> Result<Smoothed<T>> {
    let dft = Dft::new(ensemble.dim());
    let split = SpectralSplit::new(ensemble, &dft)?;
    let factors = split.whole_ensemble_factors(kernel)?;
    let coeffs = split.perturbations.iter().map(|x| {
        x.iter().zip(&split.mean).zip(&factors.alpha).map(|((&xw, &mw), &a)| (mw + xw) * a).collect()
    });
    Ok(Smoothed { ensemble: rebuild(&dft, ensemble, coeffs)?, factors })
}

pub fn apply_whole_ensemble_rescaling<T: Real>(
    ensemble: &Ensemble<T>,
    kernel: &SmoothingKernel<T>,
) -> Result<Ensemble<T>> {
    if kernel.is_identity() {
        if ensemble.size() < 2 {
            return Err(Error::DegenerateEnsemble(format!("need at least 2 members, got {}", ensemble.size())));
        }
        return Ok(ensemble.clone());
    }
    Ok(smooth_whole_members(ensemble, kernel)?.ensemble)
}

/// CSV `wavenumber,power` over the half spectrum `0..=N/2`.
pub fn write_spectrum_csv<T: Real, W: Write>(writer: W, spectrum: &SpectrumProfile<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["wavenumber", "power"])?;
    for (i, p) in spectrum.half().iter().enumerate() {
        w.write_record([i.to_string(), format!("{p}")])?;
    }
    w.flush()?;
    Ok(())
}
