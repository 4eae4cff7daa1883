//! Reference implementations used as test oracles. Nothing here calls into
//! the crate's own linear algebra or FFT.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use smoothda::ensemble::Ensemble;
use smoothda::filter::{etkf_assimilate, LocalizationMatrix, ObservationSetup};

pub type Dense = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn zeros(r: usize, c: usize) -> Dense {
    vec![vec![0.0; c]; r]
}

pub fn mul(a: &Dense, b: &Dense) -> Dense {
    let mut out = zeros(a.len(), b[0].len());
    for i in 0..a.len() {
        for k in 0..b.len() {
            for j in 0..b[0].len() {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn transpose(a: &Dense) -> Dense {
    (0..a[0].len()).map(|j| (0..a.len()).map(|i| a[i][j]).collect()).collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(a: &Dense) -> Dense {
    let n = a.len();
    let mut m: Dense = a.to_vec();
    let mut inv = zeros(n, n);
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..n {
        let p = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, p);
        inv.swap(col, p);
        let d = m[col][col];
        assert!(d.abs() > 1e-300, "singular matrix in oracle");
        for j in 0..n {
            m[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                for j in 0..n {
                    m[r][j] -= f * m[col][j];
                    inv[r][j] -= f * inv[col][j];
                }
            }
        }
    }
    inv
}

pub fn sample_mean(members: &[Vec<f64>]) -> Vec<f64> {
    let n = members[0].len();
    (0..n).map(|i| members.iter().map(|m| m[i]).sum::<f64>() / members.len() as f64).collect()
}

/// Unbiased sample covariance.
pub fn sample_cov(members: &[Vec<f64>]) -> Dense {
    let mean = sample_mean(members);
    let n = mean.len();
    let k = members.len() as f64;
    let mut c = zeros(n, n);
    for m in members {
        for i in 0..n {
            for j in 0..n {
                c[i][j] += (m[i] - mean[i]) * (m[j] - mean[j]) / (k - 1.0);
            }
        }
    }
    c
}

/// Textbook Kalman update of `(mean, cov)`, with `obs_idx` selecting observed
/// components and diagonal noise variances `gamma`.
pub fn dense_kalman(mean: &[f64], cov: &Dense, obs_idx: &[usize], gamma: &[f64], y: &[f64]) -> (Vec<f64>, Dense) {
    let n = mean.len();
    let m = obs_idx.len();
    let mut h = zeros(m, n);
    for (r, &i) in obs_idx.iter().enumerate() {
        h[r][i] = 1.0;
    }
    let ht = transpose(&h);
    let mut s = mul(&mul(&h, cov), &ht);
    for a in 0..m {
        s[a][a] += gamma[a];
    }
    let gain = mul(&mul(cov, &ht), &invert(&s));
    let innov: Vec<f64> = (0..m).map(|a| y[a] - mean[obs_idx[a]]).collect();
    let post_mean: Vec<f64> = (0..n).map(|i| mean[i] + (0..m).map(|a| gain[i][a] * innov[a]).sum::<f64>()).collect();
    let kh = mul(&gain, &h);
    let mut imkh = zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            imkh[i][j] = if i == j { 1.0 } else { 0.0 } - kh[i][j];
        }
    }
    (post_mean, mul(&imkh, cov))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs_diff_dense(a: &Dense, b: &Dense) -> f64 {
    a.iter().zip(b).map(|(x, y)| max_abs_diff(x, y)).fold(0.0, f64::max)
}

pub fn members_of(e: &Ensemble<f64>) -> Vec<Vec<f64>> {
    e.members().map(<[f64]>::to_vec).collect()
}

/// Largest mean/covariance error of the ETKF against the dense Kalman
/// formulas for one random small problem without localization.
pub fn brute_force_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.random_range(1..=3usize);
    let k = r.random_range(2..=4usize);
    let mut obs_idx: Vec<usize> = (0..n).filter(|_| r.random_bool(0.6)).collect();
    if obs_idx.is_empty() {
        obs_idx.push(r.random_range(0..n));
    }
    let offset: Vec<f64> = (0..n).map(|_| 3.0 * normal(&mut r)).collect();
    let members: Vec<Vec<f64>> =
        (0..k).map(|_| offset.iter().map(|o| o + (0.2 + r.random::<f64>()) * normal(&mut r)).collect()).collect();
    let noise_std: Vec<f64> = obs_idx.iter().map(|_| 0.3 + 1.5 * r.random::<f64>()).collect();
    let y: Vec<f64> = obs_idx.iter().map(|&i| offset[i] + normal(&mut r)).collect();

    let prior = Ensemble::from_row_major(k, n, members.concat()).unwrap();
    let setup = ObservationSetup::new(n, obs_idx.clone(), noise_std.clone()).unwrap();
    let post = etkf_assimilate(&prior, &y, &setup, &LocalizationMatrix::none(n)).unwrap();

    let gamma: Vec<f64> = noise_std.iter().map(|s| s * s).collect();
    let (mean, cov) = dense_kalman(&sample_mean(&members), &sample_cov(&members), &obs_idx, &gamma, &y);
    let post_members = members_of(&post);
    max_abs_diff(&sample_mean(&post_members), &mean).max(max_abs_diff_dense(&sample_cov(&post_members), &cov))
}

/// `sum_j x_j exp(-2 pi i w j / N)` evaluated term by term; returns `|.|^2`.
pub fn naive_power(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let table: Vec<(f64, f64)> =
        (0..n).map(|t| (-2.0 * std::f64::consts::PI * t as f64 / n as f64).sin_cos()).collect();
    (0..n)
        .map(|w| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &v) in x.iter().enumerate() {
                let (s, c) = table[(w * j) % n];
                re += v * c;
                im += v * s;
            }
            re * re + im * im
        })
        .collect()
}

/// Gaussian weights at integer offsets `-r..=r`, `r = max(1, ceil(4 sigma))`, unit sum.
pub fn gaussian_weights(sigma: f64) -> Vec<f64> {
    let r = ((4.0 * sigma).ceil() as i64).max(1);
    let raw: Vec<f64> = (-r..=r).map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

pub fn circular_convolve(p: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = p.len() as i64;
    let r = (weights.len() / 2) as i64;
    (0..n)
        .map(|w| (-r..=r).map(|t| p[(w - t).rem_euclid(n) as usize] * weights[(t + r) as usize]).sum())
        .collect()
}

/// Ensemble with a jagged perturbation spectrum around a structured mean.
/// `band` limits perturbations to wavenumbers below it; `spike` adds a
/// strong mean-field mode that the smoothed spectrum cannot reach.
pub fn random_ensemble(seed: u64, n: usize, k: usize, band: Option<usize>, spike: bool) -> Ensemble<f64> {
    let mut r = rng(seed);
    let tau = 2.0 * std::f64::consts::PI;
    let mut mean: Vec<f64> = (0..n).map(|j| 2.0 + (tau * 3.0 * j as f64 / n as f64).sin()).collect();
    if spike {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += 6.0 * (tau * 9.0 * j as f64 / n as f64).cos();
        }
    }
    let top = band.unwrap_or(n / 2 + 1).min(n / 2 + 1);
    let amps: Vec<f64> = (0..top).map(|w| (0.1 + r.random::<f64>()) / (1.0 + w as f64 / 8.0)).collect();
    let mut data = Vec::with_capacity(n * k);
    for _ in 0..k {
        let coeffs: Vec<(f64, f64)> = (0..top).map(|w| (amps[w] * normal(&mut r), amps[w] * normal(&mut r))).collect();
        for (j, m) in mean.iter().enumerate() {
            let mut v = *m;
            for (w, (a, b)) in coeffs.iter().enumerate() {
                let ph = tau * (w * j) as f64 / n as f64;
                v += a * ph.cos() + b * ph.sin();
            }
            data.push(v);
        }
    }
    Ensemble::from_row_major(k, n, data).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct TargetingErrors {
    /// Largest mean change relative to the largest mean magnitude.
    pub mean: f64,
    /// Largest per-bin relative mismatch against the clamped smoothed spectrum.
    pub spectrum: f64,
    /// Largest change on exempt bins relative to the largest power.
    pub exempt: f64,
    pub exempt_bins: usize,
    pub clamped_bins: usize,
}

/// Smooths `ensemble` with the crate and checks the result against a
/// spectrum computed here from scratch.
pub fn spectrum_targeting(ensemble: &Ensemble<f64>, sigma: f64) -> TargetingErrors {
    use smoothda::spectral::{apply_spectrum_smoothing, SmoothingKernel};
    let out = apply_spectrum_smoothing(ensemble, &SmoothingKernel::gaussian(sigma).unwrap()).unwrap();
    let members = members_of(ensemble);
    let k = members.len() as f64;
    let n = ensemble.dim();
    let mean = sample_mean(&members);
    let out_mean = sample_mean(&members_of(&out));
    let scale = mean.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let avg_power = |ms: &[Vec<f64>]| {
        let mut acc = vec![0.0; n];
        for m in ms {
            for (a, p) in acc.iter_mut().zip(naive_power(m)) {
                *a += p / k;
            }
        }
        acc
    };
    let perts: Vec<Vec<f64>> = members.iter().map(|m| m.iter().zip(&mean).map(|(a, b)| a - b).collect()).collect();
    let p_u = avg_power(&members);
    let d = avg_power(&perts);
    let f_m = naive_power(&mean);
    let smoothed = circular_convolve(&p_u, &gaussian_weights(sigma));
    let p_out = avg_power(&members_of(&out));
    let max_p = p_u.iter().cloned().fold(0.0, f64::max);

    let mut errs = TargetingErrors {
        mean: max_abs_diff(&mean, &out_mean) / scale.max(f64::MIN_POSITIVE),
        spectrum: 0.0,
        exempt: 0.0,
        exempt_bins: 0,
        clamped_bins: 0,
    };
    for w in 0..n {
        if d[w] <= 1e-14 * max_p {
            errs.exempt_bins += 1;
            errs.exempt = errs.exempt.max((p_out[w] - p_u[w]).abs() / max_p);
        } else {
            if smoothed[w] < f_m[w] {
                errs.clamped_bins += 1;
            }
            let target = smoothed[w].max(f_m[w]);
            errs.spectrum = errs.spectrum.max((p_out[w] - target).abs() / target);
        }
    }
    errs
}

/// Ratio of successive differences when halving the RK4 step; about 16 for
/// a fourth-order method.
pub fn rk4_richardson_ratio() -> f64 {
    use smoothda::models::{integrate, spin_up, ModelParams};
    let base = ModelParams::new(40, 8.0, 0.01).unwrap();
    let u0 = spin_up(&base, 1e-3, 20.0).unwrap();
    let horizon = 0.4;
    let run = |dt: f64| {
        let p = ModelParams::new(40, 8.0, dt).unwrap();
        integrate(&u0, &p, (horizon / dt).round() as usize).unwrap().into_inner()
    };
    let (a, b, c) = (run(0.04), run(0.02), run(0.01));
    max_abs_diff(&a, &b) / max_abs_diff(&b, &c)
}

/// Largest drift of the constant state `u_i = F` over many steps.
pub fn fixed_point_drift(forcing: f64) -> f64 {
    use smoothda::models::{integrate, ModelParams, StateVector};
    let p = ModelParams::new(128, forcing, 0.01).unwrap();
    let u = integrate(&StateVector::constant(128, forcing), &p, 2000).unwrap();
    u.as_slice().iter().map(|v| (v - forcing).abs()).fold(0.0, f64::max)
}

/// Largest relative deviation of the inflated sample covariance from
/// `rho` times the original.
pub fn inflation_scaling_error(seed: u64, rho: f64) -> f64 {
    let e = random_ensemble(seed, 16, 7, None, false);
    let inflated = smoothda::filter::inflate(&e, rho).unwrap();
    let before = sample_cov(&members_of(&e));
    let after = sample_cov(&members_of(&inflated));
    let scale = before.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let scaled: Dense = before.iter().map(|r| r.iter().map(|v| rho * v).collect()).collect();
    max_abs_diff_dense(&after, &scaled) / scale
}
