//! Ensemble storage and its mean / scaled-perturbation factorization.
//!
//! Members are stored row-major: row `k` of the `K x N` block is member `k`.
//! The same layout is used for the perturbation matrix, so the covariance is
//! `P^T P` where `P` holds the rows `(u_k - mean) / sqrt(K - 1)`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{ModelParams, Rk4Workspace, StateVector};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<T> {
    size: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> Ensemble<T> {
    pub fn from_members(members: &[StateVector<T>]) -> Result<Self> {
        let dim = members.first().map_or(0, |m| m.len());
        if members.iter().any(|m| m.len() != dim) {
            return Err(Error::Shape("ensemble members differ in dimension".into()));
        }
        let data = members.iter().flat_map(|m| m.as_slice().iter().copied()).collect();
        Self::from_row_major(members.len(), dim, data)
    }

    /// `size` members of dimension `dim`, member-major.
    pub fn from_row_major(size: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if size < 1 || dim < 1 {
            return Err(Error::DegenerateEnsemble(format!(
                "ensemble needs at least one member and component (got {size}x{dim})"
            )));
        }
        if data.len() != size * dim {
            return Err(Error::Shape(format!(
                "{} values cannot fill {size} members of dimension {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateEnsemble("non-finite member entries".into()));
        }
        Ok(Self { size, dim, data })
    }

    /// Number of members `K`.
    pub fn size(&self) -> usize {
        self.size
    }

    /// State dimension `N`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn member(&self, k: usize) -> &[T] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn members(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// First `k` members.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k > self.size {
            return Err(Error::Shape(format!("cannot take {k} of {} members", self.size)));
        }
        Self::from_row_major(k, self.dim, self.data[..k * self.dim].to_vec())
    }

    pub fn mean(&self) -> Vec<T> {
        let mut mean = vec![T::zero(); self.dim];
        for m in self.members() {
            for (acc, &v) in mean.iter_mut().zip(m) {
                *acc = *acc + v;
            }
        }
        let inv = T::one() / T::from_count(self.size);
        mean.iter_mut().for_each(|v| *v = *v * inv);
        mean
    }

    /// Per-component unbiased sample variance.
    pub fn variance(&self) -> Result<Vec<T>> {
        let stats = decompose(self)?;
        let mut var = vec![T::zero(); self.dim];
        for k in 0..self.size {
            for (acc, &x) in var.iter_mut().zip(stats.perturbations.row(k)) {
                *acc = *acc + x * x;
            }
        }
        Ok(var)
    }

    /// Average over components of the per-component ensemble standard deviation.
    pub fn mean_spread(&self) -> Result<T> {
        let var = self.variance()?;
        let total = var.iter().fold(T::zero(), |acc, &v| acc + v.sqrt());
        Ok(total / T::from_count(self.dim))
    }
}

/// Mean and `1/sqrt(K-1)`-scaled perturbations of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats<T> {
    pub mean: Vec<T>,
    /// `K x N`; row `k` is `(u_k - mean) / sqrt(K - 1)`.
    pub perturbations: Matrix<T>,
}

impl<T: Real> EnsembleStats<T> {
    pub fn size(&self) -> usize {
        self.perturbations.rows()
    }

    pub fn dim(&self) -> usize {
        self.perturbations.cols()
    }

    /// Sample covariance `P^T P` (`N x N`), materialized on demand.
    pub fn covariance(&self) -> Matrix<T> {
        let p = &self.perturbations;
        let n = p.cols();
        let mut c = Matrix::zeros(n, n);
        for k in 0..p.rows() {
            let row = p.row(k);
            for i in 0..n {
                let xi = row[i];
                for j in i..n {
                    c[(i, j)] = c[(i, j)] + xi * row[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                c[(i, j)] = c[(j, i)];
            }
        }
        c
    }

    /// Single covariance entry `C_ij`.
    pub fn covariance_entry(&self, i: usize, j: usize) -> T {
        let p = &self.perturbations;
        (0..p.rows()).fold(T::zero(), |acc, k| acc + p[(k, i)] * p[(k, j)])
    }
}

pub fn decompose<T: Real>(ensemble: &Ensemble<T>) -> Result<EnsembleStats<T>> {
    let k = ensemble.size();
    if k < 2 {
        return Err(Error::DegenerateEnsemble(format!("need at least 2 members, got {k}")));
    }
    let mean = ensemble.mean();
    let scale = T::one() / T::from_count(k - 1).sqrt();
    let mut p = Matrix::zeros(k, ensemble.dim());
    for (r, m) in ensemble.members().enumerate() {
        for ((x, &u), &mu) in p.row_mut(r).iter_mut().zip(m).zip(&mean) {
            *x = (u - mu) * scale;
        }
    }
    Ok(EnsembleStats { mean, perturbations: p })
}

/// Inverse of [`decompose`]: member `k` is `mean + sqrt(K-1) * row k`.
pub fn recompose<T: Real>(mean: &[T], perturbations: &Matrix<T>) -> Result<Ensemble<T>> {
    if perturbations.cols() != mean.len() {
        return Err(Error::Shape(format!(
            "perturbations have dimension {}, mean has {}",
            perturbations.cols(),
            mean.len()
        )));
    }
    let k = perturbations.rows();
    if k < 2 {
        return Err(Error::DegenerateEnsemble(format!("need at least 2 members, got {k}")));
    }
    let scale = T::from_count(k - 1).sqrt();
    let mut data = Vec::with_capacity(k * mean.len());
    for r in 0..k {
        data.extend(perturbations.row(r).iter().zip(mean).map(|(&x, &mu)| mu + scale * x));
    }
    Ensemble::from_row_major(k, mean.len(), data)
}

/// Advances every member `steps` RK4 steps. Members run in parallel; each
/// member's arithmetic is independent, so the result does not depend on the
/// thread count.
pub fn propagate<T: Real>(ensemble: &Ensemble<T>, params: &ModelParams<T>, steps: usize) -> Result<Ensemble<T>> {
    params.validate()?;
    if ensemble.dim() != params.dimension {
        return Err(Error::Shape(format!(
            "ensemble dimension {} does not match model dimension {}",
            ensemble.dim(),
            params.dimension
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("propagate needs at least one step".into()));
    }
    let mut out = ensemble.clone();
    let dim = out.dim;
    out.data
        .par_chunks_mut(dim)
        .enumerate()
        .map_init(
            || Rk4Workspace::new(dim),
            |ws, (k, member)| {
                ws.integrate(member, params, steps, 0).map_err(|e| match e {
                    Error::NumericalOverflow { step, .. } => Error::NumericalOverflow { step, member: Some(k) },
                    other => other,
                })
            },
        )
        .collect::<Result<Vec<()>>>()?;
    Ok(out)
}

/// CSV dump with `member,component,value` triples.
pub fn write_snapshot_csv<T: Real, W: Write>(writer: W, ensemble: &Ensemble<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["member", "component", "value"])?;
    for (k, m) in ensemble.members().enumerate() {
        for (i, v) in m.iter().enumerate() {
            w.write_record([k.to_string(), i.to_string(), format!("{v}")])?;
        }
    }
    w.flush()?;
    Ok(())
}
