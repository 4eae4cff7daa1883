//! Small dense linear algebra: row-major matrices, Cholesky solves and a
//! cyclic Jacobi eigensolver for symmetric matrices.
//!
//! The matrices that show up in the filter are at most a few hundred on a
//! side (observation space) or the ensemble size (transform space), so plain
//! loops are adequate.

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                for (o, &b) in out.row_mut(i).iter_mut().zip(orow) {
                    *o = *o + a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).fold(T::zero(), |acc, i| acc + self[(i, i)])
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs()))
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    factor: Matrix<T>,
}

impl<T: Real> Cholesky<T> {
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape("Cholesky needs a square matrix".into()));
        }
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d = d - l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NumericalFailure {
                    context: format!("Cholesky factorization (pivot {j})"),
                    condition: f64::INFINITY,
                });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { factor: l })
    }

    pub fn factor(&self) -> &Matrix<T> {
        &self.factor
    }

    /// Cheap condition estimate: squared ratio of extreme diagonal entries of the factor.
    pub fn condition_estimate(&self) -> f64 {
        let n = self.factor.rows();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let d = self.factor[(i, i)].to_f64_lossy();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (hi / lo).powi(2)
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let l = &self.factor;
        let n = l.rows();
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s = s - l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }
}

/// Eigen-decomposition `A = V diag(values) V^T` of a symmetric matrix.
///
/// Column `j` of `vectors` belongs to `values[j]`; values are sorted ascending.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    pub values: Vec<T>,
    pub vectors: Matrix<T>,
}

impl<T: Real> SymmetricEigen<T> {
    /// Householder tridiagonalization followed by implicit QL iterations.
    pub fn new(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape("eigen-decomposition needs a square matrix".into()));
        }
        if a.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure {
                context: "symmetric eigen-decomposition of non-finite matrix".into(),
                condition: f64::INFINITY,
            });
        }
        let n = a.rows();
        if n == 0 {
            return Ok(Self { values: Vec::new(), vectors: Matrix::zeros(0, 0) });
        }
        let mut v = a.clone();
        let mut d = vec![T::zero(); n];
        let mut e = vec![T::zero(); n];
        tridiagonalize(&mut v, &mut d, &mut e);
        tridiagonal_ql(&mut v, &mut d, &mut e)?;
        Ok(Self { values: d, vectors: v })
    }

    /// Cyclic Jacobi rotations until the off-diagonal mass is negligible.
    ///
    /// Slower than [`SymmetricEigen::new`] but built on a different algorithm,
    /// which makes it useful for cross-checking.
    pub fn jacobi(a: &Matrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Shape("eigen-decomposition needs a square matrix".into()));
        }
        let n = a.rows();
        let mut m = a.clone();
        let mut v = Matrix::identity(n);
        let eps = T::epsilon();
        let scale = a.as_slice().iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
        if !scale.is_finite() {
            return Err(Error::NumericalFailure {
                context: "symmetric eigen-decomposition of non-finite matrix".into(),
                condition: f64::INFINITY,
            });
        }
        const MAX_SWEEPS: usize = 100;
        let mut converged = n < 2 || scale == T::zero();
        for _ in 0..MAX_SWEEPS {
            if converged {
                break;
            }
            let mut off = T::zero();
            for p in 0..n {
                for q in p + 1..n {
                    off = off + m[(p, q)] * m[(p, q)];
                }
            }
            if off.sqrt() <= eps * scale {
                converged = true;
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m[(p, q)];
                    let app = m[(p, p)];
                    let aqq = m[(q, q)];
                    if apq.abs() <= T::min_positive_value()
                        || (apq.abs() < eps * eps * app.abs() && apq.abs() < eps * eps * aqq.abs())
                    {
                        m[(p, q)] = T::zero();
                        m[(q, p)] = T::zero();
                        continue;
                    }
                    let theta = (aqq - app) / (T::lit(2.0) * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        if !converged {
            return Err(Error::NumericalFailure {
                context: "Jacobi eigensolver did not converge".into(),
                condition: f64::NAN,
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap_or(std::cmp::Ordering::Equal));
        let values = order.iter().map(|&i| m[(i, i)]).collect();
        let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
        Ok(Self { values, vectors })
    }

    /// `V diag(f(values)) V^T`.
    pub fn reconstruct_with(&self, f: impl Fn(T) -> T) -> Matrix<T> {
        let n = self.values.len();
        let fv: Vec<T> = self.values.iter().map(|&x| f(x)).collect();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut s = T::zero();
                for k in 0..n {
                    s = s + self.vectors[(i, k)] * fv[k] * self.vectors[(j, k)];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }
}

/// Householder reduction of the symmetric matrix in `v` to tridiagonal form.
/// On return `d` holds the diagonal, `e[1..]` the subdiagonal and `v` the
/// accumulated orthogonal transform.
fn tridiagonalize<T: Real>(v: &mut Matrix<T>, d: &mut [T], e: &mut [T]) {
    let n = d.len();
    for j in 0..n {
        d[j] = v[(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = T::zero();
        let mut h = T::zero();
        for k in 0..i {
            scale = scale + d[k].abs();
        }
        if scale == T::zero() {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[(i - 1, j)];
                v[(i, j)] = T::zero();
                v[(j, i)] = T::zero();
            }
        } else {
            for k in 0..i {
                d[k] = d[k] / scale;
                h = h + d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > T::zero() {
                g = -g;
            }
            e[i] = scale * g;
            h = h - f * g;
            d[i - 1] = f - g;
            for item in e.iter_mut().take(i) {
                *item = T::zero();
            }
            for j in 0..i {
                f = d[j];
                v[(j, i)] = f;
                g = e[j] + v[(j, j)] * f;
                for k in j + 1..i {
                    g = g + v[(k, j)] * d[k];
                    e[k] = e[k] + v[(k, j)] * f;
                }
                e[j] = g;
            }
            f = T::zero();
            for j in 0..i {
                e[j] = e[j] / h;
                f = f + e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] = e[j] - hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[(k, j)] = v[(k, j)] - (f * e[k] + g * d[k]);
                }
                d[j] = v[(i - 1, j)];
                v[(i, j)] = T::zero();
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[(n - 1, i)] = v[(i, i)];
        v[(i, i)] = T::one();
        let h = d[i + 1];
        if h != T::zero() {
            for k in 0..=i {
                d[k] = v[(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = T::zero();
                for k in 0..=i {
                    g = g + v[(k, i + 1)] * v[(k, j)];
                }
                for k in 0..=i {
                    v[(k, j)] = v[(k, j)] - g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[(k, i + 1)] = T::zero();
        }
    }
    for j in 0..n {
        d[j] = v[(n - 1, j)];
        v[(n - 1, j)] = T::zero();
    }
    v[(n - 1, n - 1)] = T::one();
    e[0] = T::zero();
}

/// Implicit QL on the tridiagonal `(d, e)`, accumulating into `v`; sorts
/// eigenvalues ascending with their vectors.
fn tridiagonal_ql<T: Real>(v: &mut Matrix<T>, d: &mut [T], e: &mut [T]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = T::zero();
    let mut f = T::zero();
    let mut tst1 = T::zero();
    let eps = T::epsilon();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(Error::NumericalFailure {
                        context: "tridiagonal QL did not converge".into(),
                        condition: f64::NAN,
                    });
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (T::lit(2.0) * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for item in d.iter_mut().take(n).skip(l + 2) {
                    *item = *item - h;
                }
                f = f + h;
                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[(k, i + 1)];
                        v[(k, i + 1)] = s * v[(k, i)] + c * h;
                        v[(k, i)] = c * v[(k, i)] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] = d[l] + f;
        e[l] = T::zero();
    }
    // selection sort keeps vectors paired with values
    for i in 0..n.saturating_sub(1) {
        let mut k = i;
        let mut p = d[i];
        for (j, &dj) in d.iter().enumerate().skip(i + 1) {
            if dj < p {
                k = j;
                p = dj;
            }
        }
        if k != i {
            d[k] = d[i];
            d[i] = p;
            for r in 0..n {
                let tmp = v[(r, i)];
                v[(r, i)] = v[(r, k)];
                v[(r, k)] = tmp;
            }
        }
    }
    Ok(())
}

/// Symmetric square root of a symmetric positive semi-definite matrix.
///
/// Eigenvalues in `[-tol * scale, 0)` are clipped to zero as round-off, with
/// `tol = 1e-10` and `scale` the largest eigenvalue magnitude (at least 1).
/// Anything more negative is reported as a symmetry violation.
pub fn symmetric_sqrt<T: Real>(a: &Matrix<T>) -> Result<Matrix<T>> {
    let eig = SymmetricEigen::new(a)?;
    let scale = eig.values.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
    let floor = -T::lit(1e-10) * scale;
    if let Some(&bad) = eig.values.iter().find(|&&v| v < floor) {
        return Err(Error::SymmetryViolation { eigenvalue: bad.to_f64_lossy() });
    }
    Ok(eig.reconstruct_with(|x| x.max(T::zero()).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Matrix<f64> {
        let b = Matrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + if i == j { 0.5 } else { 0.0 });
        let mut a = b.matmul(&b.transpose()).unwrap();
        for i in 0..n {
            a[(i, i)] += 1.0;
        }
        a
    }

    #[test]
    fn cholesky_solves() {
        let a = spd(6);
        let x: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let b: Vec<f64> = (0..6).map(|i| (0..6).map(|j| a[(i, j)] * x[j]).sum()).collect();
        let sol = Cholesky::new(&a).unwrap().solve(&b);
        for (s, e) in sol.iter().zip(&x) {
            assert!((s - e).abs() < 1e-10);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Matrix::from_row_major(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(matches!(Cholesky::new(&a), Err(Error::NumericalFailure { .. })));
    }

    #[test]
    fn jacobi_reconstructs() {
        let a = spd(9);
        let eig = SymmetricEigen::jacobi(&a).unwrap();
        let back = eig.reconstruct_with(|x| x);
        assert!(back.max_abs_diff(&a) < 1e-10 * a.max_abs());
        assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
        let vtv = eig.vectors.transpose().matmul(&eig.vectors).unwrap();
        assert!(vtv.max_abs_diff(&Matrix::identity(9)) < 1e-12);
    }

    #[test]
    fn ql_agrees_with_jacobi() {
        for n in [1, 2, 5, 12, 40] {
            let a = spd(n);
            let fast = SymmetricEigen::new(&a).unwrap();
            let slow = SymmetricEigen::jacobi(&a).unwrap();
            for (x, y) in fast.values.iter().zip(&slow.values) {
                assert!((x - y).abs() < 1e-10 * a.max_abs(), "n={n}: {x} vs {y}");
            }
            let back = fast.reconstruct_with(|x| x);
            assert!(back.max_abs_diff(&a) < 1e-10 * a.max_abs());
            let vtv = fast.vectors.transpose().matmul(&fast.vectors).unwrap();
            assert!(vtv.max_abs_diff(&Matrix::identity(n)) < 1e-12);
        }
    }

    #[test]
    fn eigen_of_diagonal_and_rank_deficient() {
        let d = Matrix::from_fn(4, 4, |i, j| if i == j { [3.0, -1.0, 0.0, 2.0][i] } else { 0.0 });
        assert_eq!(SymmetricEigen::new(&d).unwrap().values, vec![-1.0, 0.0, 2.0, 3.0]);
        let v = Matrix::from_row_major(1, 3, vec![1.0f64, 2.0, 2.0]).unwrap();
        let outer = v.transpose().matmul(&v).unwrap();
        let vals = SymmetricEigen::new(&outer).unwrap().values;
        assert!(vals[0].abs() < 1e-14 && vals[1].abs() < 1e-14 && (vals[2] - 9.0).abs() < 1e-13);
    }

    #[test]
    fn sqrt_squares_back() {
        let a = spd(7);
        let r = symmetric_sqrt(&a).unwrap();
        let rr = r.matmul(&r).unwrap();
        assert!(rr.max_abs_diff(&a) < 1e-10 * a.max_abs());
        assert!(r.max_abs_diff(&r.transpose()) == 0.0);
    }

    #[test]
    fn sqrt_rejects_negative_spectrum() {
        let a = Matrix::from_row_major(2, 2, vec![1.0, 0.0, 0.0, -1.0]).unwrap();
        assert!(matches!(symmetric_sqrt(&a), Err(Error::SymmetryViolation { .. })));
        // round-off sized negatives are clipped
        let a = Matrix::from_row_major(2, 2, vec![1.0, 0.0, 0.0, -1e-14]).unwrap();
        let r = symmetric_sqrt(&a).unwrap();
        assert_eq!(r[(1, 1)], 0.0);
    }
}
