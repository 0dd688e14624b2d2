//! Dense linear algebra and probability primitives.
//!
//! Everything here works on small dense matrices (a few hundred rows at
//! most), so the implementations favour clarity and determinism over
//! blocking or SIMD.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, ClcError, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return invalid(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return invalid("matrix contains non-finite values");
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return invalid("ragged rows");
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return invalid(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * v` for a column vector `v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return invalid(format!(
                "vector length {} does not match {} columns",
                v.len(),
                self.cols
            ));
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return invalid("shape mismatch in subtraction");
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest singular value, via the top eigenvalue of `AᵀA`.
    pub fn spectral_norm(&self) -> f64 {
        let gram = self.transpose().matmul(self).expect("shapes agree");
        let (vals, _) = sym_eig(&gram).expect("gram matrix is symmetric");
        vals.first().copied().unwrap_or(0.0).max(0.0).sqrt()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Maximum absolute asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Selects the given columns into a new matrix.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(self.rows, cols.len());
        for r in 0..self.rows {
            for (j, &c) in cols.iter().enumerate() {
                out.data[r * cols.len() + j] = self.get(r, c);
            }
        }
        out
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as the columns of the second matrix. Each eigenvector is
/// signed so that its largest-magnitude component is positive.
pub fn sym_eig(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !a.is_square() {
        return Err(ClcError::ContractViolation(format!(
            "sym_eig needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let scale = a.frobenius_norm().max(1.0);
    if a.asymmetry() > 1e-9 * scale {
        return Err(ClcError::ContractViolation(
            "sym_eig needs a symmetric matrix".into(),
        ));
    }
    let n = a.rows;
    let mut m = a.data.clone();
    // symmetrize exactly so rotations stay consistent
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = v;
            m[j * n + i] = v;
        }
    }
    let mut v = Matrix::identity(n).data;
    let norm2: f64 = m.iter().map(|x| x * x).sum();

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off <= 1e-30 * norm2 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    0.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                if t == 0.0 {
                    continue;
                }
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- A J
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                // A <- Jᵀ A
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut best = 0usize;
        for k in 0..n {
            if v[k * n + src].abs() > v[best * n + src].abs() + 1e-12 {
                best = k;
            }
        }
        let sign = if v[best * n + src] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..n {
            vectors.data[k * n + dst] = sign * v[k * n + src];
        }
    }
    Ok((values, vectors))
}

/// Principal axes of a sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// `k × input_dim`, rows orthonormal, ordered by explained variance.
    pub components: Matrix,
    pub explained_variance: Vec<f64>,
}

impl PcaBasis {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.rows()
    }

    /// Identity basis with zero mean.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            components: Matrix::identity(dim),
            explained_variance: vec![1.0; dim],
        }
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        pca_project(self, v)
    }

    /// Maps reduced coordinates back into the input space.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.output_dim() {
            return invalid("coefficient length does not match basis");
        }
        let mut out = self.mean.clone();
        for (i, &c) in coeffs.iter().enumerate() {
            for (o, &b) in out.iter_mut().zip(self.components.row(i)) {
                *o += c * b;
            }
        }
        Ok(out)
    }
}

/// Fits a `k`-component PCA basis to the rows of `samples`.
///
/// Uses the covariance (`d × d`) eigenproblem when `d ≤ n` and the Gram
/// (`n × n`) eigenproblem otherwise. Covariance is normalized by `n`.
pub fn pca_fit(samples: &Matrix, k: usize) -> Result<PcaBasis> {
    if samples.rows() < 2 {
        return invalid("pca_fit needs at least two samples");
    }
    fit_basis(samples, k, true)
}

/// Like [`pca_fit`] but about the origin: the basis spans the dominant
/// directions of the second-moment matrix and the stored mean is zero.
pub fn pca_fit_uncentered(samples: &Matrix, k: usize) -> Result<PcaBasis> {
    if samples.rows() == 0 {
        return invalid("pca_fit needs at least one sample");
    }
    fit_basis(samples, k, false)
}

fn fit_basis(samples: &Matrix, k: usize, center: bool) -> Result<PcaBasis> {
    let n = samples.rows();
    let d = samples.cols();
    if k == 0 || k > n.min(d) {
        return invalid(format!("pca_fit: k={k} must be in 1..={}", n.min(d)));
    }
    let mut mean = vec![0.0; d];
    if center {
        for r in 0..n {
            for (m, &x) in mean.iter_mut().zip(samples.row(r)) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
    }
    let mut centered = samples.clone();
    for r in 0..n {
        for (x, &m) in centered.row_mut(r).iter_mut().zip(&mean) {
            *x -= m;
        }
    }

    let mut components = Matrix::zeros(k, d);
    let mut explained = Vec::with_capacity(k);
    if d <= n {
        let cov = centered.transpose().matmul(&centered)?.scale(1.0 / n as f64);
        let (vals, vecs) = sym_eig(&cov)?;
        for i in 0..k {
            explained.push(vals[i].max(0.0));
            for j in 0..d {
                components.set(i, j, vecs.get(j, i));
            }
        }
    } else {
        let gram = centered.matmul(&centered.transpose())?.scale(1.0 / n as f64);
        let (vals, vecs) = sym_eig(&gram)?;
        let tol = 1e-12 * vals.first().copied().unwrap_or(0.0).abs().max(1e-300);
        let mut filled = 0;
        for i in 0..k {
            if vals[i] <= tol {
                break;
            }
            // component = Xᵀ u / sqrt(n λ)
            let u = vecs.column(i);
            let norm = (n as f64 * vals[i]).sqrt();
            for j in 0..d {
                let mut acc = 0.0;
                for (r, &ur) in u.iter().enumerate() {
                    acc += centered.get(r, j) * ur;
                }
                components.set(i, j, acc / norm);
            }
            explained.push(vals[i]);
            filled += 1;
        }
        // rank-deficient data: complete with orthonormal directions
        if filled < k {
            complete_orthonormal_rows(&mut components, filled);
            explained.resize(k, 0.0);
        }
        for i in 0..k {
            fix_sign(components.row_mut(i));
        }
    }
    Ok(PcaBasis {
        mean,
        components,
        explained_variance: explained,
    })
}

fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Fills rows `filled..` with unit vectors orthogonal to all previous rows.
fn complete_orthonormal_rows(m: &mut Matrix, filled: usize) {
    let d = m.cols();
    let mut next = filled;
    for axis in 0..d {
        if next >= m.rows() {
            break;
        }
        let mut v = vec![0.0; d];
        v[axis] = 1.0;
        for _ in 0..2 {
            for r in 0..next {
                let proj = dot(&v, m.row(r));
                for (x, &b) in v.iter_mut().zip(m.row(r)) {
                    *x -= proj * b;
                }
            }
        }
        let norm = l2_norm(&v);
        if norm > 1e-6 {
            for (dst, x) in m.row_mut(next).iter_mut().zip(&v) {
                *dst = x / norm;
            }
            next += 1;
        }
    }
}

pub fn pca_project(basis: &PcaBasis, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != basis.input_dim() {
        return invalid(format!(
            "pca_project: vector length {} != input dim {}",
            v.len(),
            basis.input_dim()
        ));
    }
    let centered: Vec<f64> = v.iter().zip(&basis.mean).map(|(x, m)| x - m).collect();
    basis.components.mul_vec(&centered)
}

/// A linear subspace held as an orthonormal column basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: Matrix,
}

impl Subspace {
    pub fn new(basis: Matrix) -> Result<Self> {
        let gram = basis.transpose().matmul(&basis)?;
        let err = gram.sub(&Matrix::identity(basis.cols()))?.frobenius_norm();
        if err > 1e-8 {
            return invalid(format!("subspace basis is not orthonormal (error {err:.3e})"));
        }
        Ok(Self { basis })
    }

    /// Orthonormalizes the columns of `m` (modified Gram-Schmidt, two passes).
    pub fn from_span(m: &Matrix) -> Result<Self> {
        Self::new(orthonormalize_columns(m)?)
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn rank(&self) -> usize {
        self.basis.cols()
    }
}

/// Q factor of a thin QR decomposition.
pub fn orthonormalize_columns(m: &Matrix) -> Result<Matrix> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for c in 0..cols {
        let mut v = m.column(c);
        for _ in 0..2 {
            for prev in &q {
                let p = dot(&v, prev);
                for (x, b) in v.iter_mut().zip(prev) {
                    *x -= p * b;
                }
            }
        }
        let norm = l2_norm(&v);
        if norm < 1e-12 {
            return invalid("columns are linearly dependent");
        }
        v.iter_mut().for_each(|x| *x /= norm);
        q.push(v);
    }
    let mut out = Matrix::zeros(rows, cols);
    for (c, col) in q.iter().enumerate() {
        for (r, &x) in col.iter().enumerate() {
            out.set(r, c, x);
        }
    }
    Ok(out)
}

/// `‖sin Θ(U, V)‖_F = sqrt(r − ‖UᵀV‖_F²)`.
pub fn sin_theta_dist(u: &Subspace, v: &Subspace) -> Result<f64> {
    if u.ambient_dim() != v.ambient_dim() {
        return invalid("subspaces live in different ambient dimensions");
    }
    if u.rank() != v.rank() {
        return invalid(format!("rank mismatch: {} vs {}", u.rank(), v.rank()));
    }
    let cross = u.basis.transpose().matmul(&v.basis)?;
    let overlap = cross.data.iter().map(|x| x * x).sum::<f64>();
    Ok((u.rank() as f64 - overlap).max(0.0).sqrt())
}

/// Row-wise softmax of `m / temperature`, shifted by the row maximum.
pub fn softmax_rows(m: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0) {
        return invalid("softmax temperature must be positive");
    }
    let mut out = m.clone();
    for r in 0..m.rows() {
        softmax_in_place(out.row_mut(r), temperature);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64], temperature: f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = ((*x - max) / temperature).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Standard normal CDF.
#[inline]
pub fn gaussian_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `len` draws from `N(mean, std²)`.
pub fn sample_gaussian<R: Rng + ?Sized>(
    rng: &mut R,
    mean: f64,
    std: f64,
    len: usize,
) -> Result<Vec<f64>> {
    if !(std >= 0.0) {
        return invalid("standard deviation must be non-negative");
    }
    Ok((0..len)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            mean + std * z
        })
        .collect())
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &Matrix) -> Result<Matrix> {
    if !a.is_square() {
        return invalid("cholesky needs a square matrix");
    }
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if sum <= 0.0 {
                    return invalid("matrix is not positive definite");
                }
                l.set(i, i, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    Ok(l)
}
