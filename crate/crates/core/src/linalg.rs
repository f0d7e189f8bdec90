//! Dense and sparse kernels: Cholesky solves, precision-form normal draws,
//! symmetric eigendecomposition, quantiles and pairwise distances.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Point2;

pub type DenseMatrix = DMatrix<f64>;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix of order {0} is not positive definite")]
    NotPositiveDefinite(usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not square ({0}×{1})")]
    NotSquare(usize, usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("eigensolver did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("empty input")]
    EmptyInput,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index ({0}, {1}) out of range")]
    IndexOutOfRange(usize, usize),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Assembles from `(i, j, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for (i, j, v) in triplets {
            if i >= rows || j >= cols {
                return Err(LinalgError::IndexOutOfRange(i, j));
            }
            by_row[i].push((j, v));
        }
        for row in by_row.iter_mut() {
            row.sort_by_key(|&(j, _)| j);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
            for &(j, v) in row.iter() {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => merged.push((j, v)),
                }
            }
            *row = merged;
        }
        Ok(Self::from_rows(rows, cols, by_row))
    }

    /// Builds from per-row `(column, value)` lists with distinct columns.
    pub(crate) fn from_rows(rows: usize, cols: usize, mut by_row: Vec<Vec<(usize, f64)>>) -> Self {
        debug_assert_eq!(by_row.len(), rows);
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in by_row.iter_mut() {
            row.sort_by_key(|&(j, _)| j);
            for &(j, v) in row.iter() {
                col_idx.push(j);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_dense(m: &DenseMatrix) -> Self {
        let rows = (0..m.nrows())
            .map(|i| {
                (0..m.ncols())
                    .filter(|&j| m[(i, j)] != 0.0)
                    .map(|j| (j, m[(i, j)]))
                    .collect()
            })
            .collect();
        Self::from_rows(m.nrows(), m.ncols(), rows)
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for (i, j, v) in self.triplets() {
            m[(i, j)] = v;
        }
        m
    }

    pub fn row_sums(&self) -> DVector<f64> {
        DVector::from_iterator(self.rows, (0..self.rows).map(|i| self.row(i).map(|(_, v)| v).sum()))
    }

    pub fn col_sums(&self) -> DVector<f64> {
        let mut s = DVector::zeros(self.cols);
        for (_, j, v) in self.triplets() {
            s[j] += v;
        }
        s
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.cols, "sparse mul_vec dimension mismatch");
        DVector::from_iterator(self.rows, (0..self.rows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()))
    }

    /// `Aᵀ x`.
    pub fn tr_mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.rows, "sparse tr_mul_vec dimension mismatch");
        let mut out = DVector::zeros(self.cols);
        for (i, j, v) in self.triplets() {
            out[j] += v * x[i];
        }
        out
    }

    /// `A B` for dense `B`.
    pub fn mul_dense(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.nrows(), self.cols, "sparse mul_dense dimension mismatch");
        let mut out = DMatrix::zeros(self.rows, b.ncols());
        for (i, k, v) in self.triplets() {
            for j in 0..b.ncols() {
                out[(i, j)] += v * b[(k, j)];
            }
        }
        out
    }

    /// `Aᵀ diag(w) A`, dense.
    pub fn weighted_gram(&self, w: &DVector<f64>) -> DenseMatrix {
        assert_eq!(w.len(), self.rows, "weighted_gram dimension mismatch");
        let mut out = DMatrix::zeros(self.cols, self.cols);
        for i in 0..self.rows {
            let entries: Vec<(usize, f64)> = self.row(i).collect();
            for &(a, va) in &entries {
                for &(b, vb) in &entries {
                    out[(a, b)] += w[i] * va * vb;
                }
            }
        }
        out
    }

    /// Stacks matrices with equal column counts.
    pub fn vstack(blocks: &[SparseMatrix]) -> Result<SparseMatrix> {
        let cols = blocks.first().map_or(0, |b| b.cols);
        if blocks.iter().any(|b| b.cols != cols) {
            return Err(LinalgError::DimensionMismatch("vstack column counts differ".into()));
        }
        let rows = blocks.iter().map(|b| b.rows).sum();
        let mut by_row = Vec::with_capacity(rows);
        for b in blocks {
            for i in 0..b.rows {
                by_row.push(b.row(i).collect());
            }
        }
        Ok(SparseMatrix::from_rows(rows, cols, by_row))
    }
}

/// Largest absolute asymmetry `|a_ij − a_ji|`.
pub fn asymmetry(a: &DenseMatrix) -> f64 {
    let n = a.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

fn check_symmetric(a: &DenseMatrix, rel_tol: f64) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare(a.nrows(), a.ncols()));
    }
    let scale = a.amax().max(1.0);
    let asym = asymmetry(a);
    if asym > rel_tol * scale {
        return Err(LinalgError::NotSymmetric(asym));
    }
    Ok(())
}

pub fn symmetrize(a: &DenseMatrix) -> DenseMatrix {
    (a + a.transpose()) * 0.5
}

/// Lower-triangular factor `L` with `L Lᵀ = A`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    inner: Cholesky<f64, Dyn>,
}

impl CholeskyFactor {
    pub fn l(&self) -> DenseMatrix {
        self.inner.l()
    }

    pub fn dim(&self) -> usize {
        self.inner.l_dirty().nrows()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.inner.solve(b)
    }

    pub fn solve_matrix(&self, b: &DenseMatrix) -> DenseMatrix {
        self.inner.solve(b)
    }

    pub fn inverse(&self) -> DenseMatrix {
        self.inner.inverse()
    }

    /// `log |A|`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.inner.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `Lᵀ x = z`.
    pub fn solve_upper_transposed(&self, z: &DVector<f64>) -> DVector<f64> {
        self.inner
            .l_dirty()
            .tr_solve_lower_triangular(z)
            .expect("Cholesky diagonal is strictly positive")
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix.
pub fn cholesky(a: &DenseMatrix) -> Result<CholeskyFactor> {
    check_symmetric(a, 1e-10)?;
    let n = a.nrows();
    Cholesky::new(a.clone())
        .filter(|c| c.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0))
        .map(|inner| CholeskyFactor { inner })
        .ok_or(LinalgError::NotPositiveDefinite(n))
}

/// Number of escalating diagonal jitters tried by [`cholesky_jittered`].
pub const JITTER_RETRIES: usize = 3;

/// Cholesky with up to three retries adding `1e-8·mean(diag)·10^k` to the diagonal.
pub fn cholesky_jittered(a: &DenseMatrix) -> Result<CholeskyFactor> {
    match cholesky(a) {
        Ok(c) => Ok(c),
        Err(LinalgError::NotPositiveDefinite(n)) => {
            let mean_diag = (a.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
            let mut jitter = 1e-8 * mean_diag;
            for _ in 0..JITTER_RETRIES {
                let mut b = a.clone();
                for i in 0..n {
                    b[(i, i)] += jitter;
                }
                if let Ok(c) = cholesky(&b) {
                    log::debug!("cholesky succeeded after diagonal jitter {jitter:e}");
                    return Ok(c);
                }
                jitter *= 100.0;
            }
            Err(LinalgError::NotPositiveDefinite(n))
        }
        Err(e) => Err(e),
    }
}

/// One draw from `N(mean, P⁻¹)` given the factor of the precision `P`.
pub fn mvn_sample_factored<R: Rng + ?Sized>(mean: &DVector<f64>, precision: &CholeskyFactor, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + precision.solve_upper_transposed(&z)
}

/// One draw from `N(mean, precision⁻¹)`: factor `P = L Lᵀ`, return `mean + L⁻ᵀ ζ`.
pub fn mvn_sample<R: Rng + ?Sized>(mean: &DVector<f64>, precision: &DenseMatrix, rng: &mut R) -> Result<DVector<f64>> {
    if precision.nrows() != mean.len() || precision.ncols() != mean.len() {
        return Err(LinalgError::DimensionMismatch(format!(
            "mean has length {}, precision is {}×{}",
            mean.len(),
            precision.nrows(),
            precision.ncols()
        )));
    }
    if mean.is_empty() {
        return Ok(DVector::zeros(0));
    }
    let f = cholesky(precision)?;
    Ok(mvn_sample_factored(mean, &f, rng))
}

/// Inverse empirical CDF: the `ceil(prob·n)`-th order statistic.
pub fn quantile_type1(values: &[f64], prob: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(LinalgError::EmptyInput);
    }
    if !(prob > 0.0 && prob <= 1.0) {
        return Err(LinalgError::InvalidArgument(format!("probability {prob} not in (0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    let k = ((prob * n as f64).ceil() as usize).clamp(1, n);
    Ok(v[k - 1])
}

/// Linear interpolation between order statistics (`(n−1)p` indexing).
pub fn quantile_type7(values: &[f64], prob: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(LinalgError::EmptyInput);
    }
    if !(0.0..=1.0).contains(&prob) {
        return Err(LinalgError::InvalidArgument(format!("probability {prob} not in [0, 1]")));
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let h = (v.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Clone, Debug)]
pub struct SymEigen {
    /// Descending.
    pub values: DVector<f64>,
    /// Column `k` pairs with `values[k]`.
    pub vectors: DenseMatrix,
}

pub const DEFAULT_EIGEN_MAX_ITER: usize = 10_000;

pub fn sym_eigen(a: &DenseMatrix) -> Result<SymEigen> {
    sym_eigen_with_cap(a, DEFAULT_EIGEN_MAX_ITER)
}

pub fn sym_eigen_with_cap(a: &DenseMatrix, max_iter: usize) -> Result<SymEigen> {
    check_symmetric(a, 1e-10)?;
    let n = a.nrows();
    if n == 0 {
        return Ok(SymEigen {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = symmetrize(a)
        .try_symmetric_eigen(f64::EPSILON, max_iter)
        .ok_or(LinalgError::NoConvergence(max_iter))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i)).collect::<Vec<_>>());
    Ok(SymEigen { values, vectors })
}

/// Condensed Euclidean distances `(0,1), (0,2), …, (1,2), …`.
pub fn pairwise_distances(points: &[Point2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            out.push(points[i].dist(points[j]));
        }
    }
    out
}

pub fn pairwise_distances_1d(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() * values.len().saturating_sub(1) / 2);
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            out.push((values[i] - values[j]).abs());
        }
    }
    out
}

/// Sample mean and (n−1)-denominator standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}
