//! CAR precision and the random-effect covariance `K`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{cholesky, sym_eigen, symmetrize, DenseMatrix, LinalgError, SparseMatrix};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum CovError {
    #[error("tau = {0} is outside (0, 1)")]
    TauOutOfRange(f64),

    #[error("vertex {0} has no neighbors; D is singular")]
    IsolatedVertex(usize),

    #[error("invalid adjacency matrix: {0}")]
    InvalidAdjacency(String),

    #[error("basis matrix is rank deficient")]
    RankDeficient,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("K is not positive definite after jitter (min eigenvalue {0:e})")]
    NotPositiveDefinite(f64),

    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, CovError>;

#[derive(Clone, Debug, PartialEq)]
pub struct CarPrecision {
    pub q: DenseMatrix,
    pub tau: f64,
    pub scaled: bool,
}

impl CarPrecision {
    /// `Q⁻¹`, symmetrized as `(Q⁻¹ + Q⁻ᵀ)/2` (the scaled form is not symmetric).
    pub fn inverse_symmetrized(&self) -> Result<DenseMatrix> {
        let inv = self
            .q
            .clone()
            .try_inverse()
            .ok_or(LinalgError::NotPositiveDefinite(self.q.nrows()))?;
        Ok(symmetrize(&inv))
    }
}

/// `I − τD⁻¹W` when `scale`, else `D − τW`, with `D = diag(row sums of W)`.
pub fn car_precision(w: &SparseMatrix, tau: f64, scale: bool) -> Result<CarPrecision> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(CovError::TauOutOfRange(tau));
    }
    let n = w.nrows();
    if w.ncols() != n {
        return Err(CovError::InvalidAdjacency(format!("{}×{} is not square", n, w.ncols())));
    }
    let wd = w.to_dense();
    for i in 0..n {
        if wd[(i, i)] != 0.0 {
            return Err(CovError::InvalidAdjacency(format!("nonzero diagonal at {i}")));
        }
        for j in 0..n {
            if wd[(i, j)] != wd[(j, i)] {
                return Err(CovError::InvalidAdjacency(format!("asymmetric at ({i}, {j})")));
            }
        }
    }
    let d = w.row_sums();
    let mut q = DenseMatrix::zeros(n, n);
    if scale {
        if let Some(i) = d.iter().position(|&di| di == 0.0) {
            return Err(CovError::IsolatedVertex(i));
        }
        for i in 0..n {
            q[(i, i)] = 1.0;
        }
        for (i, j, v) in w.triplets() {
            q[(i, j)] -= tau * v / d[i];
        }
    } else {
        for i in 0..n {
            q[(i, i)] = d[i];
        }
        for (i, j, v) in w.triplets() {
            q[(i, j)] -= tau * v;
        }
    }
    Ok(CarPrecision { q, tau, scaled: scale })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineLevelStructure {
    /// Vector random walk across years.
    #[default]
    RandomWalk,
    /// Independent years.
    Independent,
    /// `K = I`.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMatrix {
    pub k: DenseMatrix,
    pub structure: FineLevelStructure,
}

/// Factor of `SᵀS`, rejecting numerically rank-deficient `S`.
fn gram_factor(s: &DenseMatrix) -> Result<crate::linalg::CholeskyFactor> {
    let sts = symmetrize(&(s.transpose() * s));
    let f = cholesky(&sts).map_err(|_| CovError::RankDeficient)?;
    let diag: Vec<f64> = f.l().diagonal().iter().map(|d| d * d).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if s.ncols() == 0 || !(min > 1e-12 * max) {
        return Err(CovError::RankDeficient);
    }
    Ok(f)
}

/// `(SᵀS)⁻¹ M (SᵀS)⁻¹`.
fn sandwich(f: &crate::linalg::CholeskyFactor, m: &DenseMatrix) -> DenseMatrix {
    let left = f.solve_matrix(m);
    f.solve_matrix(&left.transpose()).transpose()
}

/// Minimizer over `X` of `‖Σ − S X Sᵀ‖_F`: `(SᵀS)⁻¹ SᵀΣS (SᵀS)⁻¹`.
pub fn best_positive_approximant(s: &DenseMatrix, sigma: &DenseMatrix) -> Result<DenseMatrix> {
    if sigma.nrows() != s.nrows() || sigma.ncols() != s.nrows() {
        return Err(CovError::DimensionMismatch(format!(
            "S is {}×{}, Σ is {}×{}",
            s.nrows(),
            s.ncols(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    let f = gram_factor(s)?;
    Ok(sandwich(&f, &(s.transpose() * sigma * s)))
}

/// Row blocks `S*_1, …, S*_T` of `n_B` rows each.
fn year_blocks(q_inv: &DenseMatrix, s_fine: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
    let nb = q_inv.nrows();
    if q_inv.ncols() != nb || nb == 0 || !s_fine.nrows().is_multiple_of(nb) || s_fine.nrows() == 0 {
        return Err(CovError::DimensionMismatch(format!(
            "S* has {} rows, not a positive multiple of n_B = {}",
            s_fine.nrows(),
            nb
        )));
    }
    let t = s_fine.nrows() / nb;
    Ok((0..t).map(|k| s_fine.rows(k * nb, nb).into_owned()).collect())
}

/// Symmetrize; if the smallest eigenvalue is not positive, add `1e-10·tr(K)/r` to the diagonal.
pub fn enforce_pd(k: &DenseMatrix) -> Result<DenseMatrix> {
    let mut k = symmetrize(k);
    let r = k.nrows();
    let min_eig = sym_eigen(&k)?.values[r - 1];
    if min_eig <= 0.0 {
        let jitter = 1e-10 * k.trace() / r as f64;
        for i in 0..r {
            k[(i, i)] += jitter;
        }
        let after = sym_eigen(&k)?.values[r - 1];
        if after <= 0.0 {
            return Err(CovError::NotPositiveDefinite(after));
        }
        log::debug!("K jittered by {jitter:e} (min eigenvalue was {min_eig:e})");
    }
    Ok(k)
}

/// `K` under the vector random walk:
/// `(S*ᵀS*)⁻¹ [Σ_s Σ_t min(s,t) S*_sᵀ Q⁻¹ S*_t] (S*ᵀS*)⁻¹`.
pub fn cov_approx_randwalk(q_inv: &DenseMatrix, s_fine: &DenseMatrix) -> Result<KMatrix> {
    let blocks = year_blocks(q_inv, s_fine)?;
    let q_inv = symmetrize(q_inv);
    let f = gram_factor(s_fine)?;
    let qs: Vec<DenseMatrix> = blocks.iter().map(|b| &q_inv * b).collect();
    let r = s_fine.ncols();
    let mut middle = DenseMatrix::zeros(r, r);
    for (s, bs) in blocks.iter().enumerate() {
        for (t, qt) in qs.iter().enumerate() {
            let w = (s.min(t) + 1) as f64;
            middle += bs.transpose() * qt * w;
        }
    }
    Ok(KMatrix {
        k: enforce_pd(&sandwich(&f, &middle))?,
        structure: FineLevelStructure::RandomWalk,
    })
}

/// `K` with independent years: `(S*ᵀS*)⁻¹ [Σ_t S*_tᵀ Q⁻¹ S*_t] (S*ᵀS*)⁻¹`.
pub fn cov_approx_blockdiag(q_inv: &DenseMatrix, s_fine: &DenseMatrix) -> Result<KMatrix> {
    let blocks = year_blocks(q_inv, s_fine)?;
    let q_inv = symmetrize(q_inv);
    let f = gram_factor(s_fine)?;
    let r = s_fine.ncols();
    let mut middle = DenseMatrix::zeros(r, r);
    for b in &blocks {
        middle += b.transpose() * &q_inv * b;
    }
    Ok(KMatrix {
        k: enforce_pd(&sandwich(&f, &middle))?,
        structure: FineLevelStructure::Independent,
    })
}

pub fn identity_k(r: usize) -> KMatrix {
    KMatrix {
        k: DenseMatrix::identity(r, r),
        structure: FineLevelStructure::Identity,
    }
}

/// Dispatches on `structure`; `q_inv` and `s_fine` are ignored for the identity.
pub fn build_k(structure: FineLevelStructure, q_inv: &DenseMatrix, s_fine: &DenseMatrix) -> Result<KMatrix> {
    match structure {
        FineLevelStructure::RandomWalk => cov_approx_randwalk(q_inv, s_fine),
        FineLevelStructure::Independent => cov_approx_blockdiag(q_inv, s_fine),
        FineLevelStructure::Identity => Ok(identity_k(s_fine.ncols())),
    }
}
