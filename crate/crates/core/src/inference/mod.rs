//! Gibbs sampling, maximum likelihood and posterior post-processing.

mod gibbs;
mod mle;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cov::KMatrix;
use crate::linalg::{cholesky_jittered, CholeskyFactor, DenseMatrix, LinalgError, SparseMatrix};

pub use gibbs::{gibbs_stcos, GibbsSampler, GibbsState};
pub use mle::{gls_mu, loglik_dense, loglik_smw, mle_stcos, profile_loglik, MleResult};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum InferenceError {
    #[error("invalid model data: {0}")]
    InvalidData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical failure at iteration {iteration}: {source}")]
    Numerical { iteration: usize, source: LinalgError },

    #[error("cannot standardize: sample variance is zero")]
    ZeroVariance,

    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, InferenceError>;

/// Assembled model inputs: `Z = Hμ_B + Sη + ξ + ε`, `ε ~ N(0, diag(v))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelData {
    pub z: DVector<f64>,
    pub v: DVector<f64>,
    pub h: SparseMatrix,
    pub s: DenseMatrix,
    pub k: KMatrix,
}

impl ModelData {
    pub fn new(z: DVector<f64>, v: DVector<f64>, h: SparseMatrix, s: DenseMatrix, k: KMatrix) -> Result<Self> {
        let d = ModelData { z, v, h, s, k };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.z.len();
        let mismatch = |what: String| Err(InferenceError::DimensionMismatch(what));
        if self.v.len() != n {
            return mismatch(format!("v has length {}, z has {n}", self.v.len()));
        }
        if self.h.nrows() != n {
            return mismatch(format!("H has {} rows, z has {n}", self.h.nrows()));
        }
        if self.s.nrows() != n {
            return mismatch(format!("S has {} rows, z has {n}", self.s.nrows()));
        }
        let r = self.s.ncols();
        if self.k.k.nrows() != r || self.k.k.ncols() != r {
            return mismatch(format!("K is {}×{}, S has {r} columns", self.k.k.nrows(), self.k.k.ncols()));
        }
        if self.z.iter().any(|x| !x.is_finite()) {
            return Err(InferenceError::InvalidData("z has non-finite entries".into()));
        }
        if self.v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(InferenceError::InvalidData("v must be finite and positive".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn n_b(&self) -> usize {
        self.h.ncols()
    }

    pub fn r(&self) -> usize {
        self.s.ncols()
    }

    /// Cholesky factor of `K`, with the usual jitter retries.
    pub fn k_factor(&self) -> Result<CholeskyFactor> {
        Ok(cholesky_jittered(&self.k.k)?)
    }
}

/// Inverse-gamma prior shapes and scales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub a_mu: f64,
    pub b_mu: f64,
    pub a_k: f64,
    pub b_k: f64,
    pub a_xi: f64,
    pub b_xi: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            a_mu: 1.0,
            b_mu: 2.0,
            a_k: 1.0,
            b_k: 2.0,
            a_xi: 1.0,
            b_xi: 2.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a_mu, self.b_mu, self.a_k, self.b_k, self.a_xi, self.b_xi];
        if all.iter().all(|x| x.is_finite() && *x > 0.0) {
            Ok(())
        } else {
            Err(InferenceError::InvalidConfig("hyperparameters must be positive".into()))
        }
    }
}

/// Starting values; missing vectors default to zero and variances to one.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GibbsInit {
    pub mu_b: Option<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
    pub xi: Option<Vec<f64>>,
    pub sig2_mu: Option<f64>,
    pub sig2_k: Option<f64>,
    pub sig2_xi: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    /// Total iterations `R`.
    pub iterations: usize,
    pub burn: usize,
    pub thin: usize,
    /// Log progress every this many iterations; 0 disables.
    pub report_period: usize,
    pub seed: u64,
    pub init: GibbsInit,
    pub store_xi: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            iterations: 10_000,
            burn: 2_000,
            thin: 10,
            report_period: 2_000,
            seed: 0,
            init: GibbsInit::default(),
            store_xi: true,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn {
            return Err(InferenceError::InvalidConfig(format!(
                "iterations ({}) must exceed burn ({})",
                self.iterations, self.burn
            )));
        }
        if self.thin == 0 {
            return Err(InferenceError::InvalidConfig("thin must be at least 1".into()));
        }
        Ok(())
    }

    pub fn saved_draws(&self) -> usize {
        (self.iterations - self.burn) / self.thin
    }
}

/// Saved draws, one row per draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsOutput {
    pub mu_b: DenseMatrix,
    pub eta: DenseMatrix,
    pub xi: Option<DenseMatrix>,
    pub sig2_mu: Vec<f64>,
    pub sig2_k: Vec<f64>,
    pub sig2_xi: Vec<f64>,
    /// Data-model log-density of each saved draw.
    pub loglik: Vec<f64>,
    /// Posterior mean of `ξ`, kept even when draws are not stored.
    pub xi_mean: DVector<f64>,
    pub elapsed_secs: f64,
}

impl GibbsOutput {
    pub fn len(&self) -> usize {
        self.sig2_xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sig2_xi.is_empty()
    }

    pub fn mu_b_mean(&self) -> DVector<f64> {
        column_means(&self.mu_b)
    }

    pub fn eta_mean(&self) -> DVector<f64> {
        column_means(&self.eta)
    }
}

fn column_means(m: &DenseMatrix) -> DVector<f64> {
    if m.nrows() == 0 {
        return DVector::zeros(m.ncols());
    }
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / m.nrows() as f64))
}

/// `log φ(z | mean, diag(v))`.
pub fn gaussian_diag_loglik(z: &DVector<f64>, mean: &DVector<f64>, v: &DVector<f64>) -> f64 {
    let n = z.len() as f64;
    let mut acc = -0.5 * n * (2.0 * std::f64::consts::PI).ln();
    for i in 0..z.len() {
        let r = z[i] - mean[i];
        acc -= 0.5 * (v[i].ln() + r * r / v[i]);
    }
    acc
}

/// `log φ(Z | Hμ_B + Sη + ξ, V)`.
pub fn data_loglik(data: &ModelData, mu_b: &DVector<f64>, eta: &DVector<f64>, xi: &DVector<f64>) -> f64 {
    let mean = data.h.mul_vec(mu_b) + &data.s * eta + xi;
    gaussian_diag_loglik(&data.z, &mean, &data.v)
}

fn check_new_design(out: &GibbsOutput, h_new: &SparseMatrix, s_new: &DenseMatrix) -> Result<()> {
    if h_new.ncols() != out.mu_b.ncols() {
        return Err(InferenceError::DimensionMismatch(format!(
            "H_new has {} columns, μ_B has {}",
            h_new.ncols(),
            out.mu_b.ncols()
        )));
    }
    if s_new.ncols() != out.eta.ncols() {
        return Err(InferenceError::DimensionMismatch(format!(
            "S_new has {} columns, η has {}",
            s_new.ncols(),
            out.eta.ncols()
        )));
    }
    if s_new.nrows() != h_new.nrows() {
        return Err(InferenceError::DimensionMismatch(format!(
            "H_new has {} rows, S_new has {}",
            h_new.nrows(),
            s_new.nrows()
        )));
    }
    Ok(())
}

/// Draws of `H̃μ_B + S̃η`, one row per saved draw.
pub fn fitted(out: &GibbsOutput, h_new: &SparseMatrix, s_new: &DenseMatrix) -> Result<DenseMatrix> {
    check_new_design(out, h_new, s_new)?;
    let mut draws = DenseMatrix::zeros(out.len(), h_new.nrows());
    for d in 0..out.len() {
        let mu = out.mu_b.row(d).transpose();
        let eta = out.eta.row(d).transpose();
        let row = h_new.mul_vec(&mu) + s_new * eta;
        draws.set_row(d, &row.transpose());
    }
    Ok(draws)
}

/// Fitted draws plus independent `N(0, σ²_ξ⁽ᵈ⁾)` noise.
pub fn predict<R: Rng + ?Sized>(out: &GibbsOutput, h_new: &SparseMatrix, s_new: &DenseMatrix, rng: &mut R) -> Result<DenseMatrix> {
    let mut draws = fitted(out, h_new, s_new)?;
    for d in 0..out.len() {
        let sd = out.sig2_xi[d].sqrt();
        for j in 0..draws.ncols() {
            draws[(d, j)] += sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(draws)
}

/// Data-model log-likelihood of each saved draw.
///
/// Recomputed from the stored histories when `ξ` draws were kept; otherwise
/// the values recorded by the sampler are returned.
pub fn log_lik(out: &GibbsOutput, data: &ModelData) -> Vec<f64> {
    match &out.xi {
        Some(xi) => (0..out.len())
            .map(|d| {
                data_loglik(
                    data,
                    &out.mu_b.row(d).transpose(),
                    &out.eta.row(d).transpose(),
                    &xi.row(d).transpose(),
                )
            })
            .collect(),
        None => out.loglik.clone(),
    }
}

/// `2·mean(D) − D(plug-in)` with `D = −2·loglik`.
pub fn dic_from_logliks(logliks: &[f64], plugin_loglik: f64) -> f64 {
    let mean_dev = -2.0 * logliks.iter().sum::<f64>() / logliks.len() as f64;
    2.0 * mean_dev - (-2.0 * plugin_loglik)
}

/// Deviance information criterion, plugging in the posterior means of `μ_B`, `η`, `ξ`.
pub fn dic(out: &GibbsOutput, data: &ModelData) -> Result<f64> {
    if out.is_empty() {
        return Err(InferenceError::InvalidData("DIC needs at least one saved draw".into()));
    }
    let plugin = data_loglik(data, &out.mu_b_mean(), &out.eta_mean(), &out.xi_mean);
    Ok(dic_from_logliks(&log_lik(out, data), plugin))
}

/// Centering and scaling applied to the direct estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: f64,
    pub scale: f64,
}

impl Standardization {
    pub fn unstandardize(&self, x: f64) -> f64 {
        self.scale * x + self.center
    }
}

/// `z = (z_raw − mean)/sd`, `v = v_raw / var(z_raw)`, sample (n−1) moments.
pub fn standardize(z_raw: &DVector<f64>, v_raw: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, Standardization)> {
    if z_raw.len() < 2 {
        return Err(InferenceError::InvalidData("standardization needs at least two values".into()));
    }
    if v_raw.len() != z_raw.len() {
        return Err(InferenceError::DimensionMismatch("z and v lengths differ".into()));
    }
    let n = z_raw.len() as f64;
    let center = z_raw.sum() / n;
    let var = z_raw.iter().map(|x| (x - center) * (x - center)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) {
        return Err(InferenceError::ZeroVariance);
    }
    let scale = var.sqrt();
    let z = z_raw.map(|x| (x - center) / scale);
    let v = v_raw / var;
    Ok((z, v, Standardization { center, scale }))
}
