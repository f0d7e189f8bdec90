use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{areal_spacetime_bisquare, BasisConfig, Period, SpaceTimeKnots};
use crate::geom::{overlap_matrix, Domain};
use crate::linalg::{cholesky_jittered, DenseMatrix, SparseMatrix};

use super::ingest::{normal_quantile_upper, EstimateRow, SourceSupport};
use super::{PipelineError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub mu_b: Vec<f64>,
    pub sig2_k: f64,
    pub sig2_xi: f64,
}

/// Geography, period and direct variances of one simulated source.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceLayout {
    pub domain: Domain,
    pub year: i32,
    pub lookback: u32,
    pub v: Vec<f64>,
}

/// Every latent quantity behind a simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub truth: SimulationTruth,
    pub eta: Vec<f64>,
    pub xi: Vec<f64>,
    pub eps: Vec<f64>,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SimulatedData {
    pub sources: Vec<SourceSupport>,
    pub record: TruthRecord,
    pub h: SparseMatrix,
    pub s: DenseMatrix,
}

fn normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub struct Latents {
    pub eta: DVector<f64>,
    pub xi: DVector<f64>,
    pub eps: DVector<f64>,
    pub z: DVector<f64>,
}

/// Draws `η`, `ξ`, `ε` and `Z` for fixed `H`, `S`, `K` and `v`.
pub fn draw_latents<R: Rng + ?Sized>(
    h: &SparseMatrix,
    s: &DenseMatrix,
    k: &DenseMatrix,
    truth: &SimulationTruth,
    v: &[f64],
    rng: &mut R,
) -> Result<Latents> {
    let (n, r) = (h.nrows(), s.ncols());
    let eta = if truth.sig2_k > 0.0 {
        let l = cholesky_jittered(k)?.l();
        l * normals(r, rng) * truth.sig2_k.sqrt()
    } else {
        DVector::zeros(r)
    };
    let xi = normals(n, rng) * truth.sig2_xi.sqrt();
    let e = normals(n, rng);
    let eps = DVector::from_fn(n, |i, _| e[i] * v[i].sqrt());
    let z = h.mul_vec(&DVector::from_column_slice(&truth.mu_b)) + s * &eta + &xi + &eps;
    Ok(Latents { eta, xi, eps, z })
}

/// `Z = Hμ_B + Sη + ξ + ε` with `η ~ N(0, σ²_K K)`, `ξ ~ N(0, σ²_ξ I)` and
/// `ε ~ N(0, diag(v))`, using the full (unreduced) basis over `knots`.
/// Margins of error are reported at level `alpha`.
#[allow(clippy::too_many_arguments)]
pub fn simulate<R: Rng + ?Sized>(
    fine: &Domain,
    truth: &SimulationTruth,
    knots: &SpaceTimeKnots,
    k: &DenseMatrix,
    layout: &[SourceLayout],
    basis: &BasisConfig,
    alpha: f64,
    rng: &mut R,
) -> Result<SimulatedData> {
    if truth.mu_b.len() != fine.len() {
        return Err(PipelineError::Data(format!("mu_b has {} entries for {} fine units", truth.mu_b.len(), fine.len())));
    }
    if k.nrows() != knots.len() || k.ncols() != knots.len() {
        return Err(PipelineError::Data(format!("K is {}×{} for {} knots", k.nrows(), k.ncols(), knots.len())));
    }
    let mut h_blocks = Vec::with_capacity(layout.len());
    let mut s_blocks = Vec::with_capacity(layout.len());
    let mut v = Vec::new();
    for src in layout {
        if src.v.len() != src.domain.len() || src.v.iter().any(|x| !(*x >= 0.0)) {
            return Err(PipelineError::Data(format!("bad variances for source {}", src.domain.label())));
        }
        h_blocks.push(overlap_matrix(&src.domain, fine, true)?);
        let period = Period::ending(src.year, src.lookback)?;
        s_blocks.push(areal_spacetime_bisquare(&src.domain, &period, knots, basis, rng)?);
        v.extend_from_slice(&src.v);
    }
    let h = SparseMatrix::vstack(&h_blocks)?;
    let n = h.nrows();
    let mut s = DenseMatrix::zeros(n, knots.len());
    let mut row = 0;
    for b in &s_blocks {
        s.rows_mut(row, b.nrows()).copy_from(b);
        row += b.nrows();
    }

    let latents = draw_latents(&h, &s, k, truth, &v, rng)?;
    let z = &latents.z;

    let zq = normal_quantile_upper(alpha);
    let mut sources = Vec::with_capacity(layout.len());
    let mut offset = 0;
    for src in layout {
        let m = src.domain.len();
        let rows: Vec<EstimateRow> = src
            .domain
            .ids()
            .iter()
            .enumerate()
            .map(|(i, id)| EstimateRow {
                geoid: id.to_string(),
                year: Some(src.year),
                lookback: Some(src.lookback),
                est: Some(z[offset + i]),
                moe: Some(src.v[i].sqrt() * zq),
            })
            .collect();
        sources.push(SourceSupport::from_rows(src.domain.clone(), src.year, src.lookback, &rows, alpha)?);
        offset += m;
    }
    Ok(SimulatedData {
        sources,
        record: TruthRecord {
            truth: truth.clone(),
            eta: latents.eta.iter().cloned().collect(),
            xi: latents.xi.iter().cloned().collect(),
            eps: latents.eps.iter().cloned().collect(),
            z: latents.z.iter().cloned().collect(),
            v,
        },
        h,
        s,
    })
}
