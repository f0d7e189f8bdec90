use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{
    areal_spacetime_bisquare, knots_hexagonal, knots_space_filling, radius_from_quantile, BasisConfig, Period,
    SpaceTimeKnots,
};
use crate::cov::{build_k, car_precision, FineLevelStructure};
use crate::geom::{adjacency_matrix, overlap_matrix, Domain};
use crate::inference::{standardize, ModelData, Standardization};
use crate::linalg::{sym_eigen, DenseMatrix, SparseMatrix};

use super::config::{KnotConfig, ModelConfig, SpatialKnotMethod};
use super::ingest::SourceSupport;
use super::{PipelineError, Result};

/// Fine units whose summed raw overlap with all source areas reaches
/// `min_overlap_m2`.
pub fn filter_fine_support(fine: &Domain, sources: &[SourceSupport], min_overlap_m2: f64) -> Result<Domain> {
    let mut total = vec![0.0; fine.len()];
    for src in sources {
        let ov = overlap_matrix(&src.domain, fine, false)?;
        for (acc, s) in total.iter_mut().zip(ov.col_sums().iter()) {
            *acc += s;
        }
    }
    let kept = fine.retain_indices(|j| total[j] >= min_overlap_m2);
    let dropped = fine.len() - kept.len();
    if dropped > 0 {
        log::info!("dropped {dropped} fine units with overlap below {min_overlap_m2} m²");
    }
    if kept.is_empty() {
        return Err(PipelineError::Config(format!(
            "no fine unit overlaps the sources by at least {min_overlap_m2} m²"
        )));
    }
    Ok(kept)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaReduction {
    /// `r_full × r`, the leading eigenvectors of `SᵀS`.
    pub projection: DenseMatrix,
    pub r: usize,
    /// All eigenvalues of `SᵀS`, descending.
    pub eigenvalues: Vec<f64>,
}

/// Smallest `r` whose leading eigenvalues reach `threshold` of the total,
/// never less than one.
pub fn pca_rank(eigenvalues: &[f64], threshold: f64) -> usize {
    let max = eigenvalues.iter().cloned().fold(0.0, f64::max);
    let tol = max * 1e-12;
    let positive: Vec<f64> = eigenvalues.iter().map(|&l| if l > tol { l } else { 0.0 }).collect();
    let total: f64 = positive.iter().sum();
    let mut cum = 0.0;
    for (k, l) in positive.iter().enumerate() {
        cum += l;
        if cum >= threshold * total {
            return k + 1;
        }
    }
    positive.iter().filter(|&&l| l > 0.0).count().max(1)
}

pub fn pca_reduce(s_full: &DenseMatrix, threshold: f64) -> Result<PcaReduction> {
    let gram = s_full.transpose() * s_full;
    let eig = sym_eigen(&crate::linalg::symmetrize(&gram))?;
    let r = pca_rank(eig.values.as_slice(), threshold);
    let mut projection = eig.vectors.columns(0, r).into_owned();
    // Fix the sign so the largest-magnitude loading is positive.
    for mut col in projection.column_iter_mut() {
        let imax = col.iamax();
        if col[imax] < 0.0 {
            col.neg_mut();
        }
    }
    Ok(PcaReduction { projection, r, eigenvalues: eig.values.iter().cloned().collect() })
}

/// Spatial knots on the fine domain crossed with the temporal grid.
pub fn build_knots<R: Rng + ?Sized>(fine: &Domain, cfg: &KnotConfig, temporal: &[f64], rng: &mut R) -> Result<SpaceTimeKnots> {
    let spatial = match cfg.method {
        SpatialKnotMethod::SpaceFilling => knots_space_filling(fine, cfg.candidates.max(cfg.spatial_n), cfg.spatial_n, rng)?,
        SpatialKnotMethod::Hexagonal => knots_hexagonal(fine, cfg.spatial_n),
    };
    let ws = radius_from_quantile(&spatial, cfg.ws_scale, cfg.prob)?;
    log::info!("{} spatial × {} temporal knots, w_s = {ws}", spatial.len(), temporal.len());
    Ok(SpaceTimeKnots::cartesian(&spatial, temporal, ws, cfg.wt)?)
}

/// Model inputs plus the transforms needed on the target side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assembled {
    pub data: ModelData,
    pub standardization: Standardization,
    pub pca: PcaReduction,
    pub knots: SpaceTimeKnots,
    pub fine: Domain,
    /// `(label, year, lookback, ids)` for each block of rows of `z`.
    pub source_rows: Vec<(String, i32, u32, Vec<String>)>,
}

fn vstack_dense(blocks: &[DenseMatrix], ncols: usize) -> DenseMatrix {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DenseMatrix::zeros(n, ncols);
    let mut row = 0;
    for b in blocks {
        out.rows_mut(row, b.nrows()).copy_from(b);
        row += b.nrows();
    }
    out
}

/// Builds `(z, v, H, S, K)` from NA-filtered sources over a filtered fine
/// support. `fine_years` indexes the yearly blocks of `S*`.
pub fn assemble<R: Rng + ?Sized>(
    fine: &Domain,
    sources: &[SourceSupport],
    knots: SpaceTimeKnots,
    model: &ModelConfig,
    fine_years: &[i32],
    rng: &mut R,
) -> Result<Assembled> {
    if sources.is_empty() {
        return Err(PipelineError::Config("no sources".into()));
    }
    if fine_years.is_empty() {
        return Err(PipelineError::Config("no fine-level years".into()));
    }
    let bcfg = BasisConfig { mc_reps: model.mc_reps };
    let r_full = knots.len();

    let mut h_blocks = Vec::with_capacity(sources.len());
    let mut s_blocks = Vec::with_capacity(sources.len());
    let (mut z_raw, mut v_raw) = (Vec::new(), Vec::new());
    let mut source_rows = Vec::with_capacity(sources.len());
    for src in sources {
        let (est, var) = src.values()?;
        if let Some(i) = var.iter().position(|v| !(*v > 0.0)) {
            return Err(PipelineError::Data(format!(
                "source {} ({}) area {} has non-positive variance",
                src.domain.label(),
                src.year,
                src.domain.units()[i].id()
            )));
        }
        z_raw.extend(est);
        v_raw.extend(var);
        h_blocks.push(overlap_matrix(&src.domain, fine, true)?);
        s_blocks.push(areal_spacetime_bisquare(&src.domain, &src.period(), &knots, &bcfg, rng)?);
        source_rows.push((
            src.domain.label().to_string(),
            src.year,
            src.lookback,
            src.domain.ids().iter().map(|s| s.to_string()).collect(),
        ));
    }
    let h = SparseMatrix::vstack(&h_blocks)?;
    let s_full = vstack_dense(&s_blocks, r_full);

    let mut star_blocks = Vec::with_capacity(fine_years.len());
    for &t in fine_years {
        let period = Period::new(vec![t as f64])?;
        star_blocks.push(areal_spacetime_bisquare(fine, &period, &knots, &bcfg, rng)?);
    }
    let s_star_full = vstack_dense(&star_blocks, r_full);

    let (z, v, standardization) = standardize(&DVector::from_vec(z_raw), &DVector::from_vec(v_raw))?;
    let pca = pca_reduce(&s_full, model.pca_threshold)?;
    log::info!("PCA keeps r = {} of {r_full} basis functions", pca.r);
    let s = &s_full * &pca.projection;
    let s_star = &s_star_full * &pca.projection;

    let k = if model.structure == FineLevelStructure::Identity {
        crate::cov::identity_k(pca.r)
    } else {
        let w = adjacency_matrix(fine, model.adjacency);
        let q = car_precision(&w, model.tau, model.scaled)?;
        build_k(model.structure, &q.inverse_symmetrized()?, &s_star)?
    };
    let data = ModelData::new(z, v, h, s, k)?;
    Ok(Assembled { data, standardization, pca, knots, fine: fine.clone(), source_rows })
}
