use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::basis::{areal_spacetime_bisquare, BasisConfig, Period, SpaceTimeKnots};
use crate::geom::{overlap_matrix, write_geojson_with_properties, Domain, GeomError};
use crate::inference::{fitted, GibbsOutput, Standardization};
use crate::linalg::{mean_sd, quantile_type7, DenseMatrix};

use super::ingest::normal_quantile_upper;
use super::{PipelineError, Result};

/// Posterior summary of one target area on the original data scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub geoid: String,
    pub e_mean: f64,
    pub e_sd: f64,
    pub e_lo: f64,
    pub e_hi: f64,
    pub e_median: f64,
    pub e_moe: f64,
}

/// Summarizes each column of `draws` (standardized scale) after mapping the
/// draws back through `std`.
pub fn summarize_draws(ids: &[String], draws: &DenseMatrix, std: &Standardization, alpha: f64) -> Result<Vec<TargetSummary>> {
    if ids.len() != draws.ncols() {
        return Err(PipelineError::Data(format!("{} ids for {} columns", ids.len(), draws.ncols())));
    }
    if draws.nrows() == 0 {
        return Err(PipelineError::Data("no posterior draws to summarize".into()));
    }
    let z = normal_quantile_upper(alpha);
    ids.iter()
        .enumerate()
        .map(|(j, id)| {
            let col: Vec<f64> = draws.column(j).iter().map(|&x| std.unstandardize(x)).collect();
            let (mean, sd) = mean_sd(&col);
            let sd = if col.len() > 1 { sd } else { 0.0 };
            let q = |p: f64| quantile_type7(&col, p).map_err(PipelineError::from);
            Ok(TargetSummary {
                geoid: id.clone(),
                e_mean: mean,
                e_sd: sd,
                e_lo: q(alpha / 2.0)?,
                e_hi: q(1.0 - alpha / 2.0)?,
                e_median: q(0.5)?,
                e_moe: sd * z,
            })
        })
        .collect()
}

/// Inputs describing the fitted model on the target side.
pub struct TargetContext<'a> {
    pub fine: &'a Domain,
    pub knots: &'a SpaceTimeKnots,
    pub projection: &'a DenseMatrix,
    pub standardization: &'a Standardization,
    pub period: &'a Period,
    pub basis: BasisConfig,
    pub alpha: f64,
}

/// `H̃` and projected `S̃` for `targets`.
pub fn target_design<R: Rng + ?Sized>(
    targets: &Domain,
    ctx: &TargetContext<'_>,
    rng: &mut R,
) -> Result<(crate::linalg::SparseMatrix, DenseMatrix)> {
    let h = overlap_matrix(targets, ctx.fine, true).map_err(|e| match e {
        GeomError::ZeroOverlap(id) => PipelineError::ZeroOverlap(id),
        other => other.into(),
    })?;
    let s_full = areal_spacetime_bisquare(targets, ctx.period, ctx.knots, &ctx.basis, rng)?;
    if s_full.ncols() != ctx.projection.nrows() {
        return Err(PipelineError::Data(format!(
            "projection has {} rows but the basis has {} columns",
            ctx.projection.nrows(),
            s_full.ncols()
        )));
    }
    Ok((h, s_full * ctx.projection))
}

pub fn summarize_targets<R: Rng + ?Sized>(
    out: &GibbsOutput,
    targets: &Domain,
    ctx: &TargetContext<'_>,
    rng: &mut R,
) -> Result<Vec<TargetSummary>> {
    let (h, s) = target_design(targets, ctx, rng)?;
    let draws = fitted(out, &h, &s)?;
    let ids: Vec<String> = targets.ids().iter().map(|s| s.to_string()).collect();
    summarize_draws(&ids, &draws, ctx.standardization, ctx.alpha)
}

pub const TARGETS_HEADER: [&str; 7] = ["geoid", "E_mean", "E_sd", "E_lo", "E_hi", "E_median", "E_moe"];

impl TargetSummary {
    fn values(&self) -> [f64; 6] {
        [self.e_mean, self.e_sd, self.e_lo, self.e_hi, self.e_median, self.e_moe]
    }
}

pub fn write_targets_csv(path: impl AsRef<Path>, rows: &[TargetSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| PipelineError::Io(e.into()))?;
    w.write_record(TARGETS_HEADER).map_err(|e| PipelineError::Io(e.into()))?;
    for r in rows {
        let mut rec = vec![r.geoid.clone()];
        rec.extend(r.values().iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| PipelineError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_targets_csv(path: impl AsRef<Path>) -> Result<Vec<TargetSummary>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| PipelineError::Io(e.into()))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| PipelineError::Io(e.into()))?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| PipelineError::Ingest {
                file: path.display().to_string(),
                row: i + 1,
                reason: format!("bad value in column {k}"),
            })
        };
        out.push(TargetSummary {
            geoid: rec.get(0).unwrap_or_default().to_string(),
            e_mean: num(1)?,
            e_sd: num(2)?,
            e_lo: num(3)?,
            e_hi: num(4)?,
            e_median: num(5)?,
            e_moe: num(6)?,
        });
    }
    Ok(out)
}

/// Target features with the six summaries merged into their properties.
pub fn write_targets_geojson(path: impl AsRef<Path>, targets: &Domain, id_key: &str, rows: &[TargetSummary]) -> Result<()> {
    let props: Vec<Map<String, Value>> = rows
        .iter()
        .map(|r| {
            TARGETS_HEADER[1..]
                .iter()
                .zip(r.values())
                .map(|(k, v)| (k.to_string(), Value::from(v)))
                .collect()
        })
        .collect();
    write_geojson_with_properties(path, targets, id_key, &props)?;
    Ok(())
}

/// Trace of the variance components, one line per saved draw.
pub fn write_chain_csv(path: impl AsRef<Path>, out: &GibbsOutput) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    writeln!(f, "draw,sig2mu,sig2K,sig2xi,loglik")?;
    for d in 0..out.len() {
        writeln!(f, "{},{},{},{},{}", d + 1, out.sig2_mu[d], out.sig2_k[d], out.sig2_xi[d], out.loglik[d])?;
    }
    f.flush()?;
    Ok(())
}
