use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisConfig, Period};
use crate::geom::{overlap_matrix, read_geojson_with_key, Domain};
use crate::inference::{dic, gibbs_stcos, GibbsOutput};
use crate::linalg::DenseMatrix;

use super::assemble::{assemble, build_knots, filter_fine_support, Assembled};
use super::config::PipelineConfig;
use super::ingest::{ingest_census_json, read_estimates_csv, write_estimates_csv, EstimateRow, SourceSupport};
use super::simulate::{simulate, SimulationTruth, SourceLayout, TruthRecord};
use super::summary::{summarize_targets, write_chain_csv, write_targets_csv, write_targets_geojson, TargetContext, TargetSummary};
use super::{PipelineError, Result};

pub const PREPARED_FILE: &str = "prepared.json";
pub const FIT_FILE: &str = "fit.json";
pub const TARGETS_CSV: &str = "targets.csv";
pub const TARGETS_GEOJSON: &str = "targets.geojson";
pub const CHAIN_CSV: &str = "chain.csv";
pub const RUN_JSON: &str = "run.json";
pub const TIMINGS_JSON: &str = "timings.json";

// Independent ChaCha streams per stage so each stage reproduces on its own.
const STREAM_KNOTS: u64 = 1;
const STREAM_BASIS: u64 = 2;
const STREAM_TARGETS: u64 = 3;
const STREAM_SIMULATE: u64 = 4;

fn stage_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn read_domain(cfg: &PipelineConfig, path: &str) -> Result<Domain> {
    let p = cfg.resolve(path);
    read_geojson_with_key(&p, &cfg.paths.id_key).map_err(|e| match e {
        crate::geom::GeomError::Io(io) => PipelineError::Data(format!("{}: {io}", p.display())),
        other => other.into(),
    })
}

/// Source geographies with their estimates, before NA filtering.
pub fn load_sources(cfg: &PipelineConfig) -> Result<Vec<SourceSupport>> {
    let mut csv_cache: BTreeMap<PathBuf, Vec<EstimateRow>> = BTreeMap::new();
    let mut out = Vec::with_capacity(cfg.sources.len());
    for s in &cfg.sources {
        let dom = read_domain(cfg, &s.geojson)?;
        let rows = match (&s.estimates, &s.census_est, &s.census_moe) {
            (Some(e), _, _) => {
                let p = cfg.resolve(e);
                if !csv_cache.contains_key(&p) {
                    let rows = read_estimates_csv(&p)?;
                    csv_cache.insert(p.clone(), rows);
                }
                csv_cache[&p].clone()
            }
            (None, Some(e), Some(m)) => ingest_census_json(cfg.resolve(e), cfg.resolve(m))?,
            _ => return Err(PipelineError::Config(format!("source {} has no estimates", s.geojson))),
        };
        let src = SourceSupport::from_rows(dom, s.year, s.lookback, &rows, cfg.model.alpha)?;
        out.push(src);
    }
    Ok(out)
}

/// Reads inputs and builds the model data.
pub fn prepare(cfg: &PipelineConfig) -> Result<Assembled> {
    let raw = load_sources(cfg)?;
    let sources: Vec<SourceSupport> = raw
        .iter()
        .map(|s| {
            let f = s.na_filtered();
            if f.len() < s.len() {
                log::info!("source {} ({}): dropped {} rows with missing values", s.domain.label(), s.year, s.len() - f.len());
            }
            f
        })
        .collect();
    if sources.iter().any(SourceSupport::is_empty) {
        return Err(PipelineError::Data("a source has no usable rows".into()));
    }
    let fine = filter_fine_support(&read_domain(cfg, &cfg.paths.fine)?, &sources, cfg.model.min_overlap_m2)?;
    let knots = build_knots(&fine, &cfg.knots, &cfg.temporal_knots(), &mut stage_rng(cfg.seed, STREAM_KNOTS))?;
    let assembled = assemble(
        &fine,
        &sources,
        knots,
        &cfg.model,
        &cfg.fine_years(),
        &mut stage_rng(cfg.seed, STREAM_BASIS),
    )?;
    log::info!(
        "N = {}, n_B = {}, r = {}",
        assembled.data.n(),
        assembled.data.n_b(),
        assembled.data.r()
    );
    Ok(assembled)
}

pub fn fit(cfg: &PipelineConfig, prepared: &Assembled) -> Result<GibbsOutput> {
    let gcfg = cfg.gibbs_config();
    log::info!("Gibbs: {} iterations, burn {}, thin {}", gcfg.iterations, gcfg.burn, gcfg.thin);
    Ok(gibbs_stcos(&prepared.data, &cfg.hyper, &gcfg)?)
}

pub fn target_period(cfg: &PipelineConfig) -> Result<Period> {
    let (year, lookback) = cfg.target_period();
    Ok(Period::ending(year, lookback)?)
}

pub fn report(cfg: &PipelineConfig, prepared: &Assembled, out: &GibbsOutput) -> Result<(Domain, Vec<TargetSummary>)> {
    let targets = read_domain(cfg, &cfg.paths.targets)?;
    let period = target_period(cfg)?;
    let ctx = TargetContext {
        fine: &prepared.fine,
        knots: &prepared.knots,
        projection: &prepared.pca.projection,
        standardization: &prepared.standardization,
        period: &period,
        basis: BasisConfig { mc_reps: cfg.model.mc_reps },
        alpha: cfg.model.alpha,
    };
    let rows = summarize_targets(out, &targets, &ctx, &mut stage_rng(cfg.seed, STREAM_TARGETS))?;
    Ok((targets, rows))
}

/// Contents of `run.json`. Wall-clock timings go to `timings.json` so that
/// this file is reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub config: PipelineConfig,
    pub r: usize,
    pub r_full: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub n_b: usize,
    pub saved_draws: usize,
    pub target_year: i32,
    pub target_lookback: u32,
    #[serde(rename = "DIC")]
    pub dic: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub prepare_secs: Option<f64>,
    pub fit_secs: Option<f64>,
    pub report_secs: Option<f64>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Data(format!("{}: {e} (run the earlier stage first)", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn ensure_output_dir(cfg: &PipelineConfig) -> Result<PathBuf> {
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn run_prepare(cfg: &PipelineConfig) -> Result<Assembled> {
    let dir = ensure_output_dir(cfg)?;
    let prepared = prepare(cfg)?;
    write_json(&dir.join(PREPARED_FILE), &prepared)?;
    Ok(prepared)
}

pub fn run_fit(cfg: &PipelineConfig) -> Result<GibbsOutput> {
    let dir = ensure_output_dir(cfg)?;
    let prepared: Assembled = read_json(&dir.join(PREPARED_FILE))?;
    let out = fit(cfg, &prepared)?;
    write_fit_outputs(&dir, &out)?;
    Ok(out)
}

fn write_fit_outputs(dir: &Path, out: &GibbsOutput) -> Result<()> {
    write_json(&dir.join(FIT_FILE), out)?;
    write_chain_csv(dir.join(CHAIN_CSV), out)
}

pub fn run_report(cfg: &PipelineConfig) -> Result<Vec<TargetSummary>> {
    let dir = ensure_output_dir(cfg)?;
    let prepared: Assembled = read_json(&dir.join(PREPARED_FILE))?;
    let out: GibbsOutput = read_json(&dir.join(FIT_FILE))?;
    write_report_outputs(cfg, &dir, &prepared, &out)
}

fn write_report_outputs(cfg: &PipelineConfig, dir: &Path, prepared: &Assembled, out: &GibbsOutput) -> Result<Vec<TargetSummary>> {
    let (targets, rows) = report(cfg, prepared, out)?;
    write_targets_csv(dir.join(TARGETS_CSV), &rows)?;
    write_targets_geojson(dir.join(TARGETS_GEOJSON), &targets, &cfg.paths.id_key, &rows)?;
    let (target_year, target_lookback) = cfg.target_period();
    let meta = RunMetadata {
        seed: cfg.seed,
        config: cfg.clone(),
        r: prepared.data.r(),
        r_full: prepared.pca.projection.nrows(),
        n: prepared.data.n(),
        n_b: prepared.data.n_b(),
        saved_draws: out.len(),
        target_year,
        target_lookback,
        dic: dic(out, &prepared.data)?,
    };
    write_json(&dir.join(RUN_JSON), &meta)?;
    Ok(rows)
}

/// All stages in sequence, writing every output file.
pub fn run_all(cfg: &PipelineConfig) -> Result<Vec<TargetSummary>> {
    let dir = ensure_output_dir(cfg)?;
    let mut timings = Timings::default();

    let t = Instant::now();
    let prepared = prepare(cfg)?;
    write_json(&dir.join(PREPARED_FILE), &prepared)?;
    timings.prepare_secs = Some(t.elapsed().as_secs_f64());

    let t = Instant::now();
    let out = fit(cfg, &prepared)?;
    write_fit_outputs(&dir, &out)?;
    timings.fit_secs = Some(t.elapsed().as_secs_f64());

    let t = Instant::now();
    let rows = write_report_outputs(cfg, &dir, &prepared, &out)?;
    timings.report_secs = Some(t.elapsed().as_secs_f64());

    write_json(&dir.join(TIMINGS_JSON), &timings)?;
    Ok(rows)
}

/// Writes synthetic estimates for the configured sources and a truth record.
///
/// Uses `K = I` over the full knot set; `μ_B` comes from the `[simulate]`
/// table or is drawn around `mu_level`. Direct variances are
/// `(cv · |Hμ_B|)²` per source area.
pub fn run_simulate(cfg: &PipelineConfig) -> Result<TruthRecord> {
    let sim_cfg = cfg
        .simulate
        .clone()
        .ok_or_else(|| PipelineError::Config("`simulate` needs a [simulate] table".into()))?;
    let mut domains = Vec::with_capacity(cfg.sources.len());
    for s in &cfg.sources {
        if s.estimates.is_none() {
            return Err(PipelineError::Config(format!("source {} needs an `estimates` CSV path to simulate into", s.geojson)));
        }
        domains.push(read_domain(cfg, &s.geojson)?);
    }
    let shells: Vec<SourceSupport> = domains
        .iter()
        .zip(&cfg.sources)
        .map(|(d, s)| SourceSupport::from_rows(d.clone(), s.year, s.lookback, &[], cfg.model.alpha))
        .collect::<Result<_>>()?;
    let fine = filter_fine_support(&read_domain(cfg, &cfg.paths.fine)?, &shells, cfg.model.min_overlap_m2)?;
    let knots = build_knots(&fine, &cfg.knots, &cfg.temporal_knots(), &mut stage_rng(cfg.seed, STREAM_KNOTS))?;

    let mut rng = stage_rng(cfg.seed, STREAM_SIMULATE);
    let mu_b = match &sim_cfg.mu_b {
        Some(m) if m.len() == fine.len() => m.clone(),
        Some(m) => {
            return Err(PipelineError::Config(format!(
                "simulate.mu_b has {} entries but the fine support has {} units",
                m.len(),
                fine.len()
            )))
        }
        None => {
            let dist = Normal::new(sim_cfg.mu_level, sim_cfg.mu_spread)
                .map_err(|e| PipelineError::Config(format!("simulate: {e}")))?;
            (0..fine.len()).map(|_| dist.sample(&mut rng)).collect()
        }
    };
    let mut layout = Vec::with_capacity(domains.len());
    for (d, s) in domains.iter().zip(&cfg.sources) {
        let h = overlap_matrix(d, &fine, true)?;
        let mean = h.mul_vec(&nalgebra::DVector::from_column_slice(&mu_b));
        let v = mean.iter().map(|m| (sim_cfg.cv * m.abs()).powi(2)).collect();
        layout.push(SourceLayout { domain: d.clone(), year: s.year, lookback: s.lookback, v });
    }
    let truth = SimulationTruth { mu_b, sig2_k: sim_cfg.sig2_k, sig2_xi: sim_cfg.sig2_xi };
    let k = DenseMatrix::identity(knots.len(), knots.len());
    let basis = BasisConfig { mc_reps: cfg.model.mc_reps };
    let sim = simulate(&fine, &truth, &knots, &k, &layout, &basis, cfg.model.alpha, &mut rng)?;

    let mut by_file: BTreeMap<PathBuf, Vec<EstimateRow>> = BTreeMap::new();
    for (src, s) in sim.sources.iter().zip(&cfg.sources) {
        let rows = by_file.entry(cfg.resolve(s.estimates.as_deref().unwrap())).or_default();
        for (i, id) in src.domain.ids().iter().enumerate() {
            rows.push(EstimateRow {
                geoid: id.to_string(),
                year: Some(src.year),
                lookback: Some(src.lookback),
                est: src.est[i],
                moe: src.moe[i],
            });
        }
    }
    for (path, rows) in &by_file {
        write_estimates_csv(path, rows)?;
    }
    let dir = ensure_output_dir(cfg)?;
    write_json(&dir.join(&sim_cfg.truth_file), &sim.record)?;
    Ok(sim.record)
}
