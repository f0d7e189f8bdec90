use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cov::FineLevelStructure;
use crate::geom::AdjacencyRule;
use crate::inference::{GibbsConfig, GibbsInit, Hyperparams};

use super::{PipelineError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    pub paths: PathsConfig,
    #[serde(default)]
    pub sources: Vec<SourceConfig>,
    #[serde(default)]
    pub knots: KnotConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub hyper: Hyperparams,
    #[serde(default)]
    pub gibbs: GibbsSettings,
    #[serde(default)]
    pub target: TargetConfig,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub fine: String,
    pub targets: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default = "default_id_key")]
    pub id_key: String,
}

fn default_output_dir() -> String {
    "out".into()
}

fn default_id_key() -> String {
    "geoid".into()
}

/// One source support: a geography plus the estimates for one period.
///
/// Estimates come either from a CSV (`estimates`, filtered to this source's
/// year and lookback) or from a Census API JSON pair (`census_est`,
/// `census_moe`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub geojson: String,
    pub year: i32,
    pub lookback: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimates: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub census_est: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub census_moe: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialKnotMethod {
    #[default]
    SpaceFilling,
    Hexagonal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnotConfig {
    pub method: SpatialKnotMethod,
    pub spatial_n: usize,
    /// Candidate points for the space-filling design.
    pub candidates: usize,
    /// Temporal grid; start and end default to the span of the sources.
    pub temporal_start: Option<f64>,
    pub temporal_end: Option<f64>,
    pub temporal_step: f64,
    /// Multiplier `w̃_s` on the distance quantile.
    pub ws_scale: f64,
    pub prob: f64,
    pub wt: f64,
}

impl Default for KnotConfig {
    fn default() -> Self {
        KnotConfig {
            method: SpatialKnotMethod::SpaceFilling,
            spatial_n: 100,
            candidates: 2000,
            temporal_start: None,
            temporal_end: None,
            temporal_step: 0.5,
            ws_scale: 1.0,
            prob: 0.05,
            wt: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub tau: f64,
    pub scaled: bool,
    pub structure: FineLevelStructure,
    pub adjacency: AdjacencyRule,
    pub pca_threshold: f64,
    pub mc_reps: usize,
    pub min_overlap_m2: f64,
    pub alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            tau: 0.9,
            scaled: true,
            structure: FineLevelStructure::RandomWalk,
            adjacency: AdjacencyRule::Queen,
            pca_threshold: 0.65,
            mc_reps: 500,
            min_overlap_m2: 10.0,
            alpha: 0.10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GibbsSettings {
    pub iterations: usize,
    pub burn: usize,
    pub thin: usize,
    pub report_period: usize,
    pub store_xi: bool,
}

impl Default for GibbsSettings {
    fn default() -> Self {
        let g = GibbsConfig::default();
        GibbsSettings {
            iterations: g.iterations,
            burn: g.burn,
            thin: g.thin,
            report_period: g.report_period,
            store_xi: g.store_xi,
        }
    }
}

/// Period used for the target-side basis. Unset fields fall back to the most
/// recent source window.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetConfig {
    pub year: Option<i32>,
    pub lookback: Option<u32>,
}

/// Truth for `simulate`. `mu_b` defaults to draws around `mu_level`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub mu_b: Option<Vec<f64>>,
    pub mu_level: f64,
    pub mu_spread: f64,
    pub sig2_k: f64,
    pub sig2_xi: f64,
    /// Direct standard error as a fraction of the noiseless mean.
    pub cv: f64,
    pub truth_file: String,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            mu_b: None,
            mu_level: 1000.0,
            mu_spread: 200.0,
            sig2_k: 1.0,
            sig2_xi: 0.04,
            cv: 0.05,
            truth_file: "truth.json".into(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, base)
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.paths.output_dir)
    }

    pub fn gibbs_config(&self) -> GibbsConfig {
        GibbsConfig {
            iterations: self.gibbs.iterations,
            burn: self.gibbs.burn,
            thin: self.gibbs.thin,
            report_period: self.gibbs.report_period,
            seed: self.seed,
            init: GibbsInit::default(),
            store_xi: self.gibbs.store_xi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PipelineError::Config(msg));
        let m = &self.model;
        if !(m.pca_threshold > 0.0 && m.pca_threshold <= 1.0) {
            return bad(format!("model.pca_threshold must lie in (0, 1], got {}", m.pca_threshold));
        }
        if !(m.alpha > 0.0 && m.alpha < 1.0) {
            return bad(format!("model.alpha must lie in (0, 1), got {}", m.alpha));
        }
        if !(m.tau > 0.0 && m.tau < 1.0) {
            return bad(format!("model.tau must lie in (0, 1), got {}", m.tau));
        }
        if m.mc_reps == 0 {
            return bad("model.mc_reps must be positive".into());
        }
        if !(m.min_overlap_m2 >= 0.0) {
            return bad("model.min_overlap_m2 must be non-negative".into());
        }
        let k = &self.knots;
        if k.spatial_n == 0 {
            return bad("knots.spatial_n must be positive".into());
        }
        if !(k.temporal_step > 0.0) {
            return bad("knots.temporal_step must be positive".into());
        }
        if !(k.ws_scale > 0.0 && k.wt > 0.0) {
            return bad("knots.ws_scale and knots.wt must be positive".into());
        }
        if !(k.prob > 0.0 && k.prob <= 1.0) {
            return bad(format!("knots.prob must lie in (0, 1], got {}", k.prob));
        }
        if let (Some(a), Some(b)) = (k.temporal_start, k.temporal_end) {
            if b < a {
                return bad("knots.temporal_end precedes temporal_start".into());
            }
        }
        if self.sources.is_empty() {
            return bad("at least one [[sources]] entry is required".into());
        }
        for (i, s) in self.sources.iter().enumerate() {
            if s.lookback == 0 {
                return bad(format!("sources[{i}].lookback must be at least 1"));
            }
            let census = s.census_est.is_some() || s.census_moe.is_some();
            match (s.estimates.is_some(), census) {
                (true, false) => {}
                (false, true) if s.census_est.is_some() && s.census_moe.is_some() => {}
                _ => {
                    return bad(format!(
                        "sources[{i}] needs either `estimates` or both `census_est` and `census_moe`"
                    ))
                }
            }
        }
        if self.target.lookback == Some(0) {
            return bad("target.lookback must be at least 1".into());
        }
        self.gibbs_config()
            .validate()
            .and_then(|_| self.hyper.validate())
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if let Some(sim) = &self.simulate {
            if !(sim.sig2_k >= 0.0 && sim.sig2_xi >= 0.0 && sim.cv >= 0.0 && sim.mu_spread >= 0.0) {
                return bad("simulate variances, spread and cv must be non-negative".into());
            }
        }
        Ok(())
    }

    /// Most recent source window unless overridden: latest year, then the
    /// longest lookback ending in it.
    pub fn target_period(&self) -> (i32, u32) {
        let year = self.sources.iter().map(|s| s.year).max().unwrap_or(0);
        let lookback = self
            .sources
            .iter()
            .filter(|s| s.year == year)
            .map(|s| s.lookback)
            .max()
            .unwrap_or(1);
        (self.target.year.unwrap_or(year), self.target.lookback.unwrap_or(lookback))
    }

    /// Every single year covered by some source period.
    pub fn fine_years(&self) -> Vec<i32> {
        let start = self.sources.iter().map(|s| s.year - s.lookback as i32 + 1).min().unwrap_or(0);
        let end = self.sources.iter().map(|s| s.year).max().unwrap_or(-1);
        (start..=end).collect()
    }

    pub fn temporal_knots(&self) -> Vec<f64> {
        let years = self.fine_years();
        let start = self.knots.temporal_start.unwrap_or(years[0] as f64);
        let end = self.knots.temporal_end.unwrap_or(*years.last().unwrap() as f64);
        let step = self.knots.temporal_step;
        let n = ((end - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| start + i as f64 * step).collect()
    }
}
