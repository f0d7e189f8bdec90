//! File-level orchestration: ingest, assemble, fit, summarize, simulate.

pub mod assemble;
pub mod config;
pub mod ingest;
pub mod run;
pub mod simulate;
pub mod summary;

use thiserror::Error;

use crate::basis::BasisError;
use crate::cov::CovError;
use crate::geom::GeomError;
use crate::inference::InferenceError;
use crate::linalg::LinalgError;

pub use assemble::{assemble, build_knots, filter_fine_support, pca_rank, pca_reduce, Assembled, PcaReduction};
pub use config::PipelineConfig;
pub use ingest::{ingest_census_json, moe_to_var, read_estimates_csv, write_estimates_csv, EstimateRow, SourceSupport};
pub use simulate::{draw_latents, simulate, SimulatedData, SimulationTruth, SourceLayout, TruthRecord};
pub use summary::{summarize_draws, summarize_targets, TargetContext, TargetSummary};

#[derive(Error, Debug)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{file}, row {row}: {reason}")]
    Ingest { file: String, row: usize, reason: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("target '{0}' does not overlap the fine support")]
    ZeroOverlap(String),

    #[error(transparent)]
    Geom(#[from] GeomError),

    #[error(transparent)]
    Basis(#[from] BasisError),

    #[error(transparent)]
    Cov(#[from] CovError),

    #[error(transparent)]
    Inference(#[from] InferenceError),

    #[error(transparent)]
    Linalg(#[from] LinalgError),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

impl PipelineError {
    /// 2 for configuration, 3 for data and 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        use PipelineError::*;
        match self {
            Config(_) | Basis(_) => 2,
            Ingest { .. } | Data(_) | ZeroOverlap(_) | Geom(_) | Json(_) | Io(_) => 3,
            Cov(e) => match e {
                CovError::TauOutOfRange(_) => 2,
                CovError::IsolatedVertex(_) | CovError::InvalidAdjacency(_) | CovError::DimensionMismatch(_) => 3,
                CovError::RankDeficient | CovError::NotPositiveDefinite(_) | CovError::Linalg(_) => 4,
            },
            Inference(e) => match e {
                InferenceError::InvalidConfig(_) => 2,
                InferenceError::InvalidData(_) | InferenceError::DimensionMismatch(_) | InferenceError::ZeroVariance => 3,
                InferenceError::Numerical { .. } | InferenceError::Linalg(_) => 4,
            },
            Linalg(_) => 4,
        }
    }
}
