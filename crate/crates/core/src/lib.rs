//! Spatio-temporal change of support for areal survey estimates.
//!
//! Direct estimates on overlapping source geographies and periods are
//! combined through a latent fine-level process, and posterior summaries are
//! produced for arbitrary target geographies.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod cov;
pub mod geom;
pub mod inference;
pub mod linalg;
pub mod pipeline;

pub use pipeline::PipelineError as Error;
