//! Two-stage, cluster-adaptive de-duplication of embedding datasets.
//!
//! Samples are clustered, de-duplicated once with a single distance threshold,
//! scored with a per-sample loss, and then re-pruned with per-cluster keep
//! ratios nudged toward clusters whose kept samples still carry loss.

pub mod adaptation;
pub mod baselines;
pub mod benchmark;
pub mod clustering;
pub mod density;
pub mod error;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod proxy;
pub mod rng;

pub use error::{Error, ErrorClass, Result};
pub use model::{validate_config, CheckedConfig, EmbeddingMatrix, PruneConfig, PruneState, SampleId, Stage};
pub use pipeline::{run_pipeline, select, Geometry, PipelineRun, Selector};
