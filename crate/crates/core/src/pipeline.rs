//! End-to-end composition of the two pruning stages.

use std::fmt;
use std::str::FromStr;

use crate::adaptation::{adapt, reselect, Adaptation};
use crate::baselines::{cluster_uniform_dedup_select, global_dedup_select, random_select};
use crate::clustering::{kmeans_fit, ClusterAssignment};
use crate::density::{initial_prune, initial_prune_cluster_uniform, DedupOrder, ThresholdSelection};
use crate::error::{Error, Result};
use crate::model::{CheckedConfig, EmbeddingMatrix, InitialMode, PruneState};
use crate::proxy::{kde_proxy_losses, median_bandwidth, LossTable, DEFAULT_BANDWIDTH_SUBSAMPLE};

/// The matrices the stages actually measure distances in.
#[derive(Debug, Clone)]
pub struct Geometry {
    /// Used for clustering.
    pub cluster: EmbeddingMatrix,
    /// Used for de-duplication and the density proxy. Same as `cluster` unless a
    /// second matrix was supplied.
    pub prune: EmbeddingMatrix,
}

impl Geometry {
    pub fn new(cluster: &EmbeddingMatrix, prune: Option<&EmbeddingMatrix>, normalize: bool) -> Result<Self> {
        if let Some(p) = prune {
            if p.n() != cluster.n() {
                return Err(Error::DimensionMismatch { expected: cluster.n(), found: p.n() });
            }
        }
        let prep = |m: &EmbeddingMatrix| if normalize { m.l2_normalized() } else { m.clone() };
        let cluster_m = prep(cluster);
        let prune_m = prune.map_or_else(|| cluster_m.clone(), prep);
        Ok(Self { cluster: cluster_m, prune: prune_m })
    }

    pub fn n(&self) -> usize {
        self.cluster.n()
    }
}

pub fn cluster_stage(geometry: &Geometry, config: &CheckedConfig) -> Result<ClusterAssignment> {
    let c = &config.config;
    kmeans_fit(&geometry.cluster, c.k_clusters, c.seed, c.max_iters, c.tol)
}

pub fn initial_stage(
    geometry: &Geometry,
    assignment: &ClusterAssignment,
    config: &CheckedConfig,
) -> Result<(PruneState, ThresholdSelection)> {
    let order = DedupOrder::ascending(geometry.n());
    match config.config.initial_mode {
        InitialMode::Global => initial_prune(&geometry.prune, assignment, config.m, &order),
        InitialMode::ClusterUniform => initial_prune_cluster_uniform(&geometry.prune, assignment, config.m, &order),
    }
}

/// Configured kernel width, or the median pairwise distance of the pruning matrix.
pub fn proxy_bandwidth(geometry: &Geometry, config: &CheckedConfig) -> Result<f64> {
    match config.config.bandwidth {
        Some(h) => Ok(h),
        None => median_bandwidth(&geometry.prune, DEFAULT_BANDWIDTH_SUBSAMPLE, config.config.seed),
    }
}

pub fn proxy_loss_stage(geometry: &Geometry, initial: &PruneState, config: &CheckedConfig) -> Result<LossTable> {
    let h = proxy_bandwidth(geometry, config)?;
    kde_proxy_losses(&geometry.prune, &initial.kept_indices(), h)
}

pub fn adapt_stage(
    geometry: &Geometry,
    assignment: &ClusterAssignment,
    initial: &PruneState,
    losses: &LossTable,
    config: &CheckedConfig,
) -> Result<(Adaptation, PruneState)> {
    if losses.len() != geometry.n() {
        return Err(Error::MissingLoss(losses.len().min(geometry.n())));
    }
    let adaptation = adapt(initial, losses, assignment, config)?;
    let order = DedupOrder::ascending(geometry.n());
    let final_state = reselect(&geometry.prune, assignment, initial, &adaptation.keep_counts, &order)?;
    Ok((adaptation, final_state))
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub assignment: ClusterAssignment,
    pub initial: PruneState,
    pub threshold: ThresholdSelection,
    pub losses: LossTable,
    pub adaptation: Adaptation,
    pub final_state: PruneState,
}

/// Cluster → initial prune → losses (density proxy unless `external` is given)
/// → adaptation → per-cluster re-selection.
pub fn run_pipeline(geometry: &Geometry, config: &CheckedConfig, external: Option<LossTable>) -> Result<PipelineRun> {
    let assignment = cluster_stage(geometry, config)?;
    let (initial, threshold) = initial_stage(geometry, &assignment, config)?;
    let losses = match external {
        Some(table) => table,
        None => proxy_loss_stage(geometry, &initial, config)?,
    };
    let (adaptation, final_state) = adapt_stage(geometry, &assignment, &initial, &losses, config)?;
    Ok(PipelineRun { assignment, initial, threshold, losses, adaptation, final_state })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Selector {
    AdaDedup,
    Random,
    GlobalDedup,
    SseUniform,
}

impl Selector {
    pub const ALL: [Selector; 4] = [Selector::AdaDedup, Selector::Random, Selector::GlobalDedup, Selector::SseUniform];

    pub fn as_str(self) -> &'static str {
        match self {
            Selector::AdaDedup => "adadedup",
            Selector::Random => "random",
            Selector::GlobalDedup => "global-dedup",
            Selector::SseUniform => "sse-uniform",
        }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Selector::ALL
            .into_iter()
            .find(|sel| sel.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown selector '{s}'")))
    }
}

/// Kept indices chosen by `selector` for budget `config.m`.
pub fn select(selector: Selector, geometry: &Geometry, config: &CheckedConfig) -> Result<Vec<usize>> {
    let order = DedupOrder::ascending(geometry.n());
    match selector {
        Selector::AdaDedup => Ok(run_pipeline(geometry, config, None)?.final_state.kept_indices()),
        Selector::Random => random_select(geometry.n(), config.m, config.config.seed),
        Selector::GlobalDedup => global_dedup_select(&geometry.prune, config.m, &order),
        Selector::SseUniform => {
            let assignment = cluster_stage(geometry, config)?;
            cluster_uniform_dedup_select(&geometry.prune, &assignment, config.m, &order)
        }
    }
}
