//! Reference selectors: uniform random, global threshold de-duplication, and a
//! shared threshold applied within clusters.

use rand::seq::index;

use crate::clustering::ClusterAssignment;
use crate::density::{find_threshold_for_budget, find_uniform_threshold_for_budget, DedupOrder};
use crate::error::{Error, Result};
use crate::model::EmbeddingMatrix;
use crate::rng::{seeded_rng, STREAM_RANDOM_BASELINE};

/// Uniform `m`-subset of `0..n` without replacement, ascending.
pub fn random_select(n: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m < 1 || m > n {
        return Err(Error::BudgetOutOfRange { budget: m, min: 1, max: n });
    }
    let mut rng = seeded_rng(seed, STREAM_RANDOM_BASELINE);
    let mut picked = index::sample(&mut rng, n, m).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Threshold de-duplication over the whole dataset, trimmed to `m`.
pub fn global_dedup_select(emb: &EmbeddingMatrix, m: usize, order: &DedupOrder) -> Result<Vec<usize>> {
    let all: Vec<usize> = (0..emb.n()).collect();
    Ok(find_threshold_for_budget(emb, &all, m, order)?.kept)
}

/// One radius shared by all clusters, de-duplicating inside each cluster.
pub fn cluster_uniform_dedup_select(
    emb: &EmbeddingMatrix,
    assignment: &ClusterAssignment,
    m: usize,
    order: &DedupOrder,
) -> Result<Vec<usize>> {
    if assignment.labels().len() != emb.n() {
        return Err(Error::DimensionMismatch { expected: emb.n(), found: assignment.labels().len() });
    }
    Ok(find_uniform_threshold_for_budget(emb, &assignment.members(), m, order)?.kept)
}
