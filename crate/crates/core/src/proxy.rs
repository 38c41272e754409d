//! Per-sample losses: a Gaussian-kernel density proxy, external loss tables,
//! the whole-dataset objective and neighbourhood diagnostics.

use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::model::{squared_euclidean, EmbeddingMatrix};
use crate::rng::{seeded_rng, STREAM_BANDWIDTH};

/// Loss assigned to a kept sample that has no other kept sample to be scored
/// against: `ln(1 / f64::EPSILON)`.
pub const LONE_SAMPLE_LOSS: f64 = 36.04365338911715;

/// Default subsample size for [`median_bandwidth`].
pub const DEFAULT_BANDWIDTH_SUBSAMPLE: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossSource {
    KdeProxy,
    External,
}

/// One nonnegative finite loss per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTable {
    losses: Vec<f64>,
    source: LossSource,
}

impl LossTable {
    pub fn new(losses: Vec<f64>, source: LossSource) -> Result<Self> {
        if let Some((id, &loss)) = losses.iter().enumerate().find(|(_, l)| !(**l >= 0.0) || !l.is_finite()) {
            return Err(Error::NegativeLoss { id, loss });
        }
        Ok(Self { losses, source })
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn loss(&self, i: usize) -> f64 {
        self.losses[i]
    }

    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn source(&self) -> LossSource {
        self.source
    }

    pub fn total(&self) -> f64 {
        self.losses.iter().sum()
    }
}

/// Negative log of the mean Gaussian kernel between each sample and the kept
/// set, leaving a kept sample out of its own average.
pub fn kde_proxy_losses(emb: &EmbeddingMatrix, kept: &[usize], bandwidth: f64) -> Result<LossTable> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::NonPositiveBandwidth(bandwidth));
    }
    if kept.is_empty() {
        return Err(Error::EmptyKeptSet);
    }
    let mut kept = kept.to_vec();
    kept.sort_unstable();
    kept.dedup();
    if let Some(&bad) = kept.iter().find(|&&i| i >= emb.n()) {
        return Err(Error::DimensionMismatch { expected: emb.n(), found: bad + 1 });
    }
    let inv_two_h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    let losses = (0..emb.n())
        .into_par_iter()
        .map(|s| {
            let x = emb.row(s);
            let exponents: Vec<f64> = kept
                .iter()
                .filter(|&&k| k != s)
                .map(|&k| -squared_euclidean(x, emb.row(k)) * inv_two_h2)
                .collect();
            if exponents.is_empty() {
                return LONE_SAMPLE_LOSS;
            }
            let peak = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = exponents.iter().map(|e| (e - peak).exp()).sum();
            ((exponents.len() as f64).ln() - peak - sum.ln()).max(0.0)
        })
        .collect();
    LossTable::new(losses, LossSource::KdeProxy)
}

/// Median pairwise distance over a seeded subsample of at most `subsample` rows.
/// An even number of pairs takes the mean of the two middle distances.
pub fn median_bandwidth(emb: &EmbeddingMatrix, subsample: usize, seed: u64) -> Result<f64> {
    if subsample < 2 {
        return Err(Error::InvalidConfig(format!("bandwidth subsample {subsample} must be >= 2")));
    }
    let n = emb.n();
    if n < 2 {
        return Err(Error::DegenerateData("bandwidth needs at least two samples".into()));
    }
    let rows: Vec<usize> = if n <= subsample {
        (0..n).collect()
    } else {
        let mut rng = seeded_rng(seed, STREAM_BANDWIDTH);
        let mut picked = index::sample(&mut rng, n, subsample).into_vec();
        picked.sort_unstable();
        picked
    };
    let mut dists: Vec<f64> = rows
        .par_iter()
        .enumerate()
        .flat_map_iter(|(a, &i)| rows[a + 1..].iter().map(move |&j| emb.distance(i, j)))
        .collect();
    dists.sort_unstable_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 1 { dists[mid] } else { 0.5 * (dists[mid - 1] + dists[mid]) };
    if median <= 0.0 {
        return Err(Error::DegenerateData("median pairwise distance is zero".into()));
    }
    Ok(median)
}

/// Sum over every sample of its density-proxy loss against `kept`.
pub fn objective_j(emb: &EmbeddingMatrix, kept: &[usize], bandwidth: f64) -> Result<f64> {
    Ok(kde_proxy_losses(emb, kept, bandwidth)?.total())
}

/// Reads and validates an external loss table covering samples `0..n`.
pub fn import_losses(path: &Path, n: usize) -> Result<LossTable> {
    crate::io::read_loss_table(path, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterKnn {
    pub cluster: usize,
    pub size: usize,
    /// Mean over members of the mean distance to their `k` nearest neighbours.
    pub mean_knn_distance: f64,
}

/// Mean distance from each sample to its `k_neighbors` nearest other samples
/// (over the whole dataset), averaged per cluster.
pub fn knn_distance_report(
    emb: &EmbeddingMatrix,
    assignment: &ClusterAssignment,
    k_neighbors: usize,
) -> Result<Vec<ClusterKnn>> {
    let n = emb.n();
    if k_neighbors == 0 || k_neighbors >= n {
        return Err(Error::KTooLarge { k: k_neighbors, n });
    }
    let per_sample = sample_knn_distances(emb, k_neighbors);
    let mut sums = vec![0.0; assignment.k()];
    let sizes = assignment.sizes();
    for (i, &l) in assignment.labels().iter().enumerate() {
        sums[l] += per_sample[i];
    }
    Ok(sums
        .iter()
        .zip(&sizes)
        .enumerate()
        .map(|(cluster, (&sum, &size))| ClusterKnn {
            cluster,
            size,
            mean_knn_distance: if size == 0 { 0.0 } else { sum / size as f64 },
        })
        .collect())
}

fn sample_knn_distances(emb: &EmbeddingMatrix, k: usize) -> Vec<f64> {
    (0..emb.n())
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..emb.n()).filter(|&j| j != i).map(|j| emb.distance(i, j)).collect();
            d.select_nth_unstable_by(k - 1, f64::total_cmp);
            let mut nearest = d[..k].to_vec();
            nearest.sort_unstable_by(f64::total_cmp);
            nearest.iter().sum::<f64>() / k as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn coincident_single_reference_is_zero() {
        let emb = line(&[1.0, 1.0]);
        let table = kde_proxy_losses(&emb, &[0], 0.7).unwrap();
        assert_eq!(table.loss(1), 0.0);
        assert_eq!(table.loss(0), LONE_SAMPLE_LOSS);
    }

    #[test]
    fn one_bandwidth_away_is_half() {
        let emb = line(&[0.0, 1.5]);
        let table = kde_proxy_losses(&emb, &[0], 1.5).unwrap();
        assert!((table.loss(1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sentinel_matches_epsilon() {
        assert_eq!(LONE_SAMPLE_LOSS, -f64::EPSILON.ln());
    }

    #[test]
    fn kde_errors() {
        let emb = line(&[0.0, 1.0]);
        assert!(matches!(kde_proxy_losses(&emb, &[], 1.0), Err(Error::EmptyKeptSet)));
        assert!(matches!(kde_proxy_losses(&emb, &[0], 0.0), Err(Error::NonPositiveBandwidth(_))));
    }

    #[test]
    fn bandwidth_single_pair() {
        let emb = line(&[0.0, 2.0]);
        assert_eq!(median_bandwidth(&emb, 500, 0).unwrap(), 2.0);
    }

    #[test]
    fn bandwidth_identical_points() {
        let emb = line(&[3.0, 3.0, 3.0]);
        assert!(matches!(median_bandwidth(&emb, 500, 0), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn knn_hand_computed() {
        let emb = line(&[0.0, 1.0, 2.0]);
        let assignment = ClusterAssignment::from_labels(&emb, vec![0, 0, 0], 1).unwrap();
        let report = knn_distance_report(&emb, &assignment, 1).unwrap();
        assert_eq!(report[0].mean_knn_distance, 1.0);
        assert!(matches!(knn_distance_report(&emb, &assignment, 3), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn knn_identical_cluster() {
        let emb = line(&[5.0, 5.0, 5.0, 9.0]);
        let assignment = ClusterAssignment::from_labels(&emb, vec![0, 0, 0, 1], 2).unwrap();
        let report = knn_distance_report(&emb, &assignment, 2).unwrap();
        assert_eq!(report[0].mean_knn_distance, 0.0);
    }

    #[test]
    fn negative_loss_rejected() {
        assert!(matches!(
            LossTable::new(vec![0.1, -0.1], LossSource::External),
            Err(Error::NegativeLoss { id: 1, .. })
        ));
    }
}
