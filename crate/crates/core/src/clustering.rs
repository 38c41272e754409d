//! k-means clustering with k-means++ seeding.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{squared_euclidean, EmbeddingMatrix};
use crate::rng::{seeded_rng, STREAM_KMEANS_INIT};

/// Partition of the samples into `k` non-empty clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    centroids: EmbeddingMatrix,
    inertia: f64,
}

impl ClusterAssignment {
    /// Assignment from explicit labels; centroids are the cluster means.
    pub fn from_labels(emb: &EmbeddingMatrix, labels: Vec<usize>, k: usize) -> Result<Self> {
        if labels.len() != emb.n() {
            return Err(Error::DimensionMismatch { expected: emb.n(), found: labels.len() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::DimensionMismatch { expected: k, found: bad + 1 });
        }
        let centroids = means(emb, &labels, k, None)?;
        let inertia = inertia(emb, &labels, &centroids);
        Ok(Self { labels, centroids, inertia })
    }

    /// Assignment from stored labels and centroids; inertia is recomputed.
    pub fn from_parts(emb: &EmbeddingMatrix, labels: Vec<usize>, centroids: EmbeddingMatrix) -> Result<Self> {
        if labels.len() != emb.n() {
            return Err(Error::DimensionMismatch { expected: emb.n(), found: labels.len() });
        }
        if centroids.d() != emb.d() {
            return Err(Error::DimensionMismatch { expected: emb.d(), found: centroids.d() });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= centroids.n()) {
            return Err(Error::DimensionMismatch { expected: centroids.n(), found: bad + 1 });
        }
        let inertia = inertia(emb, &labels, &centroids);
        Ok(Self { labels, centroids, inertia })
    }

    /// Every sample in its own cluster.
    pub fn singletons(emb: &EmbeddingMatrix) -> Result<Self> {
        Self::from_labels(emb, (0..emb.n()).collect(), emb.n())
    }

    pub fn k(&self) -> usize {
        self.centroids.n()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn centroids(&self) -> &EmbeddingMatrix {
        &self.centroids
    }

    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    pub fn sizes(&self) -> Vec<usize> {
        crate::model::cluster_sizes(&self.labels, self.k())
    }

    /// Member indices per cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }
}

/// Fit diagnostics alongside the assignment.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub assignment: ClusterAssignment,
    /// Inertia of the seeding, then after each Lloyd iteration.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

pub fn kmeans_fit(emb: &EmbeddingMatrix, k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<ClusterAssignment> {
    Ok(kmeans_fit_traced(emb, k, seed, max_iters, tol)?.assignment)
}

pub fn kmeans_fit_traced(
    emb: &EmbeddingMatrix,
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<KMeansFit> {
    let n = emb.n();
    if k > n {
        return Err(Error::KTooLarge { k, n });
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let mut centroids = plus_plus_init(emb, k, seed)?;
    let mut labels = assign(emb, &centroids)?;
    let mut trace = vec![inertia(emb, &labels, &centroids)];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        repair_empty(emb, &mut labels, &mut centroids);
        let updated = means(emb, &labels, k, Some(&centroids))?;
        let shift = squared_euclidean(updated.values(), centroids.values()).sqrt();
        let scale = centroids.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        centroids = updated;
        labels = assign(emb, &centroids)?;
        trace.push(inertia(emb, &labels, &centroids));
        if shift <= tol * scale.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    if repair_empty(emb, &mut labels, &mut centroids) {
        *trace.last_mut().unwrap() = inertia(emb, &labels, &centroids);
    }
    let inertia = inertia(emb, &labels, &centroids);
    Ok(KMeansFit { assignment: ClusterAssignment { labels, centroids, inertia }, inertia_trace: trace, iterations })
}

fn plus_plus_init(emb: &EmbeddingMatrix, k: usize, seed: u64) -> Result<EmbeddingMatrix> {
    let n = emb.n();
    let mut rng = seeded_rng(seed, STREAM_KMEANS_INIT);
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n).map(|i| squared_euclidean(emb.row(i), emb.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                if w > 0.0 {
                    acc += w;
                    pick = Some(i);
                    if acc > target {
                        break;
                    }
                }
            }
            pick.expect("positive total has a positive weight")
        } else {
            // Every point coincides with a centre; take any unused index.
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(next);
        for (i, w) in nearest.iter_mut().enumerate() {
            *w = w.min(squared_euclidean(emb.row(i), emb.row(next)));
        }
    }
    emb.select_rows(&chosen)
}

/// Nearest centroid per sample; ties go to the lowest centroid index.
pub fn assign(emb: &EmbeddingMatrix, centroids: &EmbeddingMatrix) -> Result<Vec<usize>> {
    if centroids.d() != emb.d() {
        return Err(Error::DimensionMismatch { expected: emb.d(), found: centroids.d() });
    }
    Ok((0..emb.n())
        .into_par_iter()
        .map(|i| {
            let x = emb.row(i);
            let mut best = (f64::INFINITY, 0);
            for (c, centroid) in centroids.rows().enumerate() {
                let d = squared_euclidean(x, centroid);
                if d < best.0 {
                    best = (d, c);
                }
            }
            best.1
        })
        .collect())
}

fn inertia(emb: &EmbeddingMatrix, labels: &[usize], centroids: &EmbeddingMatrix) -> f64 {
    labels.iter().enumerate().map(|(i, &l)| squared_euclidean(emb.row(i), centroids.row(l))).sum()
}

/// Cluster means; an empty cluster keeps its `previous` centroid (or the origin).
fn means(
    emb: &EmbeddingMatrix,
    labels: &[usize],
    k: usize,
    previous: Option<&EmbeddingMatrix>,
) -> Result<EmbeddingMatrix> {
    let d = emb.d();
    let mut sums = vec![0.0; k * d];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums[l * d..(l + 1) * d].iter_mut().zip(emb.row(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        let slot = &mut sums[c * d..(c + 1) * d];
        if counts[c] == 0 {
            match previous {
                Some(p) => slot.copy_from_slice(p.row(c)),
                None => slot.fill(0.0),
            }
        } else {
            slot.iter_mut().for_each(|s| *s /= counts[c] as f64);
        }
    }
    EmbeddingMatrix::new(k, d, sums)
}

/// Moves the point farthest from its centroid in the largest cluster into each
/// empty cluster. Returns whether anything changed.
fn repair_empty(emb: &EmbeddingMatrix, labels: &mut [usize], centroids: &mut EmbeddingMatrix) -> bool {
    let k = centroids.n();
    let d = emb.d();
    let mut changed = false;
    loop {
        let sizes = crate::model::cluster_sizes(labels, k);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { break };
        let largest = (0..k).fold(0, |best, c| if sizes[c] > sizes[best] { c } else { best });
        if sizes[largest] < 2 {
            break;
        }
        let mut far = (f64::NEG_INFINITY, usize::MAX);
        for (i, &l) in labels.iter().enumerate() {
            if l == largest {
                let dist = squared_euclidean(emb.row(i), centroids.row(largest));
                if dist > far.0 {
                    far = (dist, i);
                }
            }
        }
        labels[far.1] = empty;
        let mut values = centroids.values().to_vec();
        values[empty * d..(empty + 1) * d].copy_from_slice(emb.row(far.1));
        *centroids = EmbeddingMatrix::new(k, d, values).expect("finite centroid rows");
        changed = true;
    }
    changed
}
