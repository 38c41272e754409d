//! Seeded synthetic data with uneven redundancy, and a harness that scores
//! selectors on it.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::round_to_storage;
use crate::model::{validate_config, EmbeddingMatrix, PruneConfig};
use crate::pipeline::{select, Geometry, Selector};
use crate::proxy::{median_bandwidth, objective_j, DEFAULT_BANDWIDTH_SUBSAMPLE};
use crate::rng::{seeded_rng, Stream, STREAM_SYNTH};

/// Gaussian blobs, some of which contain near-copies of their own points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_clusters: usize,
    pub sizes: Vec<usize>,
    /// Per-cluster standard deviation per coordinate.
    pub spreads: Vec<f64>,
    /// Per-cluster share of points that are jittered copies of earlier points.
    pub duplicate_fractions: Vec<f64>,
    pub dimension: usize,
    pub seed: u64,
    /// Total sample count; must equal the sum of `sizes`.
    pub n: usize,
    /// Fixed centres; drawn from the seeded stream when absent.
    #[serde(default)]
    pub centers: Option<Vec<Vec<f64>>>,
}

impl SynthSpec {
    /// Three tight clusters full of near-duplicates and three diffuse ones.
    pub fn canonical(seed: u64) -> Self {
        Self {
            n_clusters: 6,
            sizes: vec![200, 200, 200, 100, 100, 200],
            spreads: vec![0.1, 0.1, 0.2, 1.0, 1.5, 2.0],
            duplicate_fractions: vec![0.6, 0.6, 0.4, 0.0, 0.0, 0.0],
            dimension: 16,
            seed,
            n: 1000,
            centers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_clusters;
        if k == 0 || self.dimension == 0 {
            return Err(Error::InvalidSpec("need at least one cluster and one dimension".into()));
        }
        if self.sizes.len() != k || self.spreads.len() != k || self.duplicate_fractions.len() != k {
            return Err(Error::InvalidSpec(format!("per-cluster lists must have {k} entries")));
        }
        if self.sizes.iter().sum::<usize>() != self.n {
            return Err(Error::InvalidSpec(format!("sizes sum to {}, n is {}", self.sizes.iter().sum::<usize>(), self.n)));
        }
        if self.sizes.contains(&0) {
            return Err(Error::InvalidSpec("cluster sizes must be positive".into()));
        }
        if self.spreads.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidSpec("spreads must be positive".into()));
        }
        if self.duplicate_fractions.iter().any(|&f| !(0.0..1.0).contains(&f)) {
            return Err(Error::InvalidSpec("duplicate fractions must lie in [0, 1)".into()));
        }
        if let Some(c) = &self.centers {
            if c.len() != k || c.iter().any(|row| row.len() != self.dimension || row.iter().any(|v| !v.is_finite())) {
                return Err(Error::InvalidSpec(format!("centers must be {k} finite rows of length {}", self.dimension)));
            }
        }
        Ok(())
    }

    /// Minimum distance between drawn centres.
    pub fn center_separation(&self) -> f64 {
        10.0 * self.spreads.iter().copied().fold(0.0, f64::max)
    }
}

/// Generated samples in shuffled order with their generating cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub embeddings: EmbeddingMatrix,
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
}

const CENTER_ATTEMPTS: usize = 100_000;

fn gaussian(rng: &mut Stream, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn draw_centers(spec: &SynthSpec, rng: &mut Stream) -> Result<Vec<Vec<f64>>> {
    let sep = spec.center_separation();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.n_clusters);
    for _ in 0..CENTER_ATTEMPTS {
        if centers.len() == spec.n_clusters {
            break;
        }
        let c: Vec<f64> = (0..spec.dimension).map(|_| rng.random_range(-sep..sep)).collect();
        if centers.iter().all(|o| crate::model::euclidean(o, &c) >= sep) {
            centers.push(c);
        }
    }
    if centers.len() < spec.n_clusters {
        return Err(Error::InvalidSpec("could not place well-separated centres".into()));
    }
    Ok(centers)
}

/// Draws the dataset. Within cluster `i`, `round(duplicate_fraction * size)`
/// points (at least one point stays original) are copies of an earlier point of
/// the same cluster displaced uniformly within a ball of radius `spread / 100`.
/// Values are rounded to single precision so that a written file reads back
/// identical.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let d = spec.dimension;
    let mut rng = seeded_rng(spec.seed, STREAM_SYNTH);
    let centers = match &spec.centers {
        Some(c) => c.clone(),
        None => draw_centers(spec, &mut rng)?,
    };
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(spec.n);
    for (c, center) in centers.iter().enumerate() {
        let size = spec.sizes[c];
        let sigma = spec.spreads[c];
        let copies = ((spec.duplicate_fractions[c] * size as f64).round() as usize).min(size - 1);
        let start = rows.len();
        for _ in 0..size - copies {
            let z = gaussian(&mut rng, d);
            rows.push((center.iter().zip(&z).map(|(m, z)| m + sigma * z).collect(), c));
        }
        let eps = sigma / 100.0;
        for _ in 0..copies {
            let source = rng.random_range(start..rows.len());
            let dir = gaussian(&mut rng, d);
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let radius = eps * rng.random::<f64>().powf(1.0 / d as f64);
            let point = rows[source].0.iter().zip(&dir).map(|(x, u)| x + radius * u / norm).collect();
            rows.push((point, c));
        }
    }
    rows.shuffle(&mut rng);
    let labels = rows.iter().map(|(_, l)| *l).collect();
    let values: Vec<f64> = rows.into_iter().flat_map(|(r, _)| r).collect();
    let embeddings = round_to_storage(&EmbeddingMatrix::new(spec.n, d, values)?);
    Ok(SynthData { embeddings, labels, centers })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub selector: Selector,
    pub trial: usize,
    pub seed: u64,
    pub objective: f64,
    pub budget: usize,
    /// Kept samples per generating cluster.
    pub keep_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectorSummary {
    pub selector: Selector,
    pub mean: f64,
    /// Sample standard deviation (zero for a single trial).
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Sorted by selector, then trial.
    pub rows: Vec<TrialRow>,
    pub summary: Vec<SelectorSummary>,
}

impl Comparison {
    pub fn objective(&self, selector: Selector, trial: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.selector == selector && r.trial == trial).map(|r| r.objective)
    }

    pub fn mean(&self, selector: Selector) -> Option<f64> {
        self.summary.iter().find(|s| s.selector == selector).map(|s| s.mean)
    }

    /// `selector,trial,J,budget,seed`
    pub fn results_table(&self) -> String {
        let mut out = String::from("selector,trial,J,budget,seed\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.selector, r.trial, r.objective, r.budget, r.seed));
        }
        out
    }

    /// `selector,trial,cluster,kept`
    pub fn keep_count_table(&self) -> String {
        let mut out = String::from("selector,trial,cluster,kept\n");
        for r in &self.rows {
            for (c, k) in r.keep_counts.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", r.selector, r.trial, c, k));
            }
        }
        out
    }

    /// `selector,mean_J,std_J`
    pub fn summary_table(&self) -> String {
        let mut out = String::from("selector,mean_J,std_J\n");
        for s in &self.summary {
            out.push_str(&format!("{},{},{}\n", s.selector, s.mean, s.std));
        }
        out
    }
}

/// Seed of trial `t`: the spec seed offset by the trial number.
pub fn trial_seed(spec: &SynthSpec, trial: usize) -> u64 {
    spec.seed.wrapping_add(trial as u64)
}

/// For each trial, regenerates the data under the trial seed, runs every
/// selector to the budget and scores each selection with the whole-dataset
/// density objective. One bandwidth per trial, from the raw data, is shared by
/// all selectors.
pub fn run_comparison(spec: &SynthSpec, config: &PruneConfig, selectors: &[Selector], trials: usize) -> Result<Comparison> {
    if selectors.is_empty() {
        return Err(Error::InvalidConfig("no selectors given".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    let mut selectors = selectors.to_vec();
    selectors.sort();
    selectors.dedup();
    let per_trial: Vec<Vec<TrialRow>> = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<Vec<TrialRow>> {
            let seed = trial_seed(spec, trial);
            let data = generate(&SynthSpec { seed, ..spec.clone() })?;
            let config = PruneConfig { seed, ..config.clone() };
            let checked = validate_config(&config, data.embeddings.n())?;
            let geometry = Geometry::new(&data.embeddings, None, config.normalize)?;
            let h = median_bandwidth(&data.embeddings, DEFAULT_BANDWIDTH_SUBSAMPLE, seed)?;
            selectors
                .iter()
                .map(|&selector| {
                    let kept = select(selector, &geometry, &checked)?;
                    let mut keep_counts = vec![0; spec.n_clusters];
                    for &i in &kept {
                        keep_counts[data.labels[i]] += 1;
                    }
                    Ok(TrialRow {
                        selector,
                        trial,
                        seed,
                        objective: objective_j(&data.embeddings, &kept, h)?,
                        budget: kept.len(),
                        keep_counts,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<TrialRow> = per_trial.into_iter().flatten().collect();
    rows.sort_by_key(|r| (r.selector, r.trial));
    let summary = selectors
        .iter()
        .map(|&selector| {
            let js: Vec<f64> = rows.iter().filter(|r| r.selector == selector).map(|r| r.objective).collect();
            let mean = js.iter().sum::<f64>() / js.len() as f64;
            let std = if js.len() > 1 {
                (js.iter().map(|j| (j - mean).powi(2)).sum::<f64>() / (js.len() - 1) as f64).sqrt()
            } else {
                0.0
            };
            SelectorSummary { selector, mean, std }
        })
        .collect();
    Ok(Comparison { rows, summary })
}
