//! Shared domain types: embeddings, run configuration and selection state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row index into the embedding matrix, optionally paired with a caller-supplied id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleId {
    pub index: usize,
    pub external_id: Option<String>,
}

impl SampleId {
    /// Dense ids for `n` samples; `external` must be empty or have length `n`.
    pub fn dense(n: usize, external: &[String]) -> Vec<SampleId> {
        (0..n)
            .map(|index| SampleId { index, external_id: external.get(index).cloned() })
            .collect()
    }
}

/// `n × d` feature matrix, row-major. Values are held in double precision and are
/// always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    values: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::DegenerateData(format!("embedding shape {n}x{d}")));
        }
        if values.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, found: values.len() });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row: pos / d, col: pos % d });
        }
        Ok(Self { n, d, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: bad.len() });
        }
        Self::new(n, d, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        euclidean(self.row(i), self.row(j))
    }

    /// Copy with every nonzero row scaled to unit L2 norm. Zero rows stay zero.
    pub fn l2_normalized(&self) -> Self {
        let mut values = self.values.clone();
        for row in values.chunks_exact_mut(self.d) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Self { n: self.n, d: self.d, values }
    }

    /// Rows `indices` gathered into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.d, values)
    }
}

pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalMode {
    /// Loss sums over kept and pruned members.
    #[default]
    Sum,
    /// Loss means over kept and pruned members.
    Mean,
}

/// Where the first-stage threshold is searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialMode {
    /// One threshold over the whole dataset.
    #[default]
    Global,
    /// One shared threshold applied inside each cluster separately.
    ClusterUniform,
}

pub const DEFAULT_CHURN_TARGET: f64 = 0.075;
pub const DEFAULT_K: usize = 10;
pub const DEFAULT_MAX_ITERS: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;

fn default_k() -> usize {
    DEFAULT_K
}
fn default_alpha() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}
fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}

/// Algorithmic parameters of a pruning run. Unknown keys are rejected when
/// deserializing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    #[serde(default = "default_k")]
    pub k_clusters: usize,
    /// Absolute number of samples to keep.
    #[serde(default)]
    pub budget_m: Option<usize>,
    /// Fraction of samples to prune; alternative to `budget_m`.
    #[serde(default)]
    pub prune_ratio: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha_plus: f64,
    #[serde(default = "default_alpha")]
    pub alpha_minus: f64,
    #[serde(default)]
    pub beta: Option<f64>,
    /// Fraction of the budget the adaptation should move; used when `beta` is unset.
    #[serde(default)]
    pub churn_target: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Kernel width of the density proxy; median pairwise distance when unset.
    #[serde(default)]
    pub bandwidth: Option<f64>,
    #[serde(default)]
    pub signal_mode: SignalMode,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default)]
    pub initial_mode: InitialMode,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            k_clusters: DEFAULT_K,
            budget_m: None,
            prune_ratio: None,
            alpha_plus: 1.0,
            alpha_minus: 1.0,
            beta: None,
            churn_target: None,
            seed: 0,
            bandwidth: None,
            signal_mode: SignalMode::Sum,
            normalize: true,
            initial_mode: InitialMode::Global,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }
}

/// How the adaptation strength is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strength {
    Beta(f64),
    Churn(f64),
}

/// A [`PruneConfig`] whose cross-field constraints hold for a dataset of `n` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckedConfig {
    pub config: PruneConfig,
    pub n: usize,
    /// Absolute keep budget.
    pub m: usize,
    pub strength: Strength,
}

impl CheckedConfig {
    pub fn prune_ratio(&self) -> f64 {
        (self.n - self.m) as f64 / self.n as f64
    }
}

pub fn validate_config(config: &PruneConfig, n: usize) -> Result<CheckedConfig> {
    if n == 0 {
        return Err(Error::DegenerateData("empty dataset".into()));
    }
    let m = match (config.budget_m, config.prune_ratio) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidConfig("set either budget_m or prune_ratio, not both".into()))
        }
        (None, None) => return Err(Error::InvalidConfig("one of budget_m or prune_ratio is required".into())),
        (Some(m), None) => m,
        (None, Some(r)) => {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!("prune_ratio {r} outside [0, 1]")));
            }
            (n as f64 * (1.0 - r)).round() as usize
        }
    };
    if m < 1 || m > n {
        return Err(Error::BudgetOutOfRange { budget: m, min: 1, max: n });
    }
    if config.k_clusters < 1 {
        return Err(Error::InvalidConfig("k_clusters must be >= 1".into()));
    }
    for (name, value) in [("alpha_plus", config.alpha_plus), ("alpha_minus", config.alpha_minus)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonPositiveScale { name, value });
        }
    }
    let strength = match (config.beta, config.churn_target) {
        (Some(_), Some(_)) => return Err(Error::AmbiguousBeta),
        (Some(b), None) if !(b >= 0.0 && b.is_finite()) => {
            return Err(Error::InvalidConfig(format!("beta {b} must be finite and >= 0")))
        }
        (Some(b), None) => Strength::Beta(b),
        (None, Some(c)) if !(c > 0.0 && c <= 0.5) => {
            return Err(Error::InvalidConfig(format!("churn_target {c} outside (0, 0.5]")))
        }
        (None, Some(c)) => Strength::Churn(c),
        (None, None) => Strength::Churn(DEFAULT_CHURN_TARGET),
    };
    if let Some(h) = config.bandwidth {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::NonPositiveBandwidth(h));
        }
    }
    if !(config.tol >= 0.0) || config.max_iters == 0 {
        return Err(Error::InvalidConfig("tol must be >= 0 and max_iters >= 1".into()));
    }
    Ok(CheckedConfig { config: config.clone(), n, m, strength })
}

/// Which stage last decided a sample's status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "init")]
    Initial,
    #[serde(rename = "final")]
    Final,
}

/// Kept/pruned flags for every sample plus per-cluster pruning ratios.
///
/// The ratios are always derived from the flags, so `gamma[i]` equals
/// `pruned(i) / size(i)` for the cluster labels the state was built with.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneState {
    kept: Vec<bool>,
    provenance: Vec<Stage>,
    gamma: Vec<f64>,
}

impl PruneState {
    pub fn new(kept: Vec<bool>, provenance: Vec<Stage>, labels: &[usize], k: usize) -> Result<Self> {
        if kept.len() != labels.len() || provenance.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: labels.len(), found: kept.len() });
        }
        let gamma = cluster_gamma(&kept, labels, k)?;
        Ok(Self { kept, provenance, gamma })
    }

    /// Stage-one state: every sample's status comes from the initial pruning.
    pub fn initial(kept: Vec<bool>, labels: &[usize], k: usize) -> Result<Self> {
        let provenance = vec![Stage::Initial; kept.len()];
        Self::new(kept, provenance, labels, k)
    }

    pub fn from_kept_indices(n: usize, kept: &[usize], labels: &[usize], k: usize) -> Result<Self> {
        Self::initial(mask(n, kept), labels, k)
    }

    pub fn n(&self) -> usize {
        self.kept.len()
    }

    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    pub fn is_kept(&self, i: usize) -> bool {
        self.kept[i]
    }

    pub fn kept_indices(&self) -> Vec<usize> {
        indices(&self.kept)
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn provenance(&self) -> &[Stage] {
        &self.provenance
    }

    /// `Final` once any sample was re-decided by the adaptive stage.
    pub fn stage(&self) -> Stage {
        self.provenance.iter().copied().max().unwrap_or(Stage::Initial)
    }

    /// Recomputes the ratios from the flags and compares bit-for-bit.
    pub fn is_consistent(&self, labels: &[usize]) -> bool {
        cluster_gamma(&self.kept, labels, self.gamma.len()).is_ok_and(|g| g == self.gamma)
    }

    /// Kept count per cluster.
    pub fn kept_per_cluster(&self, labels: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.gamma.len()];
        for (&kept, &label) in self.kept.iter().zip(labels) {
            if kept {
                counts[label] += 1;
            }
        }
        counts
    }
}

pub fn cluster_sizes(labels: &[usize], k: usize) -> Vec<usize> {
    let mut sizes = vec![0; k];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}

fn cluster_gamma(kept: &[bool], labels: &[usize], k: usize) -> Result<Vec<f64>> {
    let mut size = vec![0usize; k];
    let mut pruned = vec![0usize; k];
    for (&kept, &label) in kept.iter().zip(labels) {
        if label >= k {
            return Err(Error::DimensionMismatch { expected: k, found: label + 1 });
        }
        size[label] += 1;
        if !kept {
            pruned[label] += 1;
        }
    }
    Ok(size
        .iter()
        .zip(&pruned)
        .map(|(&s, &p)| if s == 0 { 0.0 } else { p as f64 / s as f64 })
        .collect())
}

pub fn mask(n: usize, indices: &[usize]) -> Vec<bool> {
    let mut m = vec![false; n];
    for &i in indices {
        m[i] = true;
    }
    m
}

pub fn indices(mask: &[bool]) -> Vec<usize> {
    mask.iter().enumerate().filter_map(|(i, &k)| k.then_some(i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(m: usize) -> PruneConfig {
        PruneConfig { k_clusters: 10, budget_m: Some(m), beta: Some(0.1), ..Default::default() }
    }

    #[test]
    fn accepts_valid_config() {
        let checked = validate_config(&cfg(60), 100).unwrap();
        assert_eq!(checked.m, 60);
        assert_eq!(checked.strength, Strength::Beta(0.1));
        assert!((checked.prune_ratio() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn rejects_zero_budget() {
        assert!(matches!(validate_config(&cfg(0), 100), Err(Error::BudgetOutOfRange { .. })));
        assert!(matches!(validate_config(&cfg(101), 100), Err(Error::BudgetOutOfRange { .. })));
    }

    #[test]
    fn rejects_both_beta_and_churn() {
        let c = PruneConfig { churn_target: Some(0.075), ..cfg(60) };
        assert!(matches!(validate_config(&c, 100), Err(Error::AmbiguousBeta)));
    }

    #[test]
    fn rejects_nonpositive_alpha() {
        let c = PruneConfig { alpha_minus: 0.0, ..cfg(60) };
        assert!(matches!(validate_config(&c, 100), Err(Error::NonPositiveScale { name: "alpha_minus", .. })));
    }

    #[test]
    fn ratio_budget_rounds_to_count() {
        let c = PruneConfig { budget_m: None, prune_ratio: Some(0.4), ..cfg(0) };
        assert_eq!(validate_config(&c, 1000).unwrap().m, 600);
        let c = PruneConfig { budget_m: None, prune_ratio: Some(0.25), ..cfg(0) };
        assert_eq!(validate_config(&c, 10).unwrap().m, 8);
    }

    #[test]
    fn default_strength_is_churn() {
        let c = PruneConfig { beta: None, ..cfg(5) };
        assert_eq!(validate_config(&c, 10).unwrap().strength, Strength::Churn(DEFAULT_CHURN_TARGET));
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let err = serde_json::from_str::<PruneConfig>(r#"{"k_clusters": 3, "betta": 0.1}"#);
        assert!(err.is_err());
    }

    #[test]
    fn gamma_tracks_flags() {
        let labels = [0, 0, 0, 1, 1];
        let state = PruneState::initial(vec![true, false, false, true, true], &labels, 2).unwrap();
        assert_eq!(state.gamma(), &[2.0 / 3.0, 0.0]);
        assert!(state.is_consistent(&labels));
        assert!(!state.is_consistent(&[0, 0, 1, 1, 1]));
        assert_eq!(state.stage(), Stage::Initial);
        assert_eq!(state.kept_per_cluster(&labels), vec![1, 2]);
    }

    #[test]
    fn embedding_rejects_nonfinite() {
        let err = EmbeddingMatrix::new(2, 2, vec![0.0, 1.0, f64::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue { row: 1, col: 0 }));
    }

    #[test]
    fn normalization_leaves_zero_rows() {
        let m = EmbeddingMatrix::from_rows(&[vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let u = m.l2_normalized();
        assert_eq!(u.row(0), &[0.6, 0.8]);
        assert_eq!(u.row(1), &[0.0, 0.0]);
    }
}
