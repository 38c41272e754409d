//! Greedy threshold de-duplication and exact budget targeting.
//!
//! The greedy rule scans candidates in a fixed [`DedupOrder`] and keeps a sample
//! iff its distance to every sample kept so far is strictly greater than `tau`.
//! The kept set only changes at values of `tau` equal to the distance between two
//! currently kept samples: below that, every comparison the scan makes resolves
//! the same way. Walking these events in increasing `tau` enumerates the exact
//! step function of the kept set, which is what [`find_threshold_for_budget`]
//! uses instead of a numeric search. The kept count is not monotone in `tau` in
//! general (a sample dropped at a larger radius can unblock two later ones), so
//! the search stops at the first event whose successor would undershoot the
//! budget.

use rayon::prelude::*;

use crate::clustering::ClusterAssignment;
use crate::error::{Error, Result};
use crate::model::{euclidean, EmbeddingMatrix, PruneState};

/// Candidate sets up to this size get a precomputed distance matrix.
pub const DISTANCE_CACHE_LIMIT: usize = 3000;

/// Default size limit for [`kept_count_curve`].
pub const DEFAULT_CURVE_LIMIT: usize = 2000;

/// Permutation of `[0, n)` giving the greedy scan order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DedupOrder {
    order: Vec<usize>,
    rank: Vec<usize>,
}

impl DedupOrder {
    pub fn ascending(n: usize) -> Self {
        Self { order: (0..n).collect(), rank: (0..n).collect() }
    }

    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut rank = vec![usize::MAX; n];
        for (pos, &i) in order.iter().enumerate() {
            if i >= n || rank[i] != usize::MAX {
                return Err(Error::InvalidConfig(format!("scan order is not a permutation of 0..{n}")));
            }
            rank[i] = pos;
        }
        Ok(Self { order, rank })
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.order
    }

    pub fn is_ascending(&self) -> bool {
        self.order.iter().enumerate().all(|(p, &i)| p == i)
    }

    /// `candidates` sorted by scan position.
    pub fn arrange(&self, candidates: &[usize]) -> Vec<usize> {
        let mut out = candidates.to_vec();
        out.sort_unstable_by_key(|&i| self.rank[i]);
        out
    }
}

/// Pairwise distances over a candidate list, addressed by local position.
pub(crate) struct Geometry<'a> {
    emb: &'a EmbeddingMatrix,
    ids: Vec<usize>,
    cache: Option<Vec<f64>>,
}

impl<'a> Geometry<'a> {
    pub(crate) fn new(emb: &'a EmbeddingMatrix, ids: Vec<usize>) -> Self {
        let len = ids.len();
        let cache = (len <= DISTANCE_CACHE_LIMIT).then(|| {
            let mut cache = vec![0.0; len * len];
            cache.par_chunks_mut(len.max(1)).enumerate().for_each(|(a, row)| {
                for (b, slot) in row.iter_mut().enumerate() {
                    *slot = emb.distance(ids[a], ids[b]);
                }
            });
            cache
        });
        Self { emb, ids, cache }
    }

    pub(crate) fn len(&self) -> usize {
        self.ids.len()
    }

    pub(crate) fn id(&self, local: usize) -> usize {
        self.ids[local]
    }

    pub(crate) fn dist(&self, a: usize, b: usize) -> f64 {
        match &self.cache {
            Some(c) => c[a * self.ids.len() + b],
            None => euclidean(self.emb.row(self.ids[a]), self.emb.row(self.ids[b])),
        }
    }
}

/// Result of one greedy scan over a geometry whose ids are in scan order.
#[derive(Debug, Clone)]
struct Scan {
    /// Kept local positions, increasing.
    kept: Vec<usize>,
    /// For each kept entry, distance to the nearest kept sample scanned before it.
    nearest_earlier: Vec<f64>,
}

impl Scan {
    fn count(&self) -> usize {
        self.kept.len()
    }

    /// Smallest distance between two kept samples and the first kept slot realizing it.
    fn next_event(&self) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (slot, &d) in self.nearest_earlier.iter().enumerate() {
            if d.is_finite() && best.is_none_or(|(b, _)| d < b) {
                best = Some((d, slot));
            }
        }
        best
    }
}

/// Runs the greedy rule from local position `start`, reusing the first
/// `keep_prefix` entries of `prefix`.
fn scan_from(geom: &Geometry, tau: f64, prefix: Option<(&Scan, usize)>) -> Scan {
    let (mut kept, mut nearest_earlier, start) = match prefix {
        Some((scan, slots)) => {
            let start = scan.kept.get(slots).copied().unwrap_or(geom.len());
            (scan.kept[..slots].to_vec(), scan.nearest_earlier[..slots].to_vec(), start)
        }
        None => (Vec::new(), Vec::new(), 0),
    };
    for p in start..geom.len() {
        let mut nearest = f64::INFINITY;
        let mut blocked = false;
        for &k in &kept {
            let d = geom.dist(k, p);
            if d <= tau {
                blocked = true;
                break;
            }
            nearest = nearest.min(d);
        }
        if !blocked {
            kept.push(p);
            nearest_earlier.push(nearest);
        }
    }
    Scan { kept, nearest_earlier }
}

fn check_candidates(emb: &EmbeddingMatrix, order: &DedupOrder, candidates: &[usize]) -> Result<()> {
    if order.len() != emb.n() {
        return Err(Error::DimensionMismatch { expected: emb.n(), found: order.len() });
    }
    if let Some(&bad) = candidates.iter().find(|&&i| i >= emb.n()) {
        return Err(Error::DimensionMismatch { expected: emb.n(), found: bad + 1 });
    }
    Ok(())
}

fn sorted_ids(geom: &Geometry, local: &[usize]) -> Vec<usize> {
    let mut ids: Vec<usize> = local.iter().map(|&l| geom.id(l)).collect();
    ids.sort_unstable();
    ids
}

/// Greedy de-duplication of `candidates` at radius `tau`. Returns kept sample
/// indices in ascending order.
pub fn greedy_dedup(
    emb: &EmbeddingMatrix,
    candidates: &[usize],
    tau: f64,
    order: &DedupOrder,
) -> Result<Vec<usize>> {
    if tau < 0.0 || tau.is_nan() {
        return Err(Error::NegativeThreshold(tau));
    }
    if candidates.is_empty() {
        return Err(Error::EmptyKeptSet);
    }
    check_candidates(emb, order, candidates)?;
    let geom = Geometry::new(emb, order.arrange(candidates));
    let scan = scan_from(&geom, tau, None);
    Ok(sorted_ids(&geom, &scan.kept))
}

/// One step of the kept-count step function: for `tau` from this breakpoint up to
/// the next one, the greedy rule keeps `kept` samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Breakpoint {
    pub tau: f64,
    pub kept: usize,
}

/// The exact kept-count step function over `tau ∈ [0, ∞)`. Consecutive entries
/// have different counts; the last entry keeps a single sample.
pub fn kept_count_curve(
    emb: &EmbeddingMatrix,
    candidates: &[usize],
    order: &DedupOrder,
    limit: usize,
) -> Result<Vec<Breakpoint>> {
    if candidates.is_empty() {
        return Err(Error::EmptyKeptSet);
    }
    if candidates.len() > limit {
        return Err(Error::TooLargeForExactCurve { size: candidates.len(), limit });
    }
    check_candidates(emb, order, candidates)?;
    let geom = Geometry::new(emb, order.arrange(candidates));
    let mut scan = scan_from(&geom, 0.0, None);
    let mut curve = vec![Breakpoint { tau: 0.0, kept: scan.count() }];
    while let Some((tau, slot)) = scan.next_event() {
        scan = scan_from(&geom, tau, Some((&scan, slot)));
        if curve.last().is_some_and(|b| b.kept != scan.count()) {
            curve.push(Breakpoint { tau, kept: scan.count() });
        }
    }
    Ok(curve)
}

/// Threshold and kept set hitting a budget exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSelection {
    /// Radius whose greedy kept set was trimmed to the budget.
    pub tau: f64,
    /// Size of the greedy kept set before trimming.
    pub greedy_kept: usize,
    /// Kept sample indices, ascending, of length `target_keep`.
    pub kept: Vec<usize>,
}

/// Finds the radius at which greedy de-duplication of `candidates` first comes
/// down to the budget, then trims the surplus.
///
/// Events are visited in increasing `tau`. The search stops at the first event
/// whose kept count equals `target_keep`, or at the last event before the count
/// would drop below it. If exact duplicates alone already push the count below
/// the budget at `tau = 0`, the full candidate set is trimmed instead.
pub fn find_threshold_for_budget(
    emb: &EmbeddingMatrix,
    candidates: &[usize],
    target_keep: usize,
    order: &DedupOrder,
) -> Result<ThresholdSelection> {
    if target_keep < 1 || target_keep > candidates.len() {
        return Err(Error::BudgetOutOfRange { budget: target_keep, min: 1, max: candidates.len() });
    }
    check_candidates(emb, order, candidates)?;
    let geom = Geometry::new(emb, order.arrange(candidates));
    let mut scan = scan_from(&geom, 0.0, None);
    let mut tau = 0.0;
    if scan.count() < target_keep {
        let all: Vec<usize> = (0..geom.len()).collect();
        let kept = trim_local(&geom, all, target_keep);
        return Ok(ThresholdSelection { tau, greedy_kept: geom.len(), kept: sorted_ids(&geom, &kept) });
    }
    while scan.count() > target_keep {
        let Some((next_tau, slot)) = scan.next_event() else { break };
        let next = scan_from(&geom, next_tau, Some((&scan, slot)));
        if next.count() < target_keep {
            break;
        }
        scan = next;
        tau = next_tau;
    }
    let greedy_kept = scan.count();
    let kept = trim_local(&geom, scan.kept, target_keep);
    Ok(ThresholdSelection { tau, greedy_kept, kept: sorted_ids(&geom, &kept) })
}

/// Removes the most redundant kept sample (smallest distance to its nearest kept
/// neighbour, larger sample index on ties) until `target_keep` remain.
pub fn trim_to_budget(emb: &EmbeddingMatrix, kept: &[usize], target_keep: usize) -> Result<Vec<usize>> {
    if target_keep > kept.len() {
        return Err(Error::BudgetOutOfRange { budget: target_keep, min: 0, max: kept.len() });
    }
    let mut ids = kept.to_vec();
    ids.sort_unstable();
    let geom = Geometry::new(emb, ids);
    let local = trim_local(&geom, (0..geom.len()).collect(), target_keep);
    Ok(sorted_ids(&geom, &local))
}

fn trim_local(geom: &Geometry, kept: Vec<usize>, target_keep: usize) -> Vec<usize> {
    if kept.len() <= target_keep {
        return kept;
    }
    let mut alive = kept;
    let nearest_of = |alive: &[usize], a: usize| -> (f64, usize) {
        let mut best = (f64::INFINITY, usize::MAX);
        for &b in alive {
            if b != a {
                let d = geom.dist(a, b);
                if d < best.0 {
                    best = (d, b);
                }
            }
        }
        best
    };
    let mut nearest: Vec<(f64, usize)> = alive.iter().map(|&a| nearest_of(&alive, a)).collect();
    while alive.len() > target_keep {
        let mut victim = 0;
        for slot in 1..alive.len() {
            let (d, v) = (nearest[slot].0, nearest[victim].0);
            if d < v || (d == v && geom.id(alive[slot]) > geom.id(alive[victim])) {
                victim = slot;
            }
        }
        let removed = alive.remove(victim);
        nearest.remove(victim);
        for slot in 0..alive.len() {
            if nearest[slot].1 == removed {
                nearest[slot] = nearest_of(&alive, alive[slot]);
            }
        }
    }
    alive
}

/// Picks `k` members of one cluster by the budgeted threshold search.
pub fn select_k_from_cluster(
    emb: &EmbeddingMatrix,
    members: &[usize],
    k: usize,
    order: &DedupOrder,
) -> Result<Vec<usize>> {
    if k > members.len() {
        return Err(Error::BudgetOutOfRange { budget: k, min: 0, max: members.len() });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if k == members.len() {
        let mut all = members.to_vec();
        all.sort_unstable();
        return Ok(all);
    }
    Ok(find_threshold_for_budget(emb, members, k, order)?.kept)
}

/// One radius shared by every group, with greedy de-duplication run inside each
/// group separately; the union is then trimmed to `target_keep`.
pub fn find_uniform_threshold_for_budget(
    emb: &EmbeddingMatrix,
    groups: &[Vec<usize>],
    target_keep: usize,
    order: &DedupOrder,
) -> Result<ThresholdSelection> {
    let total: usize = groups.iter().map(Vec::len).sum();
    if target_keep < 1 || target_keep > total {
        return Err(Error::BudgetOutOfRange { budget: target_keep, min: 1, max: total });
    }
    for g in groups {
        check_candidates(emb, order, g)?;
    }
    let geoms: Vec<Geometry> = groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| Geometry::new(emb, order.arrange(g)))
        .collect();
    let collect = |scans: &[Scan]| -> Vec<usize> {
        let mut ids: Vec<usize> = geoms
            .iter()
            .zip(scans)
            .flat_map(|(g, s)| s.kept.iter().map(|&l| g.id(l)))
            .collect();
        ids.sort_unstable();
        ids
    };
    let mut scans: Vec<Scan> = geoms.par_iter().map(|g| scan_from(g, 0.0, None)).collect();
    let count = |scans: &[Scan]| scans.iter().map(Scan::count).sum::<usize>();
    let mut tau = 0.0;
    let start = if count(&scans) < target_keep {
        let mut all: Vec<usize> = groups.concat();
        all.sort_unstable();
        all
    } else {
        while count(&scans) > target_keep {
            let next_tau = scans
                .iter()
                .filter_map(|s| s.next_event().map(|(d, _)| d))
                .fold(f64::INFINITY, f64::min);
            if !next_tau.is_finite() {
                break;
            }
            let next: Vec<Scan> = geoms
                .iter()
                .zip(&scans)
                .map(|(g, s)| match s.next_event() {
                    Some((d, slot)) if d == next_tau => scan_from(g, next_tau, Some((s, slot))),
                    _ => s.clone(),
                })
                .collect();
            if count(&next) < target_keep {
                break;
            }
            scans = next;
            tau = next_tau;
        }
        collect(&scans)
    };
    let greedy_kept = start.len();
    let kept = trim_to_budget(emb, &start, target_keep)?;
    Ok(ThresholdSelection { tau, greedy_kept, kept })
}

/// Stage-one pruning to exactly `m` kept samples, recording per-cluster ratios.
pub fn initial_prune(
    emb: &EmbeddingMatrix,
    assignment: &ClusterAssignment,
    m: usize,
    order: &DedupOrder,
) -> Result<(PruneState, ThresholdSelection)> {
    if assignment.labels().len() != emb.n() {
        return Err(Error::DimensionMismatch { expected: emb.n(), found: assignment.labels().len() });
    }
    let all: Vec<usize> = (0..emb.n()).collect();
    let selection = find_threshold_for_budget(emb, &all, m, order)?;
    let state = PruneState::from_kept_indices(emb.n(), &selection.kept, assignment.labels(), assignment.k())?;
    Ok((state, selection))
}

/// Stage-one variant with one shared radius applied within each cluster.
pub fn initial_prune_cluster_uniform(
    emb: &EmbeddingMatrix,
    assignment: &ClusterAssignment,
    m: usize,
    order: &DedupOrder,
) -> Result<(PruneState, ThresholdSelection)> {
    if assignment.labels().len() != emb.n() {
        return Err(Error::DimensionMismatch { expected: emb.n(), found: assignment.labels().len() });
    }
    let selection = find_uniform_threshold_for_budget(emb, &assignment.members(), m, order)?;
    let state = PruneState::from_kept_indices(emb.n(), &selection.kept, assignment.labels(), assignment.k())?;
    Ok((state, selection))
}
