//! Loss-informed, per-cluster adjustment of the stage-one pruning ratios.
//!
//! Per cluster, the aggregated proxy loss of kept members minus that of pruned
//! members gives a signed signal: positive means the kept part is already the
//! harder part and the cluster can lose more, negative means pruning removed
//! the informative samples. Signals are scaled by sign, rescaled to unit maximum
//! magnitude and centred by cluster-size-weighted mean, so that moving every
//! ratio by `beta * a_i` leaves the total kept count unchanged before clipping.
//! Integer keep counts are then apportioned to match the budget exactly.

use crate::clustering::ClusterAssignment;
use crate::density::{select_k_from_cluster, DedupOrder};
use crate::error::{Error, Result};
use crate::model::{CheckedConfig, EmbeddingMatrix, PruneState, SignalMode, Stage, Strength};
use crate::proxy::LossTable;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLossSummary {
    pub size: usize,
    pub kept_count: usize,
    pub pruned_count: usize,
    /// Sum or mean of kept-member losses; `None` when no member is kept.
    pub kept_loss: Option<f64>,
    /// Sum or mean of pruned-member losses; `None` when nothing was pruned.
    pub pruned_loss: Option<f64>,
    /// Kept minus pruned aggregate, zero when either side is empty.
    pub delta: f64,
    pub scaled_delta: f64,
}

pub fn differential_loss(
    losses: &LossTable,
    state: &PruneState,
    assignment: &ClusterAssignment,
    mode: SignalMode,
) -> Result<Vec<ClusterLossSummary>> {
    let n = state.n();
    if assignment.labels().len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: assignment.labels().len() });
    }
    if losses.len() < n {
        return Err(Error::MissingLoss(losses.len()));
    }
    let k = assignment.k();
    let mut kept_sum = vec![0.0; k];
    let mut pruned_sum = vec![0.0; k];
    let mut kept_count = vec![0usize; k];
    let mut pruned_count = vec![0usize; k];
    for (i, &label) in assignment.labels().iter().enumerate() {
        if state.is_kept(i) {
            kept_sum[label] += losses.loss(i);
            kept_count[label] += 1;
        } else {
            pruned_sum[label] += losses.loss(i);
            pruned_count[label] += 1;
        }
    }
    let aggregate = |sum: f64, count: usize| -> Option<f64> {
        (count > 0).then(|| match mode {
            SignalMode::Sum => sum,
            SignalMode::Mean => sum / count as f64,
        })
    };
    Ok((0..k)
        .map(|c| {
            let kept_loss = aggregate(kept_sum[c], kept_count[c]);
            let pruned_loss = aggregate(pruned_sum[c], pruned_count[c]);
            let delta = match (kept_loss, pruned_loss) {
                (Some(a), Some(b)) => a - b,
                _ => 0.0,
            };
            ClusterLossSummary {
                size: kept_count[c] + pruned_count[c],
                kept_count: kept_count[c],
                pruned_count: pruned_count[c],
                kept_loss,
                pruned_loss,
                delta,
                scaled_delta: 0.0,
            }
        })
        .collect())
}

/// Multiplies positive signals by `alpha_plus` and the rest by `alpha_minus`.
pub fn scale_signals(summaries: &mut [ClusterLossSummary], alpha_plus: f64, alpha_minus: f64) -> Result<()> {
    for (name, value) in [("alpha_plus", alpha_plus), ("alpha_minus", alpha_minus)] {
        if !(value > 0.0) {
            return Err(Error::NonPositiveScale { name, value });
        }
    }
    for s in summaries {
        s.scaled_delta = if s.delta > 0.0 { alpha_plus * s.delta } else { alpha_minus * s.delta };
    }
    Ok(())
}

/// Unit-max rescale followed by size-weighted centring, so that
/// `Σ sizes[i] * a[i] == 0` up to rounding. All zeros in, all zeros out.
pub fn normalize_signals(scaled: &[f64], sizes: &[usize]) -> Vec<f64> {
    let peak = scaled.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
    if peak == 0.0 {
        return vec![0.0; scaled.len()];
    }
    let unit: Vec<f64> = scaled.iter().map(|s| s / peak).collect();
    center_signals(&unit, sizes)
}

/// Subtracts the cluster-size-weighted mean, so `sum(size_i * a_i) = 0`.
pub fn center_signals(unit: &[f64], sizes: &[usize]) -> Vec<f64> {
    let n: usize = sizes.iter().sum();
    let weighted: f64 = unit.iter().zip(sizes).map(|(u, &s)| s as f64 * u).sum::<f64>() / n as f64;
    unit.iter().map(|u| u - weighted).collect()
}

/// `clip(gamma + beta * a, 0, 1)` per cluster.
pub fn adjust_ratios(gamma: &[f64], adjustments: &[f64], beta: f64) -> Vec<f64> {
    gamma.iter().zip(adjustments).map(|(g, a)| (g + beta * a).clamp(0.0, 1.0)).collect()
}

/// Fractional keep targets `sizes[i] * (1 - gamma'[i])`, with any residual
/// against `m` spread in proportion to each cluster's room toward the bound
/// it is moving to.
pub fn redistributed_targets(gamma_prime: &[f64], sizes: &[usize], m: usize) -> Result<Vec<f64>> {
    let n: usize = sizes.iter().sum();
    if m > n {
        return Err(Error::InfeasibleBudget { m, n });
    }
    if gamma_prime.len() != sizes.len() {
        return Err(Error::DimensionMismatch { expected: sizes.len(), found: gamma_prime.len() });
    }
    let mut targets: Vec<f64> =
        gamma_prime.iter().zip(sizes).map(|(g, &s)| s as f64 * (1.0 - g.clamp(0.0, 1.0))).collect();
    let residual = m as f64 - targets.iter().sum::<f64>();
    if residual != 0.0 {
        let slack: Vec<f64> = if residual > 0.0 {
            targets.iter().zip(sizes).map(|(t, &s)| s as f64 - t).collect()
        } else {
            targets.clone()
        };
        let total: f64 = slack.iter().sum();
        if total > 0.0 {
            for ((t, sl), &s) in targets.iter_mut().zip(&slack).zip(sizes) {
                *t = (*t + residual * sl / total).clamp(0.0, s as f64);
            }
        }
    }
    Ok(targets)
}

/// Integer keep counts summing to `m`: redistributed targets rounded by largest
/// remainder, ties to the lower cluster index.
pub fn apportion_counts(gamma_prime: &[f64], sizes: &[usize], m: usize) -> Result<Vec<usize>> {
    let targets = redistributed_targets(gamma_prime, sizes, m)?;
    let mut counts: Vec<usize> =
        targets.iter().zip(sizes).map(|(t, &s)| (t.floor() as usize).min(s)).collect();
    let frac: Vec<f64> = targets.iter().zip(&counts).map(|(t, &c)| t - c as f64).collect();
    let mut by_remainder: Vec<usize> = (0..sizes.len()).collect();
    by_remainder.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]).then(a.cmp(&b)));
    let mut placed: usize = counts.iter().sum();
    while placed < m {
        let before = placed;
        for &c in &by_remainder {
            if placed == m {
                break;
            }
            if counts[c] < sizes[c] {
                counts[c] += 1;
                placed += 1;
            }
        }
        debug_assert!(placed > before);
    }
    while placed > m {
        for &c in by_remainder.iter().rev() {
            if placed == m {
                break;
            }
            if counts[c] > 0 {
                counts[c] -= 1;
                placed -= 1;
            }
        }
    }
    Ok(counts)
}

/// Fraction of the budget that moves between clusters at strength `beta`.
pub fn churn(gamma: &[f64], adjustments: &[f64], sizes: &[usize], m: usize, beta: f64) -> Result<f64> {
    let base = apportion_counts(gamma, sizes, m)?;
    let moved = apportion_counts(&adjust_ratios(gamma, adjustments, beta), sizes, m)?;
    Ok(churn_between(&base, &moved, m))
}

pub fn churn_between(before: &[usize], after: &[usize], m: usize) -> f64 {
    let moved: usize = before.iter().zip(after).map(|(&a, &b)| a.abs_diff(b)).sum();
    moved as f64 / (2 * m) as f64
}

/// Smallest strength at which every adjusted ratio sits on its clip bound.
pub fn beta_max(gamma: &[f64], adjustments: &[f64]) -> f64 {
    gamma
        .iter()
        .zip(adjustments)
        .filter(|(_, &a)| a != 0.0)
        .map(|(&g, &a)| if a > 0.0 { (1.0 - g) / a } else { g / -a })
        .fold(0.0, f64::max)
}

/// Smallest `beta` whose churn reaches `churn_target`, or [`beta_max`] when the
/// target is out of reach.
///
/// Churn is a step function of `beta`; the search halves the bracket until its
/// ends are adjacent floats and returns the upper end, which is the first
/// representable strength on the far side of the step.
pub fn solve_beta_for_churn(
    gamma: &[f64],
    adjustments: &[f64],
    sizes: &[usize],
    m: usize,
    churn_target: f64,
) -> Result<f64> {
    if adjustments.iter().all(|&a| a == 0.0) {
        return Err(Error::NoSignal);
    }
    if !(churn_target > 0.0 && churn_target <= 0.5) {
        return Err(Error::InvalidConfig(format!("churn_target {churn_target} outside (0, 0.5]")));
    }
    let base = apportion_counts(gamma, sizes, m)?;
    let churn_at = |beta: f64| -> Result<f64> {
        let moved = apportion_counts(&adjust_ratios(gamma, adjustments, beta), sizes, m)?;
        Ok(churn_between(&base, &moved, m))
    };
    let max = beta_max(gamma, adjustments);
    if churn_at(max)? < churn_target {
        return Ok(max);
    }
    let (mut lo, mut hi) = (0.0f64, max);
    loop {
        let mid = lo + (hi - lo) / 2.0;
        if mid <= lo || mid >= hi {
            break;
        }
        if churn_at(mid)? >= churn_target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Everything stage two computes, in cluster order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adaptation {
    pub summaries: Vec<ClusterLossSummary>,
    pub adjustments: Vec<f64>,
    pub beta: f64,
    pub gamma: Vec<f64>,
    pub gamma_prime: Vec<f64>,
    pub initial_counts: Vec<usize>,
    pub keep_counts: Vec<usize>,
}

impl Adaptation {
    pub fn churn(&self, m: usize) -> f64 {
        churn_between(&self.initial_counts, &self.keep_counts, m)
    }
}

/// Differential loss → scaling → normalization → strength → clipped ratios →
/// integer keep counts.
pub fn adapt(
    state: &PruneState,
    losses: &LossTable,
    assignment: &ClusterAssignment,
    config: &CheckedConfig,
) -> Result<Adaptation> {
    let cfg = &config.config;
    let mut summaries = differential_loss(losses, state, assignment, cfg.signal_mode)?;
    scale_signals(&mut summaries, cfg.alpha_plus, cfg.alpha_minus)?;
    let sizes = assignment.sizes();
    let scaled: Vec<f64> = summaries.iter().map(|s| s.scaled_delta).collect();
    let adjustments = normalize_signals(&scaled, &sizes);
    let gamma = state.gamma().to_vec();
    let beta = match config.strength {
        Strength::Beta(b) => b,
        Strength::Churn(_) if adjustments.iter().all(|&a| a == 0.0) => 0.0,
        Strength::Churn(target) => solve_beta_for_churn(&gamma, &adjustments, &sizes, config.m, target)?,
    };
    let gamma_prime = adjust_ratios(&gamma, &adjustments, beta);
    let initial_counts = state.kept_per_cluster(assignment.labels());
    let keep_counts = if beta == 0.0 { initial_counts.clone() } else { apportion_counts(&gamma_prime, &sizes, config.m)? };
    Ok(Adaptation { summaries, adjustments, beta, gamma, gamma_prime, initial_counts, keep_counts })
}

/// Final selection: clusters whose keep count changed are re-pruned from their
/// full membership; the rest keep their stage-one members.
pub fn reselect(
    emb: &EmbeddingMatrix,
    assignment: &ClusterAssignment,
    initial: &PruneState,
    keep_counts: &[usize],
    order: &DedupOrder,
) -> Result<PruneState> {
    let mut kept = initial.kept().to_vec();
    let mut provenance = initial.provenance().to_vec();
    let current = initial.kept_per_cluster(assignment.labels());
    for (c, members) in assignment.members().iter().enumerate() {
        if keep_counts[c] == current[c] {
            continue;
        }
        let chosen = select_k_from_cluster(emb, members, keep_counts[c], order)?;
        for &i in members {
            kept[i] = false;
            provenance[i] = Stage::Final;
        }
        for i in chosen {
            kept[i] = true;
        }
    }
    PruneState::new(kept, provenance, assignment.labels(), assignment.k())
}
