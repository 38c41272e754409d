mod common;

use adadedup::adaptation::{
    adapt, apportion_counts, churn, differential_loss, normalize_signals, redistributed_targets, reselect,
    solve_beta_for_churn,
};
use adadedup::clustering::ClusterAssignment;
use adadedup::density::{initial_prune, DedupOrder};
use adadedup::model::SignalMode;
use adadedup::proxy::{LossSource, LossTable};
use adadedup::{validate_config, EmbeddingMatrix, PruneConfig, PruneState};
use common::*;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn differential_loss_matches_double_loop() {
    let mut r = rng(21);
    let emb = uniform_points(&mut r, 30, 2);
    let labels: Vec<usize> = (0..30).map(|i| i / 10).collect();
    let assignment = ClusterAssignment::from_labels(&emb, labels.clone(), 3).unwrap();
    let kept: Vec<usize> = (0..30).filter(|_| r.random_bool(0.5)).collect();
    let state = PruneState::from_kept_indices(30, &kept, &labels, 3).unwrap();
    let losses: Vec<f64> = (0..30).map(|_| r.random::<f64>() * 4.0).collect();
    let table = LossTable::new(losses.clone(), LossSource::External).unwrap();
    for mode in [SignalMode::Sum, SignalMode::Mean] {
        let got = differential_loss(&table, &state, &assignment, mode).unwrap();
        for c in 0..3 {
            let (mut ks, mut kn, mut ps, mut pn) = (0.0, 0, 0.0, 0);
            for i in 0..30 {
                if labels[i] != c {
                    continue;
                }
                if kept.contains(&i) {
                    ks += losses[i];
                    kn += 1;
                } else {
                    ps += losses[i];
                    pn += 1;
                }
            }
            let expected = if kn == 0 || pn == 0 {
                0.0
            } else if mode == SignalMode::Sum {
                ks - ps
            } else {
                ks / kn as f64 - ps / pn as f64
            };
            assert!((got[c].delta - expected).abs() < 1e-12, "cluster {c} {mode:?}");
        }
    }
}

#[test]
fn apportion_fixed_instance_is_optimal() {
    let (gp, sizes, m) = ([0.3, 0.8, 0.5], [7, 5, 9], 12);
    let targets = oracle_targets(&gp, &sizes, m);
    let got = apportion_counts(&gp, &sizes, m).unwrap();
    let (best, winners) = brute_apportion(&targets, &sizes, m);
    assert!(winners.contains(&got), "{got:?} not among {winners:?}");
    let cost: f64 = got.iter().zip(&targets).map(|(&k, t)| (k as f64 - t).abs()).sum();
    assert!((cost - best).abs() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn apportion_is_optimal_and_exact(
        sizes in prop::collection::vec(0usize..9, 1..5),
        raw in prop::collection::vec(0.0f64..1.0, 5),
        frac in 0.0f64..=1.0,
    ) {
        let n: usize = sizes.iter().sum();
        prop_assume!(n > 0);
        let m = (n as f64 * frac).round() as usize;
        let gp = &raw[..sizes.len()];
        let got = apportion_counts(gp, &sizes, m).unwrap();
        prop_assert_eq!(got.iter().sum::<usize>(), m);
        prop_assert!(got.iter().zip(&sizes).all(|(k, s)| k <= s));
        let targets = redistributed_targets(gp, &sizes, m).unwrap();
        let oracle = oracle_targets(gp, &sizes, m);
        for (a, b) in targets.iter().zip(&oracle) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        let (best, _) = brute_apportion(&oracle, &sizes, m);
        let cost: f64 = got.iter().zip(&oracle).map(|(&k, t)| (k as f64 - t).abs()).sum();
        prop_assert!((cost - best).abs() < 1e-9);
    }
}

#[test]
fn solved_beta_hits_churn_on_grid() {
    let gamma = [0.2, 0.5, 0.7, 0.4];
    let adjust = normalize_signals(&[1.0, -0.4, 0.3, -0.9], &[40, 25, 30, 50]);
    let sizes = [40, 25, 30, 50];
    let n: usize = sizes.iter().sum();
    let m = sizes.iter().zip(&gamma).map(|(&s, g)| (s as f64 * (1.0 - g)).round() as usize).sum::<usize>().min(n);
    let target = 0.075;
    let beta = solve_beta_for_churn(&gamma, &adjust, &sizes, m, target).unwrap();
    assert!(churn(&gamma, &adjust, &sizes, m, beta).unwrap() >= target);
    let max = adadedup::adaptation::beta_max(&gamma, &adjust);
    let grid: Vec<f64> = (0..=10_000).map(|i| max * i as f64 / 10_000.0).collect();
    let first = grid.iter().position(|&b| churn(&gamma, &adjust, &sizes, m, b).unwrap() >= target).unwrap();
    assert!(beta <= grid[first]);
    if first > 0 {
        assert!(beta > grid[first - 1]);
    }
}

fn two_cluster_instance(scale: f64) -> (EmbeddingMatrix, ClusterAssignment, PruneState, LossTable) {
    let mut r = rng(8);
    let rows: Vec<Vec<f64>> =
        (0..40).map(|i| vec![(i / 20) as f64 * 30.0 + r.random::<f64>() * 4.0, r.random::<f64>() * 4.0]).collect();
    let emb = EmbeddingMatrix::from_rows(&rows).unwrap();
    let labels: Vec<usize> = (0..40).map(|i| i / 20).collect();
    let assignment = ClusterAssignment::from_labels(&emb, labels, 2).unwrap();
    let (state, _) = initial_prune(&emb, &assignment, 20, &DedupOrder::ascending(40)).unwrap();
    // Cluster 0: pruned members carry ten times the loss of kept ones; cluster 1 the reverse.
    let losses = (0..40)
        .map(|i| {
            let heavy = if i < 20 { !state.is_kept(i) } else { state.is_kept(i) };
            scale * if heavy { 10.0 } else { 1.0 }
        })
        .collect();
    (emb, assignment, state, LossTable::new(losses, LossSource::External).unwrap())
}

#[test]
fn signal_moves_budget_toward_the_informative_cluster() {
    let (emb, assignment, state, losses) = two_cluster_instance(1.0);
    let config = PruneConfig { budget_m: Some(20), signal_mode: SignalMode::Mean, ..Default::default() };
    let checked = validate_config(&config, 40).unwrap();
    let a = adapt(&state, &losses, &assignment, &checked).unwrap();
    assert!(a.summaries[0].delta < 0.0 && a.summaries[1].delta > 0.0);
    assert!(a.keep_counts[0] > a.initial_counts[0]);
    assert!(a.keep_counts[1] < a.initial_counts[1]);
    assert_eq!(a.keep_counts.iter().sum::<usize>(), 20);
    let fin = reselect(&emb, &assignment, &state, &a.keep_counts, &DedupOrder::ascending(40)).unwrap();
    assert_eq!(fin.kept_per_cluster(assignment.labels()), a.keep_counts);
}

#[test]
fn positive_loss_scaling_changes_nothing() {
    let (_, assignment, state, losses) = two_cluster_instance(1.0);
    let (_, _, _, scaled) = two_cluster_instance(7.3);
    let config = PruneConfig { budget_m: Some(20), ..Default::default() };
    let checked = validate_config(&config, 40).unwrap();
    let a = adapt(&state, &losses, &assignment, &checked).unwrap();
    let b = adapt(&state, &scaled, &assignment, &checked).unwrap();
    assert_eq!(a.adjustments, b.adjustments);
    assert_eq!(a.beta, b.beta);
    assert_eq!(a.keep_counts, b.keep_counts);
}

#[test]
fn zero_strength_is_identity() {
    let (emb, assignment, state, losses) = two_cluster_instance(1.0);
    let config = PruneConfig { budget_m: Some(20), beta: Some(0.0), ..Default::default() };
    let checked = validate_config(&config, 40).unwrap();
    let a = adapt(&state, &losses, &assignment, &checked).unwrap();
    assert_eq!(a.keep_counts, a.initial_counts);
    let fin = reselect(&emb, &assignment, &state, &a.keep_counts, &DedupOrder::ascending(40)).unwrap();
    assert_eq!(fin, state);
}

#[test]
fn flat_losses_leave_selection_alone() {
    let (emb, assignment, state, _) = two_cluster_instance(1.0);
    let flat = LossTable::new(vec![2.0; 40], LossSource::External).unwrap();
    // Means cancel exactly; sums would not unless both sides had equal counts.
    let config = PruneConfig { budget_m: Some(20), signal_mode: SignalMode::Mean, ..Default::default() };
    let checked = validate_config(&config, 40).unwrap();
    let a = adapt(&state, &flat, &assignment, &checked).unwrap();
    assert_eq!(a.beta, 0.0);
    let fin = reselect(&emb, &assignment, &state, &a.keep_counts, &DedupOrder::ascending(40)).unwrap();
    assert_eq!(fin, state);
}
