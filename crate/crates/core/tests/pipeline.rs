use adadedup::benchmark::{generate, run_comparison, SynthSpec};
use adadedup::model::SignalMode;
use adadedup::pipeline::{run_pipeline, select, Geometry, Selector};
use adadedup::proxy::{LossSource, LossTable};
use adadedup::{validate_config, PruneConfig};
use proptest::prelude::*;

fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        n_clusters: 3,
        sizes: vec![40, 30, 30],
        spreads: vec![0.1, 0.5, 1.0],
        duplicate_fractions: vec![0.5, 0.0, 0.2],
        dimension: 4,
        seed,
        n: 100,
        centers: None,
    }
}

#[test]
fn every_selector_hits_the_budget() {
    let data = generate(&small_spec(1)).unwrap();
    let config = PruneConfig { k_clusters: 3, budget_m: Some(37), ..Default::default() };
    let checked = validate_config(&config, 100).unwrap();
    let geometry = Geometry::new(&data.embeddings, None, true).unwrap();
    for selector in Selector::ALL {
        let kept = select(selector, &geometry, &checked).unwrap();
        assert_eq!(kept.len(), 37, "{selector}");
        assert!(kept.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn zero_strength_keeps_the_first_stage() {
    let data = generate(&small_spec(2)).unwrap();
    let config = PruneConfig { k_clusters: 4, prune_ratio: Some(0.5), beta: Some(0.0), ..Default::default() };
    let checked = validate_config(&config, 100).unwrap();
    let geometry = Geometry::new(&data.embeddings, None, false).unwrap();
    let run = run_pipeline(&geometry, &checked, None).unwrap();
    assert_eq!(run.final_state, run.initial);
}

#[test]
fn scaled_external_losses_give_the_same_selection() {
    let data = generate(&small_spec(3)).unwrap();
    let config = PruneConfig { k_clusters: 4, budget_m: Some(60), ..Default::default() };
    let checked = validate_config(&config, 100).unwrap();
    let geometry = Geometry::new(&data.embeddings, None, true).unwrap();
    let losses: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64 / 3.0).collect();
    let a = run_pipeline(&geometry, &checked, Some(LossTable::new(losses.clone(), LossSource::External).unwrap())).unwrap();
    let scaled = losses.iter().map(|l| l * 7.3).collect();
    let b = run_pipeline(&geometry, &checked, Some(LossTable::new(scaled, LossSource::External).unwrap())).unwrap();
    assert_eq!(a.final_state, b.final_state);
}

#[test]
fn second_matrix_drives_pruning() {
    let data = generate(&small_spec(4)).unwrap();
    let other = generate(&small_spec(5)).unwrap();
    let config = PruneConfig { k_clusters: 3, budget_m: Some(50), beta: Some(0.0), ..Default::default() };
    let checked = validate_config(&config, 100).unwrap();
    let one = Geometry::new(&data.embeddings, None, true).unwrap();
    let two = Geometry::new(&data.embeddings, Some(&other.embeddings), true).unwrap();
    let a = run_pipeline(&one, &checked, None).unwrap();
    let b = run_pipeline(&two, &checked, None).unwrap();
    assert_eq!(a.assignment, b.assignment);
    assert_ne!(a.initial.kept_indices(), b.initial.kept_indices());
}

#[test]
fn comparison_is_reproducible_and_seeded() {
    let config = PruneConfig { k_clusters: 3, prune_ratio: Some(0.4), ..Default::default() };
    let a = run_comparison(&small_spec(6), &config, &[Selector::Random, Selector::AdaDedup], 2).unwrap();
    let b = run_comparison(&small_spec(6), &config, &[Selector::AdaDedup, Selector::Random], 2).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.results_table(), b.results_table());
    assert!(a.rows.iter().all(|r| r.budget == 60 && r.keep_counts.iter().sum::<usize>() == 60));
    let random: Vec<_> = a.rows.iter().filter(|r| r.selector == Selector::Random).collect();
    assert_ne!(random[0].keep_counts, random[1].keep_counts);
    assert!(a.results_table().starts_with("selector,trial,J,budget,seed\nadadedup,0,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn both_stages_keep_exactly_m(seed in any::<u64>(), m in 1usize..=100, k in 1usize..8, mean in any::<bool>()) {
        let data = generate(&small_spec(seed)).unwrap();
        let config = PruneConfig {
            k_clusters: k,
            budget_m: Some(m),
            seed,
            signal_mode: if mean { SignalMode::Mean } else { SignalMode::Sum },
            ..Default::default()
        };
        let checked = validate_config(&config, 100).unwrap();
        let geometry = Geometry::new(&data.embeddings, None, true).unwrap();
        let run = run_pipeline(&geometry, &checked, None).unwrap();
        prop_assert_eq!(run.initial.kept_count(), m);
        prop_assert_eq!(run.final_state.kept_count(), m);
        prop_assert_eq!(run.final_state.kept_per_cluster(run.assignment.labels()), run.adaptation.keep_counts);
    }
}
