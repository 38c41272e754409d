mod common;

use adadedup::clustering::{assign, kmeans_fit, kmeans_fit_traced, ClusterAssignment};
use adadedup::{EmbeddingMatrix, Error};
use common::*;
use rand::Rng;

fn partition_inertia(emb: &EmbeddingMatrix, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for c in 0..2 {
        let members: Vec<usize> = (0..emb.n()).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let mean: Vec<f64> = (0..emb.d())
            .map(|j| members.iter().map(|&i| emb.row(i)[j]).sum::<f64>() / members.len() as f64)
            .collect();
        total += members.iter().map(|&i| emb.row(i).iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum::<f64>();
    }
    total
}

#[test]
fn two_groups_match_best_bipartition() {
    let mut r = rng(11);
    let mut rows = Vec::new();
    for g in 0..2 {
        for _ in 0..5 {
            rows.push(vec![g as f64 * 50.0 + r.random::<f64>(), r.random::<f64>()]);
        }
    }
    let emb = EmbeddingMatrix::from_rows(&rows).unwrap();
    let fit = kmeans_fit(&emb, 2, 3, 300, 1e-6).unwrap();
    let mut best = (f64::INFINITY, 0u32);
    for mask in 1u32..(1 << 9) {
        let labels: Vec<usize> = (0..10).map(|i| ((mask >> i) & 1) as usize).collect();
        let cost = partition_inertia(&emb, &labels);
        if cost < best.0 {
            best = (cost, mask);
        }
    }
    let brute: Vec<usize> = (0..10).map(|i| ((best.1 >> i) & 1) as usize).collect();
    let same = |a: &[usize], b: &[usize]| (0..10).all(|i| (0..10).all(|j| (a[i] == a[j]) == (b[i] == b[j])));
    assert!(same(fit.labels(), &brute));
    assert!((fit.inertia() - best.0).abs() < 1e-9);
    let truth: Vec<usize> = (0..10).map(|i| i / 5).collect();
    assert!(same(fit.labels(), &truth));
}

#[test]
fn assign_matches_exhaustive_scan() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let emb = grid_points(&mut r, 60, 3, 5);
        let centroids = grid_points(&mut r, 7, 3, 5);
        let labels = assign(&emb, &centroids).unwrap();
        for i in 0..emb.n() {
            let d: Vec<f64> = centroids
                .rows()
                .map(|c| emb.row(i).iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            let min = d.iter().copied().fold(f64::INFINITY, f64::min);
            assert_eq!(labels[i], d.iter().position(|&x| x == min).unwrap());
        }
    }
}

#[test]
fn assign_ties_and_coincidence() {
    let centroids = EmbeddingMatrix::from_rows(&[vec![9.0], vec![-1.0], vec![1.0], vec![4.0]]).unwrap();
    let emb = EmbeddingMatrix::from_rows(&[vec![0.0], vec![4.0]]).unwrap();
    assert_eq!(assign(&emb, &centroids).unwrap(), vec![1, 3]);
}

#[test]
fn fit_reproduces_its_own_assignment() {
    let emb = uniform_points(&mut rng(5), 120, 4);
    let fit = kmeans_fit(&emb, 6, 9, 300, 1e-6).unwrap();
    assert_eq!(assign(&emb, fit.centroids()).unwrap(), fit.labels());
    assert!(fit.sizes().iter().all(|&s| s > 0));
    let again = kmeans_fit(&emb, 6, 9, 300, 1e-6).unwrap();
    assert_eq!(fit, again);
}

#[test]
fn inertia_never_rises() {
    for seed in 0..10 {
        let emb = uniform_points(&mut rng(40 + seed), 200, 2);
        let fit = kmeans_fit_traced(&emb, 8, seed, 300, 0.0).unwrap();
        for w in fit.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "seed {seed}: {:?}", fit.inertia_trace);
        }
    }
}

#[test]
fn duplicates_keep_every_cluster_nonempty() {
    let rows: Vec<Vec<f64>> = [0.0, 0.0, 0.0, 0.0, 1.0, 2.0].iter().map(|&x| vec![x]).collect();
    let emb = EmbeddingMatrix::from_rows(&rows).unwrap();
    for seed in 0..20 {
        let fit = kmeans_fit(&emb, 3, seed, 300, 1e-6).unwrap();
        assert!(fit.sizes().iter().all(|&s| s > 0), "seed {seed}: {:?}", fit.labels());
    }
}

#[test]
fn too_many_clusters() {
    let emb = uniform_points(&mut rng(1), 3, 2);
    assert!(matches!(kmeans_fit(&emb, 4, 0, 10, 1e-6), Err(Error::KTooLarge { k: 4, n: 3 })));
    let singles = ClusterAssignment::singletons(&emb).unwrap();
    assert_eq!(singles.labels(), &[0, 1, 2]);
    assert_eq!(singles.inertia(), 0.0);
}
