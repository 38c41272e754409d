//! Straight-line reference implementations shared by the integration tests.
#![allow(dead_code)]

use adadedup::EmbeddingMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_points(rng: &mut ChaCha8Rng, n: usize, d: usize) -> EmbeddingMatrix {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random::<f64>()).collect()).collect();
    EmbeddingMatrix::from_rows(&rows).unwrap()
}

/// Points on a coarse integer grid: plenty of exact duplicates and tied distances.
pub fn grid_points(rng: &mut ChaCha8Rng, n: usize, d: usize, side: i32) -> EmbeddingMatrix {
    let rows: Vec<Vec<f64>> =
        (0..n).map(|_| (0..d).map(|_| rng.random_range(0..side) as f64).collect()).collect();
    EmbeddingMatrix::from_rows(&rows).unwrap()
}

pub fn dist(emb: &EmbeddingMatrix, a: usize, b: usize) -> f64 {
    emb.row(a).iter().zip(emb.row(b)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Keep a candidate iff it is farther than `tau` from everything kept before it.
pub fn straight_greedy(emb: &EmbeddingMatrix, candidates: &[usize], tau: f64) -> Vec<usize> {
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable();
    let mut kept: Vec<usize> = Vec::new();
    for &c in &sorted {
        if kept.iter().all(|&k| dist(emb, c, k) > tau) {
            kept.push(c);
        }
    }
    kept
}

/// Drop the member with the smallest nearest-neighbour distance (larger index on
/// ties) until `target` remain.
pub fn straight_trim(emb: &EmbeddingMatrix, kept: &[usize], target: usize) -> Vec<usize> {
    let mut alive = kept.to_vec();
    alive.sort_unstable();
    while alive.len() > target {
        let mut victim: Option<(f64, usize)> = None;
        for &a in &alive {
            let nn = alive.iter().filter(|&&b| b != a).map(|&b| dist(emb, a, b)).fold(f64::INFINITY, f64::min);
            victim = match victim {
                Some((d, v)) if d < nn || (d == nn && v > a) => Some((d, v)),
                _ => Some((nn, a)),
            };
        }
        let v = victim.unwrap().1;
        alive.retain(|&x| x != v);
    }
    alive
}

/// Every distinct threshold at which the greedy set can change: zero and all
/// pairwise distances among the candidates.
pub fn all_breakpoints(emb: &EmbeddingMatrix, candidates: &[usize]) -> Vec<f64> {
    let mut taus = vec![0.0];
    for (i, &a) in candidates.iter().enumerate() {
        for &b in &candidates[i + 1..] {
            taus.push(dist(emb, a, b));
        }
    }
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    taus
}

/// Walks every breakpoint upward and stops at the first exact hit, or just
/// before the count would fall under the target; then trims the surplus.
pub fn oracle_threshold(emb: &EmbeddingMatrix, candidates: &[usize], target: usize) -> Vec<usize> {
    let mut cur = straight_greedy(emb, candidates, 0.0);
    if cur.len() < target {
        return straight_trim(emb, candidates, target);
    }
    for tau in all_breakpoints(emb, candidates) {
        if cur.len() == target {
            break;
        }
        let next = straight_greedy(emb, candidates, tau);
        if next.len() < target {
            break;
        }
        cur = next;
    }
    straight_trim(emb, &cur, target)
}

/// Targets after the residual is spread in proportion to slack.
pub fn oracle_targets(gamma_prime: &[f64], sizes: &[usize], m: usize) -> Vec<f64> {
    let mut t: Vec<f64> = gamma_prime.iter().zip(sizes).map(|(g, &s)| s as f64 * (1.0 - g)).collect();
    let residual = m as f64 - t.iter().sum::<f64>();
    let slack: Vec<f64> = t
        .iter()
        .zip(sizes)
        .map(|(&ti, &s)| if residual > 0.0 { s as f64 - ti } else { ti })
        .collect();
    let total: f64 = slack.iter().sum();
    if residual != 0.0 && total > 0.0 {
        for (ti, sl) in t.iter_mut().zip(&slack) {
            *ti += residual * sl / total;
        }
    }
    t
}

/// Every integer vector within bounds summing to `m`, scored by L1 distance to
/// `targets`. Returns the best score and all vectors achieving it.
pub fn brute_apportion(targets: &[f64], sizes: &[usize], m: usize) -> (f64, Vec<Vec<usize>>) {
    fn walk(
        i: usize,
        left: usize,
        sizes: &[usize],
        targets: &[f64],
        cur: &mut Vec<usize>,
        best: &mut (f64, Vec<Vec<usize>>),
    ) {
        if i == sizes.len() {
            if left == 0 {
                let cost: f64 = cur.iter().zip(targets).map(|(&k, t)| (k as f64 - t).abs()).sum();
                if cost < best.0 - 1e-9 {
                    *best = (cost, vec![cur.clone()]);
                } else if (cost - best.0).abs() <= 1e-9 {
                    best.1.push(cur.clone());
                }
            }
            return;
        }
        for k in 0..=sizes[i].min(left) {
            cur.push(k);
            walk(i + 1, left - k, sizes, targets, cur, best);
            cur.pop();
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    walk(0, m, sizes, targets, &mut Vec::new(), &mut best);
    best
}

/// Compensated (two-sum) accumulation.
pub fn two_sum_total(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = s + x;
        let e = if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
        c += e;
    }
    s + c
}

/// Density-proxy loss by direct kernel summation without max-subtraction,
/// accumulated with compensation.
pub fn naive_kde(emb: &EmbeddingMatrix, kept: &[usize], h: f64) -> Vec<f64> {
    (0..emb.n())
        .map(|s| {
            let refs: Vec<usize> = kept.iter().copied().filter(|&k| k != s).collect();
            let terms = refs.iter().map(|&k| {
                let d2 = two_sum_total(emb.row(s).iter().zip(emb.row(k)).map(|(a, b)| (a - b) * (a - b)));
                (-d2 / (2.0 * h * h)).exp()
            });
            let avg = two_sum_total(terms) / refs.len() as f64;
            (-avg.ln()).max(0.0)
        })
        .collect()
}
