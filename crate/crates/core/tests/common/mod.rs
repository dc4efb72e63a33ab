//! Independent oracles and fixtures shared by the integration tests. Nothing
//! here calls the code under test except to build inputs.
#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use warmup_core::complexity::{
    combine_and_normalize, dominance, ComplexityRecord, DominanceParams, DraftRecord,
};
use warmup_core::embeddings::TokenEmbeddingSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian tokens with per-axis standard deviations `scales`.
pub fn gaussian_set(seed: u64, n: usize, l: usize, scales: &[f64]) -> TokenEmbeddingSet {
    let mut r = rng(seed);
    let d = scales.len();
    let mut data = Vec::with_capacity(n * l * d);
    for _ in 0..n * l {
        for &s in scales {
            let z: f64 = StandardNormal.sample(&mut r);
            data.push((s * z) as f32);
        }
    }
    let ids = (0..n).map(|i| format!("img{i}")).collect();
    TokenEmbeddingSet::new(l, d, data, ids).unwrap()
}

/// Leading eigenpair of the population covariance of all tokens, from a
/// dense symmetric eigendecomposition.
pub fn dense_pc1(set: &TokenEmbeddingSet) -> (Vec<f64>, f64) {
    let d = set.dim();
    let t = set.num_tokens();
    let m = DMatrix::from_fn(t, d, |i, j| set.flat_token(i)[j] as f64);
    let mean = m.row_mean();
    let mut c = m.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    let cov = c.transpose() * &c / t as f64;
    let eig = SymmetricEigen::new(cov);
    let (k, &lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    (eig.eigenvectors.column(k).iter().copied().collect(), lambda)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Monte Carlo distinct count: `epochs` rounds of `N` draws with
/// replacement via a linear-scan inverse CDF. Returns (mean, standard error).
pub fn mc_distinct(probs: &[f64], epochs: usize, seed: u64) -> (f64, f64) {
    let n = probs.len();
    let mut r = rng(seed);
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &p in probs {
        acc += p;
        cdf.push(acc);
    }
    let mut stamp = vec![usize::MAX; n];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for e in 0..epochs {
        let mut distinct = 0usize;
        for _ in 0..n {
            let u = r.random::<f64>() * acc;
            let i = cdf.iter().position(|&c| u < c).unwrap_or(n - 1);
            if stamp[i] != e {
                stamp[i] = e;
                distinct += 1;
            }
        }
        sum += distinct as f64;
        sum_sq += (distinct * distinct) as f64;
    }
    let m = sum / epochs as f64;
    let var = (sum_sq / epochs as f64 - m * m) * epochs as f64 / (epochs - 1) as f64;
    (m, (var / epochs as f64).sqrt())
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sum of squared distances of each point to the mean of its group.
pub fn partition_inertia(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(labels) {
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(p) {
            *s += x;
        }
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|x| x / c.max(1) as f64).collect())
        .collect();
    points
        .iter()
        .zip(labels)
        .map(|(p, &c)| sq_dist(p, &means[c]))
        .sum()
}

fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

/// Textbook Lloyd iteration from the given centroids until the assignment
/// stops changing. Returns (labels, inertia).
pub fn lloyd(points: &[Vec<f64>], init: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let k = init.len();
    let d = points[0].len();
    let mut centroids = init.to_vec();
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
    for _ in 0..1000 {
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(p, _)| p)
                .collect();
            if !members.is_empty() {
                *centroid = (0..d)
                    .map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64)
                    .collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let inertia = partition_inertia(points, &labels, k);
    (labels, inertia)
}

/// Every two-way split of the points (both sides non-empty) with its
/// inertia, and whether it is a fixed point of Lloyd iteration.
pub fn all_two_partitions(points: &[Vec<f64>]) -> Vec<(Vec<usize>, f64, bool)> {
    let n = points.len();
    assert!((2..=20).contains(&n));
    let mut out = Vec::new();
    // Point 0 always sits in group 0, so each split is listed once.
    for mask in 1u32..(1 << (n - 1)) {
        let labels: Vec<usize> = (0..n)
            .map(|i| {
                if i > 0 && mask >> (i - 1) & 1 == 1 {
                    1
                } else {
                    0
                }
            })
            .collect();
        let inertia = partition_inertia(points, &labels, 2);
        let means: Vec<Vec<f64>> = (0..2)
            .map(|c| {
                let members: Vec<&Vec<f64>> = points
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| l == c)
                    .map(|(p, _)| p)
                    .collect();
                (0..points[0].len())
                    .map(|j| members.iter().map(|p| p[j]).sum::<f64>() / members.len() as f64)
                    .collect()
            })
            .collect();
        let fixed = points
            .iter()
            .zip(&labels)
            .all(|(p, &l)| sq_dist(p, &means[l]) <= sq_dist(p, &means[1 - l]));
        out.push((labels, inertia, fixed));
    }
    out
}

/// A score set shaped like real output: `clusters` groups whose raw
/// complexities span different scales, with default dominance parameters,
/// normalised within each group.
pub fn synthetic_scores(n: usize, clusters: usize, seed: u64) -> Vec<ComplexityRecord> {
    let mut r = rng(seed);
    let params = DominanceParams::new(12.0, 0.002).unwrap();
    let drafts = (0..n)
        .map(|i| {
            let c = i % clusters;
            let r_bg: f64 = r.random();
            DraftRecord {
                image_id: format!("s{i:05}"),
                r_bg,
                omega_dom: dominance(r_bg, &params).unwrap(),
                omega_prot: (1.0 + c as f64) * (0.5 + r.random::<f64>()),
                cluster_id: c,
            }
        })
        .collect();
    combine_and_normalize(drafts)
}
