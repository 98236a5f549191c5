//! Shared fixtures and independent oracles for the integration tests.
//!
//! Nothing here calls into the library's geometry, tree or metric code; the
//! oracles are written from the definitions so they can check it.

#![allow(dead_code)]

use ocmst::{ClassPool, Label, Points};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, center: &[f64], sigma: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            center
                .iter()
                .map(|&c| c + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

pub fn uniform_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Normal blob at the origin for training; test rows are fresh draws from
/// it followed by draws from a second blob `separation` sigmas away.
pub struct TwoBlobs {
    pub train: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
    pub truth: Vec<Label>,
}

impl TwoBlobs {
    pub fn generate(
        seed: u64,
        dim: usize,
        train: usize,
        test_normal: usize,
        test_abnormal: usize,
        separation: f64,
    ) -> Self {
        let mut r = rng(seed);
        let origin = vec![0.0; dim];
        let mut far = vec![0.0; dim];
        far[0] = separation;
        let train_rows = gaussian_rows(&mut r, train, &origin, 1.0);
        let mut test = gaussian_rows(&mut r, test_normal, &origin, 1.0);
        test.extend(gaussian_rows(&mut r, test_abnormal, &far, 1.0));
        let mut truth = vec![Label::Normal; test_normal];
        truth.extend(vec![Label::Abnormal; test_abnormal]);
        TwoBlobs {
            train: train_rows,
            test,
            truth,
        }
    }

    pub fn pool(&self) -> ClassPool {
        ClassPool::ground_truth(Points::from_rows(&self.train).unwrap(), Label::Normal).unwrap()
    }

    pub fn queries(&self) -> Points {
        Points::from_rows(&self.test).unwrap()
    }

    pub fn map(&self, f: impl Fn(usize, f64) -> f64) -> TwoBlobs {
        let apply = |rows: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            rows.iter()
                .map(|row| row.iter().enumerate().map(|(k, &v)| f(k, v)).collect())
                .collect()
        };
        TwoBlobs {
            train: apply(&self.train),
            test: apply(&self.test),
            truth: self.truth.clone(),
        }
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimum distance from `x` to points sampled uniformly along `[a, b]`.
pub fn dense_segment_distance(x: &[f64], a: &[f64], b: &[f64], samples: usize) -> f64 {
    let mut best = f64::INFINITY;
    for k in 0..=samples {
        let t = k as f64 / samples as f64;
        let mut sq = 0.0;
        for i in 0..x.len() {
            let r = x[i] - (a[i] + t * (b[i] - a[i]));
            sq += r * r;
        }
        best = best.min(sq);
    }
    best.sqrt()
}

/// Projection-then-fallback edge distance written straight from the
/// definition.
pub fn edge_distance(x: &[f64], xi: &[f64], xj: &[f64]) -> f64 {
    let e = sub(xj, xi);
    let t = dot(&e, &sub(x, xi)) / dot(&e, &e);
    if (0.0..=1.0).contains(&t) {
        let p: Vec<f64> = xi.iter().zip(&e).map(|(a, d)| a + t * d).collect();
        norm(&sub(x, &p))
    } else {
        norm(&sub(x, xi)).min(norm(&sub(x, xj)))
    }
}

/// Two-pass sample standard deviation with divisor `n - 1`.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// Neumaier-compensated Euclidean distance.
pub fn compensated_distance(a: &[f64], b: &[f64]) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let term = (x - y) * (x - y);
        let t = sum + term;
        if sum.abs() >= term.abs() {
            carry += (sum - t) + term;
        } else {
            carry += (term - t) + sum;
        }
        sum = t;
    }
    (sum + carry).sqrt()
}

/// Every labelled tree on `n` nodes, decoded from its Prüfer sequence.
pub fn all_labelled_trees(n: usize) -> Vec<Vec<(usize, usize)>> {
    assert!(n >= 2);
    if n == 2 {
        return vec![vec![(0, 1)]];
    }
    let len = n - 2;
    let total = n.pow(len as u32);
    let mut trees = Vec::with_capacity(total);
    for code in 0..total {
        let mut seq = Vec::with_capacity(len);
        let mut c = code;
        for _ in 0..len {
            seq.push(c % n);
            c /= n;
        }
        let mut degree = vec![1usize; n];
        for &s in &seq {
            degree[s] += 1;
        }
        let mut edges = Vec::with_capacity(n - 1);
        for &s in &seq {
            let leaf = (0..n).find(|&v| degree[v] == 1).unwrap();
            edges.push((leaf.min(s), leaf.max(s)));
            degree[leaf] -= 1;
            degree[s] -= 1;
        }
        let rest: Vec<usize> = (0..n).filter(|&v| degree[v] == 1).collect();
        edges.push((rest[0], rest[1]));
        trees.push(edges);
    }
    trees
}

/// Sorted edge weights of a minimum-total-weight spanning tree, found by
/// enumerating every labelled tree.
pub fn brute_force_mst_weights(points: &[Vec<f64>]) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for tree in all_labelled_trees(points.len()) {
        let mut w: Vec<f64> = tree
            .iter()
            .map(|&(u, v)| norm(&sub(&points[u], &points[v])))
            .collect();
        w.sort_by(f64::total_cmp);
        let total: f64 = w.iter().sum();
        if best.as_ref().is_none_or(|(b, _)| total < *b) {
            best = Some((total, w));
        }
    }
    best.unwrap().1
}

/// Fraction of (abnormal, normal) pairs ordered correctly, ties counting ½.
pub fn pair_counting_auc(scores: &[f64], truth: &[Label]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if truth[i] != Label::Abnormal {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if truth[j] != Label::Normal {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}
