//! Per-query minimum spanning trees over the γ nearest pool rows.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::ClassPool;
use crate::geometry::{euclidean_distance_unchecked, squared_distance};

/// Neighborhood size and the two quantile fractions for the decision band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdConfig {
    pub alpha0: f64,
    pub alpha1: f64,
    pub gamma: usize,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig {
            alpha0: 0.1,
            alpha1: 0.8,
            gamma: 8,
        }
    }
}

impl ThresholdConfig {
    pub fn new(alpha0: f64, alpha1: f64, gamma: usize) -> Result<Self> {
        let config = ThresholdConfig {
            alpha0,
            alpha1,
            gamma,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.alpha0) || !unit.contains(&self.alpha1) {
            return Err(Error::Config(format!(
                "alpha0 ({}) and alpha1 ({}) must lie in [0, 1]",
                self.alpha0, self.alpha1
            )));
        }
        if self.alpha0 > self.alpha1 {
            return Err(Error::Config(format!(
                "alpha0 ({}) must not exceed alpha1 ({})",
                self.alpha0, self.alpha1
            )));
        }
        if self.gamma == 0 {
            return Err(Error::Config("gamma must be at least 1".into()));
        }
        Ok(())
    }
}

/// Weighted tree edge between two pool rows, `u < v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

/// Spanning tree over a handful of pool rows plus its two band thresholds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinSpanTree {
    /// Pool row indices, nearest-first as selected.
    pub nodes: Vec<usize>,
    /// Edges in the order Kruskal accepted them (nondecreasing weight).
    pub edges: Vec<Edge>,
    pub theta0: f64,
    pub theta1: f64,
    /// True when the tree has no edges and both thresholds are forced to 0.
    pub degenerate: bool,
}

impl MinSpanTree {
    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    pub fn sorted_weights(&self) -> Vec<f64> {
        // Kruskal emits edges already sorted.
        self.edges.iter().map(|e| e.weight).collect()
    }

    /// Edges touching pool row `node`.
    pub fn incident_edges(&self, node: usize) -> impl Iterator<Item = &Edge> + '_ {
        self.edges
            .iter()
            .filter(move |e| e.u == node || e.v == node)
    }
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the sets of `a` and `b`; false if they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Indices of the `min(gamma, |pool|)` rows closest to `x`, nearest first.
/// Equal distances are ordered by row index.
pub fn select_gamma_nearest(x: &[f64], pool: &ClassPool, gamma: usize) -> Result<Vec<usize>> {
    Ok(nearest_with_distances(x, pool, gamma)?
        .into_iter()
        .map(|(i, _)| i)
        .collect())
}

/// Like [`select_gamma_nearest`], also returning each Euclidean distance.
pub fn nearest_with_distances(
    x: &[f64],
    pool: &ClassPool,
    gamma: usize,
) -> Result<Vec<(usize, f64)>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if x.len() != pool.dim() {
        return Err(Error::DimensionMismatch {
            expected: pool.dim(),
            found: x.len(),
        });
    }
    let mut scored: Vec<(usize, f64)> = pool
        .points()
        .rows()
        .enumerate()
        .map(|(i, row)| (i, squared_distance(x, row)))
        .collect();
    let by_distance = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    let k = gamma.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_distance);
        scored.truncate(k);
    }
    scored.sort_unstable_by(by_distance);
    Ok(scored.into_iter().map(|(i, sq)| (i, sq.sqrt())).collect())
}

/// Weight at the 1-based position `max(1, ⌈alpha·n⌉)` of a nondecreasing
/// list. `None` for an empty list.
pub fn threshold_from_quantile(sorted_weights: &[f64], alpha: f64) -> Option<f64> {
    let n = sorted_weights.len();
    if n == 0 {
        return None;
    }
    // Absorb representation error so that e.g. 0.3 * 10 lands on 3, not 4.
    let raw = (alpha * n as f64 - 1e-9).ceil();
    let rank = (raw.max(1.0) as usize).min(n);
    Some(sorted_weights[rank - 1])
}

fn edge_order(a: &Edge, b: &Edge) -> Ordering {
    a.weight
        .total_cmp(&b.weight)
        .then(a.u.cmp(&b.u))
        .then(a.v.cmp(&b.v))
}

/// Kruskal over the complete graph on `indices`, with edge weights equal to
/// the Euclidean distance between the pool rows. Thresholds are the
/// `alpha0`/`alpha1` quantiles of the resulting edge weights.
pub fn build_small_mst(
    indices: &[usize],
    pool: &ClassPool,
    config: &ThresholdConfig,
) -> Result<MinSpanTree> {
    if indices.is_empty() {
        return Err(Error::EmptyPool);
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= pool.len()) {
        return Err(Error::Config(format!(
            "row index {bad} out of range for pool of {}",
            pool.len()
        )));
    }
    let n = indices.len();
    let mut candidates = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            let (u, v) = (indices[a].min(indices[b]), indices[a].max(indices[b]));
            if u == v {
                return Err(Error::Config(format!("row index {u} selected twice")));
            }
            let weight = euclidean_distance_unchecked(pool.row(u), pool.row(v));
            candidates.push((Edge { u, v, weight }, a, b));
        }
    }
    candidates.sort_by(|x, y| edge_order(&x.0, &y.0));

    let mut forest = DisjointSet::new(n);
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    for (edge, a, b) in candidates {
        if forest.union(a, b) {
            edges.push(edge);
            if edges.len() + 1 == n {
                break;
            }
        }
    }

    let weights: Vec<f64> = edges.iter().map(|e| e.weight).collect();
    let (theta0, theta1, degenerate) = match (
        threshold_from_quantile(&weights, config.alpha0),
        threshold_from_quantile(&weights, config.alpha1),
    ) {
        (Some(t0), Some(t1)) => (t0, t1, false),
        _ => (0.0, 0.0, true),
    };
    Ok(MinSpanTree {
        nodes: indices.to_vec(),
        edges,
        theta0,
        theta1,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Label, Points};

    fn pool_1d(values: &[f64]) -> ClassPool {
        let rows: Vec<[f64; 1]> = values.iter().map(|&v| [v]).collect();
        ClassPool::ground_truth(Points::from_rows(&rows).unwrap(), Label::Normal).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ThresholdConfig::new(0.1, 0.8, 8).is_ok());
        assert!(ThresholdConfig::new(0.9, 0.8, 8).is_err());
        assert!(ThresholdConfig::new(0.1, 1.2, 8).is_err());
        assert!(ThresholdConfig::new(0.1, 0.8, 0).is_err());
    }

    #[test]
    fn gamma_nearest_single_row() {
        let pool = pool_1d(&[4.0]);
        assert_eq!(select_gamma_nearest(&[100.0], &pool, 5).unwrap(), vec![0]);
    }

    #[test]
    fn gamma_nearest_ordering() {
        let rows = [[1.0, 0.0], [5.0, 0.0], [2.0, 0.0]];
        let pool =
            ClassPool::ground_truth(Points::from_rows(&rows).unwrap(), Label::Normal).unwrap();
        assert_eq!(
            select_gamma_nearest(&[0.0, 0.0], &pool, 2).unwrap(),
            vec![0, 2]
        );
    }

    #[test]
    fn gamma_nearest_ties_by_index() {
        let pool = pool_1d(&[1.0, -1.0, 1.0, 3.0]);
        assert_eq!(
            select_gamma_nearest(&[0.0], &pool, 3).unwrap(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn quantile_conventions() {
        assert_eq!(
            threshold_from_quantile(&[1.0, 2.0, 3.0, 4.0], 0.5),
            Some(2.0)
        );
        assert_eq!(threshold_from_quantile(&[1.0, 2.0, 3.0], 0.5), Some(2.0));
        assert_eq!(
            threshold_from_quantile(&[1.0, 2.0, 3.0, 4.0], 1.0),
            Some(4.0)
        );
        assert_eq!(
            threshold_from_quantile(&[1.0, 2.0, 3.0, 4.0], 0.0),
            Some(1.0)
        );
        assert_eq!(threshold_from_quantile(&[7.5], 0.3), Some(7.5));
        assert_eq!(threshold_from_quantile(&[], 0.5), None);
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(threshold_from_quantile(&ten, 0.1), Some(1.0));
        assert_eq!(threshold_from_quantile(&ten, 0.3), Some(3.0));
        assert_eq!(threshold_from_quantile(&ten, 0.8), Some(8.0));
    }

    #[test]
    fn two_node_tree() {
        let pool = pool_1d(&[0.0, 2.5]);
        let mst = build_small_mst(&[0, 1], &pool, &ThresholdConfig::default()).unwrap();
        assert_eq!(mst.edges.len(), 1);
        assert_eq!(mst.edges[0].weight, 2.5);
        assert_eq!((mst.theta0, mst.theta1), (2.5, 2.5));
        assert!(!mst.degenerate);
    }

    #[test]
    fn collinear_three_points() {
        // Spanning trees of {0,1,3}: {1,2}=3, {1,3}=4, {2,3}=5.
        let pool = pool_1d(&[0.0, 1.0, 3.0]);
        let mst = build_small_mst(&[2, 0, 1], &pool, &ThresholdConfig::default()).unwrap();
        let edges: Vec<(usize, usize, f64)> =
            mst.edges.iter().map(|e| (e.u, e.v, e.weight)).collect();
        assert_eq!(edges, vec![(0, 1, 1.0), (1, 2, 2.0)]);
        assert_eq!(mst.total_weight(), 3.0);
    }

    #[test]
    fn single_node_is_degenerate() {
        let pool = pool_1d(&[0.0, 1.0]);
        let mst = build_small_mst(&[1], &pool, &ThresholdConfig::default()).unwrap();
        assert!(mst.edges.is_empty());
        assert!(mst.degenerate);
        assert_eq!((mst.theta0, mst.theta1), (0.0, 0.0));
    }

    #[test]
    fn rejects_bad_indices() {
        let pool = pool_1d(&[0.0, 1.0]);
        let config = ThresholdConfig::default();
        assert!(build_small_mst(&[], &pool, &config).is_err());
        assert!(build_small_mst(&[0, 0], &pool, &config).is_err());
        assert!(build_small_mst(&[0, 5], &pool, &config).is_err());
    }

    #[test]
    fn disjoint_set_basics() {
        let mut ds = DisjointSet::new(4);
        assert!(ds.union(0, 1));
        assert!(ds.union(2, 3));
        assert!(!ds.union(1, 0));
        assert_ne!(ds.find(0), ds.find(2));
        assert!(ds.union(1, 3));
        assert_eq!(ds.find(0), ds.find(2));
    }
}
