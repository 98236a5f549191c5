//! Distance kernels over dense feature vectors.
//!
//! All arithmetic is carried out in `f64`. The checked entry points validate
//! dimensions; the `*_unchecked` variants are used on hot paths where the
//! owning [`Points`](crate::features::Points) already guarantees a shared
//! dimension.

use serde::Serialize;

use crate::error::{Error, Result};

/// Outcome of measuring a query against one edge of a tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SegmentDistance {
    pub distance: f64,
    /// Whether the orthogonal projection falls within the segment.
    pub on_segment: bool,
    /// Projection coefficient along `xj - xi`; `0` at `xi`, `1` at `xj`.
    pub t: f64,
    /// Set when `xi == xj`; the distance is then the plain vertex distance.
    pub degenerate: bool,
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Euclidean distance `||a - b||`.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims(a.len(), b.len())?;
    Ok(euclidean_distance_unchecked(a, b))
}

#[inline]
pub fn euclidean_distance_unchecked(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Squared Euclidean distance with four independent accumulators.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for k in 0..4 {
            let d = ca[k] - cb[k];
            acc[k] += d * d;
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Distance from `x` to the segment `[xi, xj]`.
///
/// When the projection coefficient `t` lies in `[0, 1]` the distance is taken
/// to the foot of the perpendicular; otherwise it is the nearer endpoint.
/// A zero-length edge is rejected with [`Error::DegenerateEdge`].
pub fn segment_distance(x: &[f64], xi: &[f64], xj: &[f64]) -> Result<SegmentDistance> {
    check_dims(x.len(), xi.len())?;
    check_dims(x.len(), xj.len())?;
    let result = edge_distance_unchecked(x, xi, xj);
    if result.degenerate {
        return Err(Error::DegenerateEdge);
    }
    Ok(result)
}

/// Same as [`segment_distance`] but tolerant of duplicate endpoints, which
/// reports `||x - xi||` with `degenerate` set.
pub fn edge_distance_unchecked(x: &[f64], xi: &[f64], xj: &[f64]) -> SegmentDistance {
    debug_assert!(x.len() == xi.len() && x.len() == xj.len());
    // Evaluate from the lexicographically smaller endpoint so that swapping
    // the endpoints gives bit-identical distances and t' = 1 - t.
    if xj.iter().partial_cmp(xi.iter()) == Some(std::cmp::Ordering::Less) {
        let mut r = oriented_edge_distance(x, xj, xi);
        if !r.degenerate {
            r.t = 1.0 - r.t;
        }
        return r;
    }
    oriented_edge_distance(x, xi, xj)
}

fn oriented_edge_distance(x: &[f64], xi: &[f64], xj: &[f64]) -> SegmentDistance {
    let mut edge_sq = 0.0;
    let mut dot = 0.0;
    for ((&xv, &a), &b) in x.iter().zip(xi).zip(xj) {
        let e = b - a;
        edge_sq += e * e;
        dot += e * (xv - a);
    }
    if edge_sq == 0.0 {
        return SegmentDistance {
            distance: euclidean_distance_unchecked(x, xi),
            on_segment: false,
            t: 0.0,
            degenerate: true,
        };
    }
    let t = dot / edge_sq;
    if (0.0..=1.0).contains(&t) {
        let sq: f64 = x
            .iter()
            .zip(xi)
            .zip(xj)
            .map(|((&xv, &a), &b)| {
                let r = xv - (a + t * (b - a));
                r * r
            })
            .sum();
        SegmentDistance {
            distance: sq.sqrt(),
            on_segment: true,
            t,
            degenerate: false,
        }
    } else {
        let di = euclidean_distance_unchecked(x, xi);
        let dj = euclidean_distance_unchecked(x, xj);
        SegmentDistance {
            distance: di.min(dj),
            on_segment: false,
            t,
            degenerate: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_oracle(x: &[f64], xi: &[f64], xj: &[f64], samples: usize) -> f64 {
        (0..=samples)
            .map(|k| {
                let t = k as f64 / samples as f64;
                x.iter()
                    .zip(xi)
                    .zip(xj)
                    .map(|((&xv, &a), &b)| {
                        let p = a + t * (b - a);
                        (xv - p) * (xv - p)
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn trivial_distances() {
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let err = euclidean_distance(&[0.0, 0.0], &[1.0]).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                expected: 2,
                found: 1
            }
        ));
        assert!(segment_distance(&[0.0], &[0.0, 1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn perpendicular_foot_at_endpoint() {
        let r = segment_distance(&[0.0, 1.0], &[0.0, 0.0], &[2.0, 0.0]).unwrap();
        assert_eq!(r.t, 0.0);
        assert!(r.on_segment);
        assert_eq!(r.distance, 1.0);
    }

    #[test]
    fn query_at_first_endpoint() {
        let r = segment_distance(&[0.0, 0.0], &[0.0, 0.0], &[2.0, 0.0]).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.distance, 0.0);
    }

    #[test]
    fn beyond_far_endpoint_matches_sampling_oracle() {
        let (x, xi, xj) = ([3.0, 1.0], [0.0, 0.0], [2.0, 0.0]);
        let r = segment_distance(&x, &xi, &xj).unwrap();
        assert_eq!(r.t, 1.5);
        assert!(!r.on_segment);
        assert!((r.distance - 2f64.sqrt()).abs() < 1e-15);
        let oracle = dense_oracle(&x, &xi, &xj, 1_000_000);
        assert!((r.distance - oracle).abs() < 1e-4);
    }

    #[test]
    fn degenerate_edge() {
        let err = segment_distance(&[1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateEdge));
        let r = edge_distance_unchecked(&[3.0, 4.0], &[0.0, 0.0], &[0.0, 0.0]);
        assert!(r.degenerate);
        assert!(!r.on_segment);
        assert_eq!(r.distance, 5.0);
    }

    #[test]
    fn endpoint_swap_is_exact() {
        let x = [0.3, -1.7, 2.2];
        let a = [0.1, 0.2, 0.3];
        let b = [1.9, -0.4, 0.8];
        let r1 = segment_distance(&x, &a, &b).unwrap();
        let r2 = segment_distance(&x, &b, &a).unwrap();
        assert_eq!(r1.distance, r2.distance);
        assert_eq!(r1.on_segment, r2.on_segment);
        assert_eq!(r2.t, 1.0 - r1.t);
    }

    #[test]
    fn unrolled_sum_handles_remainders() {
        for n in 0..11 {
            let a: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let b: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 + 1.0).collect();
            let naive: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
            assert_eq!(squared_distance(&a, &b), naive);
        }
    }
}
