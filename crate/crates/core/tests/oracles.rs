mod common;

use common::*;
use ocmst::classifier::stage_one_distance;
use ocmst::{
    build_small_mst, euclidean_distance, run_pipeline, select_gamma_nearest, ClassPool,
    ClassifierConfig, DecidedAt, EdgeScan, Label, PipelineOptions, Points, ThresholdConfig,
};
use rand::Rng;

fn pool(rows: &[Vec<f64>]) -> ClassPool {
    ClassPool::ground_truth(Points::from_rows(rows).unwrap(), Label::Normal).unwrap()
}

#[test]
fn high_dimensional_distance_matches_compensated_sum() {
    let mut r = rng(1);
    for _ in 0..20 {
        let rows = uniform_rows(&mut r, 2, 4096);
        let got = euclidean_distance(&rows[0], &rows[1]).unwrap();
        let oracle = compensated_distance(&rows[0], &rows[1]);
        assert!(((got - oracle) / oracle).abs() < 1e-9, "{got} vs {oracle}");
    }
}

#[test]
fn gamma_nearest_matches_full_sort() {
    let mut r = rng(2);
    for _ in 0..50 {
        let rows = uniform_rows(&mut r, 50, 5);
        let x: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut all: Vec<(f64, usize)> = rows
            .iter()
            .enumerate()
            .map(|(i, row)| (norm(&sub(&x, row)), i))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let expected: Vec<usize> = all.iter().take(8).map(|&(_, i)| i).collect();
        assert_eq!(select_gamma_nearest(&x, &pool(&rows), 8).unwrap(), expected);
    }
}

#[test]
fn cayley_enumeration_counts() {
    assert_eq!(all_labelled_trees(3).len(), 3);
    assert_eq!(all_labelled_trees(6).len(), 1296);
}

#[test]
fn three_point_tree_matches_enumeration() {
    let rows = vec![vec![0.0], vec![1.0], vec![3.0]];
    let tree = build_small_mst(&[0, 1, 2], &pool(&rows), &ThresholdConfig::default()).unwrap();
    assert_eq!(tree.sorted_weights(), brute_force_mst_weights(&rows));
    assert_eq!(tree.total_weight(), 3.0);
}

#[test]
fn six_point_tree_matches_enumeration() {
    let mut r = rng(3);
    for _ in 0..20 {
        let rows = uniform_rows(&mut r, 6, 3);
        let tree = build_small_mst(
            &[0, 1, 2, 3, 4, 5],
            &pool(&rows),
            &ThresholdConfig::default(),
        )
        .unwrap();
        assert_eq!(tree.sorted_weights(), brute_force_mst_weights(&rows));
    }
}

#[test]
fn incident_scan_never_beats_full_edge_scan() {
    let mut r = rng(4);
    let config = ThresholdConfig::new(0.1, 0.8, 8).unwrap();
    let mut equal = 0;
    for _ in 0..300 {
        let rows = uniform_rows(&mut r, 8, 3);
        let p = pool(&rows);
        let x: Vec<f64> = (0..3).map(|_| r.random_range(-1.5..1.5)).collect();
        let tree = build_small_mst(&(0..8).collect::<Vec<_>>(), &p, &config).unwrap();

        // Oracle scan over every edge, straight from the definition.
        let full_oracle = tree
            .edges
            .iter()
            .map(|e| edge_distance(&x, &rows[e.u], &rows[e.v]))
            .fold(f64::INFINITY, f64::min);
        let incident = stage_one_distance(&x, &tree, &p, EdgeScan::IncidentToNearest).unwrap();
        let full = stage_one_distance(&x, &tree, &p, EdgeScan::Full).unwrap();
        assert!((full - full_oracle).abs() < 1e-12);
        assert!(incident >= full - 1e-12);

        let nearest = (0..8)
            .min_by(|&a, &b| {
                norm(&sub(&x, &rows[a]))
                    .total_cmp(&norm(&sub(&x, &rows[b])))
                    .then(a.cmp(&b))
            })
            .unwrap();
        let best_edge = tree
            .edges
            .iter()
            .min_by(|a, b| {
                edge_distance(&x, &rows[a.u], &rows[a.v])
                    .total_cmp(&edge_distance(&x, &rows[b.u], &rows[b.v]))
            })
            .unwrap();
        if best_edge.u == nearest || best_edge.v == nearest {
            assert!((incident - full_oracle).abs() < 1e-12);
            equal += 1;
        }
    }
    assert!(equal > 0);
}

#[test]
fn one_dimensional_incident_edge_example() {
    let rows = vec![vec![0.0], vec![1.0], vec![3.0]];
    let p = pool(&rows);
    let tree = build_small_mst(&[0, 1, 2], &p, &ThresholdConfig::default()).unwrap();
    let full_oracle = tree
        .edges
        .iter()
        .map(|e| edge_distance(&[2.0], &rows[e.u], &rows[e.v]))
        .fold(f64::INFINITY, f64::min);
    assert_eq!(full_oracle, 0.0);
    assert_eq!(
        stage_one_distance(&[2.0], &tree, &p, EdgeScan::IncidentToNearest).unwrap(),
        0.0
    );
}

#[test]
fn two_blob_pipeline_separates_classes() {
    let blobs = TwoBlobs::generate(5, 16, 400, 200, 200, 20.0);
    let out = run_pipeline(&blobs.pool(), &blobs.queries(), &PipelineOptions::default()).unwrap();
    let scores: Vec<f64> = out.verdicts.iter().map(|v| v.score).collect();
    assert!(pair_counting_auc(&scores, &blobs.truth) >= 0.99);
    // Every far-blob query is rejected at stage one.
    for (v, t) in out.verdicts.iter().zip(&blobs.truth) {
        if *t == Label::Abnormal {
            assert_eq!(v.decided_at, DecidedAt::Stage1);
            assert_eq!(v.label, Label::Abnormal);
        }
    }
}

#[test]
fn full_edge_scan_pipeline_runs() {
    let blobs = TwoBlobs::generate(6, 8, 200, 100, 100, 20.0);
    let options = PipelineOptions {
        classifier: ClassifierConfig::default().with_edge_scan(EdgeScan::Full),
        trace: false,
    };
    let full = run_pipeline(&blobs.pool(), &blobs.queries(), &options).unwrap();
    let incident =
        run_pipeline(&blobs.pool(), &blobs.queries(), &PipelineOptions::default()).unwrap();
    for (f, i) in full.stage_one.iter().zip(&incident.stage_one) {
        assert!(f.distance <= i.distance + 1e-12);
    }
}
