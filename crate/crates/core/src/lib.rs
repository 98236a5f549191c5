//! One-class novelty detection with per-query minimum spanning trees.
//!
//! For each query the γ nearest training rows of the normal class are joined
//! into a small minimum spanning tree; the query's distance to that tree's
//! vertices and edges is compared against two quantiles of the tree's edge
//! weights. Queries landing between the two thresholds are settled in a
//! second pass against a pool built from the confidently rejected queries.
//!
//! ```
//! use ocmst::{run_pipeline, ClassPool, Label, PipelineOptions, Points};
//!
//! let train = Points::from_rows(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
//! let pool = ClassPool::ground_truth(train, Label::Normal).unwrap();
//! let queries = Points::from_rows(&[[0.5, 0.0], [40.0, 40.0]]).unwrap();
//!
//! let out = run_pipeline(&pool, &queries, &PipelineOptions::default()).unwrap();
//! assert_eq!(out.verdicts[0].label, Label::Normal);
//! assert_eq!(out.verdicts[1].label, Label::Abnormal);
//! ```

pub mod classifier;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod mst;

pub use classifier::{
    build_abnormal_pool, run_pipeline, stage_one_classify, stage_one_distance, stage_two_resolve,
    zeta_for_class, ClassifierConfig, DecidedAt, EdgeScan, FinalVerdict, PipelineOptions,
    PipelineOutput, StageOneLabel, StageOneVerdict, ZetaInputs,
};
pub use error::{Error, Result};
pub use evaluation::{auc, roc_curve, sweep_gamma, EvalReport, RocCurve};
pub use features::{
    make_one_class_split, read_feature_file, write_feature_file, ClassPool, ExperimentSplit,
    FeatureMatrix, Label, Points,
};
pub use geometry::{euclidean_distance, segment_distance, SegmentDistance};
pub use mst::{
    build_small_mst, select_gamma_nearest, threshold_from_quantile, MinSpanTree, ThresholdConfig,
};
