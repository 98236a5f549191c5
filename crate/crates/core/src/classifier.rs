//! Two-stage novelty detection.
//!
//! Stage one measures each query against a small MST built from its γ
//! nearest normal training rows and sorts it into normal, abnormal or
//! uncertain. Once every query has been seen, the stage-one rejects form an
//! abnormal pool and each uncertain query is settled by comparing it against
//! a small MST from each pool, falling back to ζ = d·(s + 1) when both
//! trees accept or both reject.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{ClassPool, Label, Points};
use crate::geometry::{edge_distance_unchecked, euclidean_distance_unchecked};
use crate::mst::{build_small_mst, nearest_with_distances, MinSpanTree, ThresholdConfig};

/// Which tree edges the query distance is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeScan {
    /// Only edges incident to the tree node nearest the query.
    #[default]
    IncidentToNearest,
    /// Every edge of the tree (ablation).
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ClassifierConfig {
    pub thresholds: ThresholdConfig,
    pub edge_scan: EdgeScan,
}

impl ClassifierConfig {
    pub fn new(thresholds: ThresholdConfig) -> Self {
        ClassifierConfig {
            thresholds,
            edge_scan: EdgeScan::IncidentToNearest,
        }
    }

    pub fn with_edge_scan(mut self, edge_scan: EdgeScan) -> Self {
        self.edge_scan = edge_scan;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum StageOneLabel {
    #[serde(rename = "0")]
    Normal,
    #[serde(rename = "1")]
    Abnormal,
    #[serde(rename = "w")]
    Uncertain,
}

impl fmt::Display for StageOneLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageOneLabel::Normal => "0",
            StageOneLabel::Abnormal => "1",
            StageOneLabel::Uncertain => "w",
        })
    }
}

impl FromStr for StageOneLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "0" => Ok(StageOneLabel::Normal),
            "1" => Ok(StageOneLabel::Abnormal),
            "w" => Ok(StageOneLabel::Uncertain),
            other => Err(format!("unknown stage-one label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageOneVerdict {
    pub query_id: usize,
    pub label: StageOneLabel,
    pub distance: f64,
    pub theta0: f64,
    pub theta1: f64,
}

impl StageOneVerdict {
    /// Whether the stored distance satisfies the band condition of its label.
    pub fn is_consistent(&self) -> bool {
        match self.label {
            StageOneLabel::Normal => self.distance <= self.theta0,
            StageOneLabel::Abnormal => self.distance >= self.theta1,
            StageOneLabel::Uncertain => self.theta0 < self.distance && self.distance < self.theta1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZetaInputs {
    pub d: f64,
    pub neighbor_count: usize,
    pub spread: f64,
    pub zeta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecidedAt {
    Stage1,
    Stage2Exclusive,
    Stage2Zeta,
    /// Uncertain query with no abnormal pool to compare against.
    Stage2Fallback,
}

impl DecidedAt {
    pub fn as_str(self) -> &'static str {
        match self {
            DecidedAt::Stage1 => "stage1",
            DecidedAt::Stage2Exclusive => "stage2_exclusive",
            DecidedAt::Stage2Zeta => "stage2_zeta",
            DecidedAt::Stage2Fallback => "stage2_fallback",
        }
    }
}

impl FromStr for DecidedAt {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "stage1" => Ok(DecidedAt::Stage1),
            "stage2_exclusive" => Ok(DecidedAt::Stage2Exclusive),
            "stage2_zeta" => Ok(DecidedAt::Stage2Zeta),
            "stage2_fallback" => Ok(DecidedAt::Stage2Fallback),
            other => Err(format!("unknown decision stage {other:?}")),
        }
    }
}

/// Per-class measurements taken while resolving an uncertain query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageTwoDetail {
    pub normal: ZetaInputs,
    pub normal_threshold: f64,
    /// Absent when the abnormal pool was empty.
    pub abnormal: Option<ZetaInputs>,
    pub abnormal_threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FinalVerdict {
    pub query_id: usize,
    pub stage_one: StageOneLabel,
    pub label: Label,
    pub decided_at: DecidedAt,
    /// Stage-one distance to the normal tree.
    pub d0: f64,
    pub stage_two: Option<StageTwoDetail>,
    /// Novelty score; larger means more abnormal.
    pub score: f64,
}

/// One small tree as seen by a query, for the trace output.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub query_id: usize,
    pub stage: u8,
    pub class: Label,
    pub distance: f64,
    #[serde(flatten)]
    pub tree: MinSpanTree,
}

/// A query's local view of one class pool.
struct LocalTree {
    neighbor_distances: Vec<f64>,
    tree: MinSpanTree,
    distance: f64,
}

fn local_tree(x: &[f64], pool: &ClassPool, config: &ClassifierConfig) -> Result<LocalTree> {
    let neighbors = nearest_with_distances(x, pool, config.thresholds.gamma)?;
    let indices: Vec<usize> = neighbors.iter().map(|&(i, _)| i).collect();
    let tree = build_small_mst(&indices, pool, &config.thresholds)?;
    let distance = stage_one_distance(x, &tree, pool, config.edge_scan)?;
    Ok(LocalTree {
        neighbor_distances: neighbors.into_iter().map(|(_, d)| d).collect(),
        tree,
        distance,
    })
}

/// Distance from `x` to the tree: the minimum edge distance over the edges
/// incident to the tree node nearest `x` (ties go to the lower row index),
/// or over every edge with [`EdgeScan::Full`]. A tree without edges reports
/// the distance to its single node.
pub fn stage_one_distance(
    x: &[f64],
    tree: &MinSpanTree,
    pool: &ClassPool,
    edge_scan: EdgeScan,
) -> Result<f64> {
    if tree.nodes.is_empty() {
        return Err(Error::EmptyPool);
    }
    if x.len() != pool.dim() {
        return Err(Error::DimensionMismatch {
            expected: pool.dim(),
            found: x.len(),
        });
    }
    let (nearest, nearest_distance) = tree
        .nodes
        .iter()
        .map(|&i| (i, euclidean_distance_unchecked(x, pool.row(i))))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .expect("tree has nodes");
    if tree.edges.is_empty() {
        return Ok(nearest_distance);
    }
    let edge_distance =
        |e: &crate::mst::Edge| edge_distance_unchecked(x, pool.row(e.u), pool.row(e.v)).distance;
    let min = match edge_scan {
        EdgeScan::IncidentToNearest => tree
            .incident_edges(nearest)
            .map(edge_distance)
            .fold(f64::INFINITY, f64::min),
        EdgeScan::Full => tree
            .edges
            .iter()
            .map(edge_distance)
            .fold(f64::INFINITY, f64::min),
    };
    Ok(min)
}

fn band_label(distance: f64, theta0: f64, theta1: f64) -> StageOneLabel {
    if distance <= theta0 {
        StageOneLabel::Normal
    } else if distance >= theta1 {
        StageOneLabel::Abnormal
    } else {
        StageOneLabel::Uncertain
    }
}

fn check_pool(pool: &ClassPool, expected: Label) -> Result<()> {
    if pool.class() != expected {
        return Err(Error::Config(format!(
            "expected a {expected:?} pool, got {:?}",
            pool.class()
        )));
    }
    Ok(())
}

fn classify_with_tree(
    query_id: usize,
    x: &[f64],
    normal_pool: &ClassPool,
    config: &ClassifierConfig,
) -> Result<(StageOneVerdict, MinSpanTree)> {
    let local = local_tree(x, normal_pool, config)?;
    let (theta0, theta1) = (local.tree.theta0, local.tree.theta1);
    let verdict = StageOneVerdict {
        query_id,
        label: band_label(local.distance, theta0, theta1),
        distance: local.distance,
        theta0,
        theta1,
    };
    Ok((verdict, local.tree))
}

/// Stage one for a single query.
pub fn stage_one_classify(
    query_id: usize,
    x: &[f64],
    normal_pool: &ClassPool,
    config: &ClassifierConfig,
) -> Result<StageOneVerdict> {
    check_pool(normal_pool, Label::Normal)?;
    classify_with_tree(query_id, x, normal_pool, config).map(|(v, _)| v)
}

/// Gathers every stage-one reject into the abnormal pool.
pub fn build_abnormal_pool(verdicts: &[StageOneVerdict], queries: &Points) -> ClassPool {
    let rejected: Vec<usize> = verdicts
        .iter()
        .filter(|v| v.label == StageOneLabel::Abnormal)
        .map(|v| v.query_id)
        .collect();
    ClassPool::predicted_abnormal(queries.select(&rejected))
}

/// Sample standard deviation (divisor `n - 1`); zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

fn zeta_from(local: &LocalTree) -> ZetaInputs {
    let spread = sample_std(&local.neighbor_distances);
    ZetaInputs {
        d: local.distance,
        neighbor_count: local.neighbor_distances.len(),
        spread,
        zeta: local.distance * (spread + 1.0),
    }
}

/// ζ inputs of `x` against one class: tree distance `d`, spread `s` of the
/// distances to the `min(γ, |pool|)` nearest rows, and `ζ = d·(s + 1)`.
pub fn zeta_for_class(
    x: &[f64],
    pool: &ClassPool,
    config: &ClassifierConfig,
) -> Result<ZetaInputs> {
    if pool.is_empty() {
        return Err(Error::ClassUnavailable {
            class: match pool.class() {
                Label::Normal => "normal",
                Label::Abnormal => "abnormal",
            },
        });
    }
    local_tree(x, pool, config).map(|local| zeta_from(&local))
}

/// Places a stage-two decision strictly inside the stage-one band, with every
/// normal below every abnormal, ordered within each label by ζ₀ relative to ζ₁.
fn stage_two_score(stage_one: &StageOneVerdict, label: Label, zeta0: f64, zeta1: f64) -> f64 {
    let sum = zeta0 + zeta1;
    let relative = if sum > 0.0 {
        (zeta0 - zeta1) / sum
    } else {
        0.0
    };
    let u = (1.0 + relative) / 2.0;
    let offset = match label {
        Label::Normal => (1.0 + u) / 5.0,
        Label::Abnormal => (3.0 + u) / 5.0,
    };
    stage_one.theta0 + (stage_one.theta1 - stage_one.theta0) * offset
}

fn resolve_with_trees(
    stage_one: &StageOneVerdict,
    x: &[f64],
    normal_pool: &ClassPool,
    abnormal_pool: &ClassPool,
    config: &ClassifierConfig,
) -> Result<(FinalVerdict, Vec<(Label, LocalTree)>)> {
    let normal = local_tree(x, normal_pool, config)?;
    let normal_zeta = zeta_from(&normal);
    let normal_threshold = normal.tree.theta1;

    if abnormal_pool.is_empty() {
        let label = if normal.distance <= stage_one.theta1 {
            Label::Normal
        } else {
            Label::Abnormal
        };
        let verdict = FinalVerdict {
            query_id: stage_one.query_id,
            stage_one: stage_one.label,
            label,
            decided_at: DecidedAt::Stage2Fallback,
            d0: stage_one.distance,
            stage_two: Some(StageTwoDetail {
                normal: normal_zeta,
                normal_threshold,
                abnormal: None,
                abnormal_threshold: None,
            }),
            score: stage_one.distance,
        };
        return Ok((verdict, vec![(Label::Normal, normal)]));
    }

    let abnormal = local_tree(x, abnormal_pool, config)?;
    let abnormal_zeta = zeta_from(&abnormal);
    let abnormal_threshold = abnormal.tree.theta1;

    let accepts_normal = normal.distance <= normal_threshold;
    let accepts_abnormal = abnormal.distance <= abnormal_threshold;
    let (label, decided_at) = match (accepts_normal, accepts_abnormal) {
        (true, false) => (Label::Normal, DecidedAt::Stage2Exclusive),
        (false, true) => (Label::Abnormal, DecidedAt::Stage2Exclusive),
        _ if normal_zeta.zeta <= abnormal_zeta.zeta => (Label::Normal, DecidedAt::Stage2Zeta),
        _ => (Label::Abnormal, DecidedAt::Stage2Zeta),
    };
    let verdict = FinalVerdict {
        query_id: stage_one.query_id,
        stage_one: stage_one.label,
        label,
        decided_at,
        d0: stage_one.distance,
        stage_two: Some(StageTwoDetail {
            normal: normal_zeta,
            normal_threshold,
            abnormal: Some(abnormal_zeta),
            abnormal_threshold: Some(abnormal_threshold),
        }),
        score: stage_two_score(stage_one, label, normal_zeta.zeta, abnormal_zeta.zeta),
    };
    Ok((
        verdict,
        vec![(Label::Normal, normal), (Label::Abnormal, abnormal)],
    ))
}

/// Stage two for a query that stage one left uncertain.
///
/// Each class gets its own small tree with acceptance frontier at the
/// `alpha1` quantile of its edge weights. A single accepting tree decides;
/// otherwise the smaller ζ wins, ties going to normal. With an empty
/// abnormal pool the query is normal iff `d0 ≤ θ₁`.
pub fn stage_two_resolve(
    stage_one: &StageOneVerdict,
    x: &[f64],
    normal_pool: &ClassPool,
    abnormal_pool: &ClassPool,
    config: &ClassifierConfig,
) -> Result<FinalVerdict> {
    check_pool(normal_pool, Label::Normal)?;
    check_pool(abnormal_pool, Label::Abnormal)?;
    if stage_one.label != StageOneLabel::Uncertain {
        return Err(Error::Config(format!(
            "query {} was not uncertain after stage one",
            stage_one.query_id
        )));
    }
    resolve_with_trees(stage_one, x, normal_pool, abnormal_pool, config).map(|(v, _)| v)
}

fn settled_at_stage_one(v: &StageOneVerdict) -> FinalVerdict {
    let label = match v.label {
        StageOneLabel::Normal => Label::Normal,
        StageOneLabel::Abnormal => Label::Abnormal,
        StageOneLabel::Uncertain => unreachable!("uncertain verdicts go to stage two"),
    };
    FinalVerdict {
        query_id: v.query_id,
        stage_one: v.label,
        label,
        decided_at: DecidedAt::Stage1,
        d0: v.distance,
        stage_two: None,
        score: v.distance,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PipelineStats {
    pub stage1_normal: usize,
    pub stage1_abnormal: usize,
    pub uncertain: usize,
    pub stage2_exclusive: usize,
    pub stage2_zeta: usize,
    pub stage2_fallback: usize,
    pub abnormal_pool_size: usize,
    pub stage1_seconds: f64,
    pub stage2_seconds: f64,
    /// Sum of per-query processing time across workers.
    pub query_seconds: f64,
    pub mean_query_millis: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub stage_one: Vec<StageOneVerdict>,
    pub verdicts: Vec<FinalVerdict>,
    pub stats: PipelineStats,
    pub traces: Vec<TraceRecord>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PipelineOptions {
    pub classifier: ClassifierConfig,
    pub trace: bool,
}

/// Runs both stages over `queries`. Stage one runs in parallel over all
/// queries; the abnormal pool is then frozen and the uncertain queries are
/// resolved in parallel. Output order follows query order.
pub fn run_pipeline(
    train_normal: &ClassPool,
    queries: &Points,
    options: &PipelineOptions,
) -> Result<PipelineOutput> {
    let config = &options.classifier;
    config.thresholds.validate()?;
    check_pool(train_normal, Label::Normal)?;
    if train_normal.is_empty() {
        return Err(Error::EmptyPool);
    }
    if queries.dim() != train_normal.dim() {
        return Err(Error::DimensionMismatch {
            expected: train_normal.dim(),
            found: queries.dim(),
        });
    }
    let trace = options.trace;

    let started = Instant::now();
    let first: Vec<(StageOneVerdict, Option<TraceRecord>, Duration)> = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let t = Instant::now();
            let (verdict, tree) = classify_with_tree(q, queries.row(q), train_normal, config)?;
            let record = trace.then_some(TraceRecord {
                query_id: q,
                stage: 1,
                class: Label::Normal,
                distance: verdict.distance,
                tree,
            });
            Ok((verdict, record, t.elapsed()))
        })
        .collect::<Result<_>>()?;
    let stage1_seconds = started.elapsed().as_secs_f64();

    let mut traces = Vec::new();
    let mut query_time = Duration::ZERO;
    let mut stage_one = Vec::with_capacity(first.len());
    for (verdict, record, elapsed) in first {
        stage_one.push(verdict);
        traces.extend(record);
        query_time += elapsed;
    }

    let abnormal_pool = build_abnormal_pool(&stage_one, queries);

    let started = Instant::now();
    let uncertain: Vec<&StageOneVerdict> = stage_one
        .iter()
        .filter(|v| v.label == StageOneLabel::Uncertain)
        .collect();
    let second: Vec<(FinalVerdict, Vec<TraceRecord>, Duration)> = uncertain
        .par_iter()
        .map(|&v| {
            let t = Instant::now();
            let x = queries.row(v.query_id);
            let (verdict, trees) = resolve_with_trees(v, x, train_normal, &abnormal_pool, config)?;
            let records = if trace {
                trees
                    .into_iter()
                    .map(|(class, local)| TraceRecord {
                        query_id: v.query_id,
                        stage: 2,
                        class,
                        distance: local.distance,
                        tree: local.tree,
                    })
                    .collect()
            } else {
                Vec::new()
            };
            Ok((verdict, records, t.elapsed()))
        })
        .collect::<Result<_>>()?;
    let stage2_seconds = started.elapsed().as_secs_f64();

    let mut stats = PipelineStats {
        abnormal_pool_size: abnormal_pool.len(),
        stage1_seconds,
        stage2_seconds,
        ..PipelineStats::default()
    };
    let mut resolved = second.into_iter();
    let mut verdicts = Vec::with_capacity(stage_one.len());
    for v in &stage_one {
        match v.label {
            StageOneLabel::Normal => {
                stats.stage1_normal += 1;
                verdicts.push(settled_at_stage_one(v));
            }
            StageOneLabel::Abnormal => {
                stats.stage1_abnormal += 1;
                verdicts.push(settled_at_stage_one(v));
            }
            StageOneLabel::Uncertain => {
                stats.uncertain += 1;
                let (verdict, records, elapsed) =
                    resolved.next().expect("one resolution per uncertain query");
                debug_assert_eq!(verdict.query_id, v.query_id);
                match verdict.decided_at {
                    DecidedAt::Stage2Exclusive => stats.stage2_exclusive += 1,
                    DecidedAt::Stage2Zeta => stats.stage2_zeta += 1,
                    DecidedAt::Stage2Fallback => stats.stage2_fallback += 1,
                    DecidedAt::Stage1 => unreachable!(),
                }
                verdicts.push(verdict);
                traces.extend(records);
                query_time += elapsed;
            }
        }
    }
    stats.query_seconds = query_time.as_secs_f64();
    if !verdicts.is_empty() {
        stats.mean_query_millis = stats.query_seconds * 1000.0 / verdicts.len() as f64;
    }
    traces.sort_by_key(|r| (r.query_id, r.stage));
    Ok(PipelineOutput {
        stage_one,
        verdicts,
        stats,
        traces,
    })
}

pub const VERDICTS_HEADER: [&str; 9] = [
    "query_id",
    "stage1_label",
    "final_label",
    "d0",
    "d1",
    "zeta0",
    "zeta1",
    "decided_at",
    "score",
];

/// Writes one CSV row per verdict under [`VERDICTS_HEADER`], keyed by the
/// stable row id `ids[query_id]`. The `d1`, `zeta0` and `zeta1` cells are
/// empty when the value was not computed.
pub fn write_verdicts_csv(
    path: impl AsRef<Path>,
    ids: &[u64],
    verdicts: &[FinalVerdict],
) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != verdicts.len() {
        return Err(Error::Config(format!(
            "{} row ids for {} verdicts",
            ids.len(),
            verdicts.len()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "{}", VERDICTS_HEADER.join(","))?;
        for v in verdicts {
            let detail = v.stage_two.as_ref();
            let opt = |x: Option<f64>| x.map(|x| x.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                ids[v.query_id],
                v.stage_one,
                v.label.as_u8(),
                v.d0,
                opt(detail.and_then(|d| d.abnormal).map(|a| a.d)),
                opt(detail.map(|d| d.normal.zeta)),
                opt(detail.and_then(|d| d.abnormal).map(|a| a.zeta)),
                v.decided_at.as_str(),
                v.score,
            )?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Minimal view of a verdicts file: enough to recompute metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct VerdictRow {
    /// Stable row id from the feature file.
    pub query_id: u64,
    pub stage_one: StageOneLabel,
    pub label: Label,
    pub decided_at: DecidedAt,
    pub score: f64,
}

pub fn read_verdicts_csv(path: impl AsRef<Path>) -> Result<Vec<VerdictRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?;
    if headers.iter().ne(VERDICTS_HEADER.iter().copied()) {
        return Err(Error::Format {
            offset: 0,
            message: format!("unexpected verdicts header {:?}", headers),
        });
    }
    let mut rows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let bad = |message: String| Error::Data { row, message };
        let query_id = record[0]
            .parse()
            .map_err(|e| bad(format!("query_id: {e}")))?;
        let stage_one = record[1].parse().map_err(bad)?;
        let label = match &record[2] {
            "0" => Label::Normal,
            "1" => Label::Abnormal,
            other => return Err(bad(format!("final_label {other:?}"))),
        };
        let decided_at = record[7].parse().map_err(bad)?;
        let score = record[8].parse().map_err(|e| bad(format!("score: {e}")))?;
        rows.push(VerdictRow {
            query_id,
            stage_one,
            label,
            decided_at,
            score,
        });
    }
    Ok(rows)
}
