//! ROC/AUC metrics, per-class experiment reports and γ sweeps.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::classifier::{
    run_pipeline, ClassifierConfig, EdgeScan, FinalVerdict, PipelineOptions, PipelineOutput,
    PipelineStats,
};
use crate::error::{Error, Result};
use crate::features::{ExperimentSplit, Label};

fn class_counts(scores: &[f64], truth: &[Label]) -> Result<(usize, usize)> {
    if scores.len() != truth.len() {
        return Err(Error::UndefinedAuc(format!(
            "{} scores for {} labels",
            scores.len(),
            truth.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::UndefinedAuc(format!("score {s} is not comparable")));
    }
    let abnormal = truth.iter().filter(|&&l| l == Label::Abnormal).count();
    let normal = truth.len() - abnormal;
    if abnormal == 0 || normal == 0 {
        return Err(Error::UndefinedAuc(
            "both normal and abnormal samples are required".into(),
        ));
    }
    Ok((normal, abnormal))
}

/// Probability that a random abnormal sample outscores a random normal one,
/// ties counting one half. Computed from midranks (Mann–Whitney U).
pub fn auc(scores: &[f64], truth: &[Label]) -> Result<f64> {
    let (normal, abnormal) = class_counts(scores, truth)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut abnormal_rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end share their mean.
        let midrank = (start + 1 + end) as f64 / 2.0;
        let in_group = order[start..end]
            .iter()
            .filter(|&&i| truth[i] == Label::Abnormal)
            .count();
        abnormal_rank_sum += midrank * in_group as f64;
        start = end;
    }
    let (n0, n1) = (normal as f64, abnormal as f64);
    let u = abnormal_rank_sum - n1 * (n1 + 1.0) / 2.0;
    Ok(u / (n0 * n1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Samples scoring at or above this value are called abnormal.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Trapezoidal area under the curve.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
            .sum()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(out, "fpr,tpr,threshold")?;
            for p in &self.points {
                writeln!(out, "{},{},{}", p.fpr, p.tpr, p.threshold)?;
            }
            out.flush()
        };
        write(&mut out).map_err(|e| Error::io(path, e))
    }
}

/// ROC curve from a descending sweep over the distinct scores, treating
/// abnormal as the positive class. Starts at (0, 0) and ends at (1, 1).
pub fn roc_curve(scores: &[f64], truth: &[Label]) -> Result<RocCurve> {
    let (normal, abnormal) = class_counts(scores, truth)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut start = 0;
    while start < order.len() {
        let threshold = scores[order[start]];
        let mut end = start;
        while end < order.len() && scores[order[end]] == threshold {
            match truth[order[end]] {
                Label::Abnormal => tp += 1,
                Label::Normal => fp += 1,
            }
            end += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / normal as f64,
            tpr: tp as f64 / abnormal as f64,
            threshold,
        });
        start = end;
    }
    Ok(RocCurve { points })
}

/// Counts with abnormal as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_labels(predicted: &[Label], truth: &[Label]) -> Self {
        let mut c = Confusion::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (Label::Abnormal, Label::Abnormal) => c.tp += 1,
                (Label::Abnormal, Label::Normal) => c.fp += 1,
                (Label::Normal, Label::Normal) => c.tn += 1,
                (Label::Normal, Label::Abnormal) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AucVariant {
    /// AUC of the continuous verdict score.
    ScoreBased,
    /// AUC of the hard 0/1 labels (balanced accuracy).
    LabelBased,
}

impl AucVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            AucVariant::ScoreBased => "score_based",
            AucVariant::LabelBased => "label_based",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AucSummary {
    pub auc_variant: AucVariant,
    pub per_class_auc: BTreeMap<u16, f64>,
    pub mean_auc: f64,
}

impl AucSummary {
    fn new(auc_variant: AucVariant, per_class_auc: BTreeMap<u16, f64>) -> Self {
        let mean_auc = if per_class_auc.is_empty() {
            f64::NAN
        } else {
            per_class_auc.values().sum::<f64>() / per_class_auc.len() as f64
        };
        AucSummary {
            auc_variant,
            per_class_auc,
            mean_auc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub gamma: usize,
    pub alpha0: f64,
    pub alpha1: f64,
    pub edge_scan: EdgeScan,
}

impl From<&ClassifierConfig> for ConfigEcho {
    fn from(c: &ClassifierConfig) -> Self {
        ConfigEcho {
            gamma: c.thresholds.gamma,
            alpha0: c.thresholds.alpha0,
            alpha1: c.thresholds.alpha1,
            edge_scan: c.edge_scan,
        }
    }
}

/// Results of one one-class experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassOutcome {
    pub normal_class: u16,
    pub train_size: usize,
    pub test_normal: usize,
    pub test_abnormal: usize,
    pub auc_score_based: f64,
    pub auc_label_based: f64,
    pub confusion: Confusion,
    pub stage_counts: PipelineStats,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config_echo: ConfigEcho,
    pub score_based: AucSummary,
    pub label_based: AucSummary,
    pub classes: Vec<ClassOutcome>,
    pub wall_time_seconds: f64,
}

impl EvalReport {
    pub fn from_outcomes(config: &ClassifierConfig, classes: Vec<ClassOutcome>) -> Self {
        let score = classes
            .iter()
            .map(|c| (c.normal_class, c.auc_score_based))
            .collect();
        let label = classes
            .iter()
            .map(|c| (c.normal_class, c.auc_label_based))
            .collect();
        EvalReport {
            config_echo: config.into(),
            score_based: AucSummary::new(AucVariant::ScoreBased, score),
            label_based: AucSummary::new(AucVariant::LabelBased, label),
            wall_time_seconds: classes.iter().map(|c| c.wall_time_seconds).sum(),
            classes,
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::json(path, e))?;
    writeln!(out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Everything produced by one experiment.
#[derive(Debug, Clone)]
pub struct ClassRun {
    pub outcome: ClassOutcome,
    pub output: PipelineOutput,
    pub roc: RocCurve,
}

pub fn scores_of(verdicts: &[FinalVerdict]) -> Vec<f64> {
    verdicts.iter().map(|v| v.score).collect()
}

pub fn labels_as_scores(labels: impl IntoIterator<Item = Label>) -> Vec<f64> {
    labels.into_iter().map(|l| f64::from(l.as_u8())).collect()
}

/// Runs the pipeline on one split and scores it against the held-back truth.
pub fn evaluate_split(split: &ExperimentSplit, options: &PipelineOptions) -> Result<ClassRun> {
    if split.queries.is_empty() {
        return Err(Error::NoQueries(format!(
            "test split for class {}",
            split.normal_class
        )));
    }
    let started = Instant::now();
    let output = run_pipeline(&split.train_pool, &split.queries, options)?;
    let wall_time_seconds = started.elapsed().as_secs_f64();

    let predicted: Vec<Label> = output.verdicts.iter().map(|v| v.label).collect();
    let scores = scores_of(&output.verdicts);
    let auc_score_based = auc(&scores, &split.truth)?;
    let auc_label_based = auc(&labels_as_scores(predicted.iter().copied()), &split.truth)?;
    let roc = roc_curve(&scores, &split.truth)?;
    let (test_normal, test_abnormal) = split.test_composition();
    let outcome = ClassOutcome {
        normal_class: split.normal_class,
        train_size: split.train_pool.len(),
        test_normal,
        test_abnormal,
        auc_score_based,
        auc_label_based,
        confusion: Confusion::from_labels(&predicted, &split.truth),
        stage_counts: output.stats,
        wall_time_seconds,
    };
    Ok(ClassRun {
        outcome,
        output,
        roc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub gamma: usize,
    pub score_based: AucSummary,
    pub label_based: AucSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub classes: Vec<u16>,
    pub rows: Vec<SweepRow>,
}

/// One full evaluation per γ over every split, rows in the order given.
pub fn sweep_gamma(
    splits: &[ExperimentSplit],
    gammas: &[usize],
    options: &PipelineOptions,
) -> Result<SweepTable> {
    if gammas.is_empty() {
        return Err(Error::Config("gamma list is empty".into()));
    }
    if splits.is_empty() {
        return Err(Error::Config("no normal classes to sweep".into()));
    }
    let mut rows = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        let mut opts = *options;
        opts.classifier.thresholds.gamma = gamma;
        opts.classifier.thresholds.validate()?;
        let outcomes = splits
            .iter()
            .map(|s| evaluate_split(s, &opts).map(|run| run.outcome))
            .collect::<Result<Vec<_>>>()?;
        let report = EvalReport::from_outcomes(&opts.classifier, outcomes);
        rows.push(SweepRow {
            gamma,
            score_based: report.score_based,
            label_based: report.label_based,
        });
    }
    Ok(SweepTable {
        classes: splits.iter().map(|s| s.normal_class).collect(),
        rows,
    })
}

fn column_names(classes: &[u16], names: Option<&[String]>) -> Vec<String> {
    classes
        .iter()
        .map(|&c| {
            names
                .and_then(|n| n.get(usize::from(c)))
                .cloned()
                .unwrap_or_else(|| format!("class_{c}"))
        })
        .collect()
}

impl SweepTable {
    /// One row per (γ, variant); one column per normal class plus the mean.
    pub fn write_csv(&self, path: impl AsRef<Path>, class_names: Option<&[String]>) -> Result<()> {
        let path = path.as_ref();
        let mut lines = vec![format!(
            "gamma,variant,{},mean",
            column_names(&self.classes, class_names).join(",")
        )];
        for row in &self.rows {
            for summary in [&row.score_based, &row.label_based] {
                let cells: Vec<String> = self
                    .classes
                    .iter()
                    .map(|c| summary.per_class_auc[c].to_string())
                    .collect();
                lines.push(format!(
                    "{},{},{},{}",
                    row.gamma,
                    summary.auc_variant.as_str(),
                    cells.join(","),
                    summary.mean_auc
                ));
            }
        }
        write_lines(path, &lines)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

/// Per-class AUC table with a trailing mean column, one row per variant.
pub fn write_auc_table(
    path: impl AsRef<Path>,
    report: &EvalReport,
    class_names: Option<&[String]>,
) -> Result<()> {
    let classes: Vec<u16> = report.classes.iter().map(|c| c.normal_class).collect();
    let mut lines = vec![format!(
        "method,{},mean",
        column_names(&classes, class_names).join(",")
    )];
    for summary in [&report.score_based, &report.label_based] {
        let cells: Vec<String> = classes
            .iter()
            .map(|c| summary.per_class_auc[c].to_string())
            .collect();
        lines.push(format!(
            "OCmst gamma={} ({}),{},{}",
            report.config_echo.gamma,
            summary.auc_variant.as_str(),
            cells.join(","),
            summary.mean_auc
        ));
    }
    write_lines(path.as_ref(), &lines)
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Abnormal as A, Normal as N};

    #[test]
    fn separated_scores() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[N, N, A, A]).unwrap(), 1.0);
        assert_eq!(auc(&[0.9, 0.8, 0.2, 0.1], &[N, N, A, A]).unwrap(), 0.0);
    }

    #[test]
    fn all_ties_is_half() {
        assert_eq!(auc(&[3.0; 5], &[N, A, N, A, A]).unwrap(), 0.5);
        let roc = roc_curve(&[3.0; 4], &[N, A, N, A]).unwrap();
        assert_eq!(roc.points.len(), 2);
        assert_eq!((roc.points[1].fpr, roc.points[1].tpr), (1.0, 1.0));
        assert_eq!(roc.area(), 0.5);
    }

    #[test]
    fn four_point_case() {
        assert_eq!(auc(&[1.0, 2.0, 3.0, 4.0], &[N, A, N, A]).unwrap(), 0.75);
    }

    #[test]
    fn two_point_roc() {
        let roc = roc_curve(&[0.0, 1.0], &[N, A]).unwrap();
        let pts: Vec<(f64, f64)> = roc.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(pts, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(roc.area(), 1.0);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            auc(&[1.0, 2.0], &[N, N]).unwrap_err(),
            Error::UndefinedAuc(_)
        ));
        assert!(roc_curve(&[1.0], &[A]).is_err());
        assert!(auc(&[1.0, 2.0], &[N]).is_err());
        assert!(auc(&[f64::NAN, 2.0], &[N, A]).is_err());
    }

    #[test]
    fn confusion_counts() {
        let c = Confusion::from_labels(&[N, A, A, N], &[N, A, N, A]);
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (1, 1, 1, 1));
        assert_eq!(c.total(), 4);
    }

    #[test]
    fn summary_mean_is_unweighted() {
        let s = AucSummary::new(
            AucVariant::ScoreBased,
            [(0u16, 0.5), (3, 1.0)].into_iter().collect(),
        );
        assert_eq!(s.mean_auc, 0.75);
    }
}
