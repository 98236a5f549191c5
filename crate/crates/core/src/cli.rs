//! Command-line front end.
//!
//! Output files land under `--out-dir` with fixed names:
//!
//! | command            | files |
//! |--------------------|-------|
//! | `evaluate`         | `report.json`, `auc_table.csv`, `verdicts_class_<c>.csv`, `roc_class_<c>.csv` |
//! | `predict`          | `verdicts.csv` |
//! | `sweep-gamma`      | `sweep_gamma.csv`, `sweep_gamma.json` |
//! | `roc`              | `roc.csv` |
//!
//! With `--trace`, per-query tree dumps go to `trace_class_<c>.jsonl`
//! (`trace.jsonl` for `predict`).

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::classifier::{
    read_verdicts_csv, run_pipeline, write_verdicts_csv, ClassifierConfig, EdgeScan,
    PipelineOptions, TraceRecord,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    auc, evaluate_split, labels_as_scores, roc_curve, sweep_gamma, write_auc_table, EvalReport,
};
use crate::features::{make_one_class_split, read_feature_file, ClassPool, FeatureMatrix, Label};
use crate::mst::ThresholdConfig;

#[derive(Debug, Parser)]
#[command(
    name = "ocmst",
    version,
    about = "One-class novelty detection with minimum spanning trees"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the one-class protocol and write metrics, verdicts and ROC points.
    Evaluate(EvaluateArgs),
    /// Label every test row; test labels, if present, are ignored.
    Predict(PredictArgs),
    /// Repeat `evaluate` for several neighborhood sizes.
    SweepGamma(SweepArgs),
    /// Recompute the ROC curve and AUC from a verdicts file.
    Roc(RocArgs),
    /// Check feature files and print their shape.
    ValidateFeatures(ValidateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Nearest training rows per small tree.
    #[arg(long, default_value_t = 8)]
    pub gamma: usize,
    /// Quantile of tree edge weights for the inner (accept) threshold.
    #[arg(long, default_value_t = 0.1)]
    pub alpha0: f64,
    /// Quantile of tree edge weights for the outer (reject) threshold.
    #[arg(long, default_value_t = 0.8)]
    pub alpha1: f64,
    /// Measure against every tree edge instead of those at the nearest node.
    #[arg(long)]
    pub full_edge_scan: bool,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, env = "OCMST_WORKERS")]
    pub workers: Option<usize>,
}

impl ModelArgs {
    fn classifier(&self) -> Result<ClassifierConfig> {
        let thresholds = ThresholdConfig::new(self.alpha0, self.alpha1, self.gamma)?;
        let scan = if self.full_edge_scan {
            EdgeScan::Full
        } else {
            EdgeScan::IncidentToNearest
        };
        Ok(ClassifierConfig::new(thresholds).with_edge_scan(scan))
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Training features (OCMF binary or CSV).
    #[arg(long)]
    pub train: PathBuf,
    /// Test features (OCMF binary or CSV).
    #[arg(long)]
    pub test: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "ocmst-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Normal class ids; repeat or comma-separate. Defaults to every class.
    #[arg(long, value_delimiter = ',')]
    pub normal_class: Vec<u16>,
    /// Column names for the AUC table, indexed by class id.
    #[arg(long, value_delimiter = ',')]
    pub class_names: Option<Vec<String>>,
    /// Dump every small tree as JSON lines.
    #[arg(long)]
    pub trace: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Class id of the training rows to treat as normal.
    #[arg(long)]
    pub normal_class: u16,
    #[arg(long)]
    pub trace: bool,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',')]
    pub normal_class: Vec<u16>,
    /// Neighborhood sizes, in output order.
    #[arg(long, value_delimiter = ',', default_value = "40,30,20,15,12,8,5")]
    pub gammas: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub class_names: Option<Vec<String>>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct RocArgs {
    /// Verdicts file written by `evaluate` or `predict`.
    #[arg(long)]
    pub verdicts: PathBuf,
    /// Labelled test features the verdicts were computed on.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub normal_class: u16,
    #[arg(long, default_value = "ocmst-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(required = true)]
    pub paths: Vec<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn with_workers<T: Send>(
    workers: Option<usize>,
    job: impl FnOnce() -> Result<T> + Send,
) -> Result<T> {
    if workers == Some(0) {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(job)
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Predict(args) => cmd_predict(&args),
        Command::SweepGamma(args) => cmd_sweep_gamma(&args),
        Command::Roc(args) => cmd_roc(&args),
        Command::ValidateFeatures(args) => cmd_validate(&args),
    }
}

fn create_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_pair(data: &DataArgs) -> Result<(FeatureMatrix, FeatureMatrix)> {
    let train = read_feature_file(&data.train)?;
    let test = read_feature_file(&data.test)?;
    if test.rows() == 0 {
        return Err(Error::NoQueries(data.test.display().to_string()));
    }
    Ok((train, test))
}

fn normal_classes(requested: &[u16], train: &FeatureMatrix) -> Vec<u16> {
    if requested.is_empty() {
        train.classes()
    } else {
        requested.to_vec()
    }
}

fn write_traces(path: &Path, traces: &[TraceRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for record in traces {
        serde_json::to_writer(&mut out, record).map_err(|e| Error::json(path, e))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let config = args.model.classifier()?;
    let (train, test) = load_pair(&args.data)?;
    let classes = normal_classes(&args.normal_class, &train);
    let splits = classes
        .iter()
        .map(|&c| make_one_class_split(&train, &test, c))
        .collect::<Result<Vec<_>>>()?;
    create_out_dir(&args.data.out_dir)?;
    let options = PipelineOptions {
        classifier: config,
        trace: args.trace,
    };
    let out = &args.data.out_dir;

    let mut outcomes = Vec::with_capacity(splits.len());
    for split in &splits {
        let run = with_workers(args.model.workers, || evaluate_split(split, &options))?;
        let c = split.normal_class;
        write_verdicts_csv(
            out.join(format!("verdicts_class_{c}.csv")),
            &split.query_ids,
            &run.output.verdicts,
        )?;
        run.roc.write_csv(out.join(format!("roc_class_{c}.csv")))?;
        if args.trace {
            write_traces(
                &out.join(format!("trace_class_{c}.jsonl")),
                &run.output.traces,
            )?;
        }
        eprintln!(
            "class {c}: AUC {:.4} (score) / {:.4} (label), {} uncertain of {}, {:.1}s",
            run.outcome.auc_score_based,
            run.outcome.auc_label_based,
            run.outcome.stage_counts.uncertain,
            split.truth.len(),
            run.outcome.wall_time_seconds
        );
        outcomes.push(run.outcome);
    }
    let report = EvalReport::from_outcomes(&config, outcomes);
    write_auc_table(
        out.join("auc_table.csv"),
        &report,
        args.class_names.as_deref(),
    )?;
    report.write_json(out.join("report.json"))?;
    println!(
        "mean AUC {:.4} (score-based), {:.4} (label-based)",
        report.score_based.mean_auc, report.label_based.mean_auc
    );
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let config = args.model.classifier()?;
    let (train, test) = load_pair(&args.data)?;
    let labels = train
        .labels
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{} carries no labels", args.data.train.display())))?;
    let rows: Vec<usize> = (0..train.rows())
        .filter(|&i| labels[i] == args.normal_class)
        .collect();
    if rows.is_empty() {
        return Err(Error::MissingClass {
            class: args.normal_class,
            available: train.classes(),
        });
    }
    let pool = ClassPool::ground_truth(train.points.select(&rows), Label::Normal)?;
    // Only the feature values of the test set reach the classifier.
    let queries = test.points;
    let options = PipelineOptions {
        classifier: config,
        trace: args.trace,
    };
    let output = with_workers(args.model.workers, || {
        run_pipeline(&pool, &queries, &options)
    })?;
    create_out_dir(&args.data.out_dir)?;
    write_verdicts_csv(
        args.data.out_dir.join("verdicts.csv"),
        &test.ids,
        &output.verdicts,
    )?;
    if args.trace {
        write_traces(&args.data.out_dir.join("trace.jsonl"), &output.traces)?;
    }
    let s = &output.stats;
    println!(
        "{} queries: {} normal, {} abnormal, {} uncertain at stage one",
        output.verdicts.len(),
        s.stage1_normal,
        s.stage1_abnormal,
        s.uncertain
    );
    Ok(())
}

pub fn cmd_sweep_gamma(args: &SweepArgs) -> Result<()> {
    let config = args.model.classifier()?;
    if args.gammas.is_empty() || args.gammas.contains(&0) {
        return Err(Error::Config(
            "gammas must be a nonempty list of positive integers".into(),
        ));
    }
    let (train, test) = load_pair(&args.data)?;
    let classes = normal_classes(&args.normal_class, &train);
    let splits = classes
        .iter()
        .map(|&c| make_one_class_split(&train, &test, c))
        .collect::<Result<Vec<_>>>()?;
    create_out_dir(&args.data.out_dir)?;
    let options = PipelineOptions {
        classifier: config,
        trace: false,
    };
    let table = with_workers(args.model.workers, || {
        sweep_gamma(&splits, &args.gammas, &options)
    })?;
    let out = &args.data.out_dir;
    table.write_csv(out.join("sweep_gamma.csv"), args.class_names.as_deref())?;
    table.write_json(out.join("sweep_gamma.json"))?;
    for row in &table.rows {
        println!(
            "gamma {:>3}: mean AUC {:.4} (score), {:.4} (label)",
            row.gamma, row.score_based.mean_auc, row.label_based.mean_auc
        );
    }
    Ok(())
}

pub fn cmd_roc(args: &RocArgs) -> Result<()> {
    let verdicts = read_verdicts_csv(&args.verdicts)?;
    let test = read_feature_file(&args.test)?;
    let labels = test
        .labels
        .as_deref()
        .ok_or_else(|| Error::Config(format!("{} carries no labels", args.test.display())))?;
    let by_id: HashMap<u64, u16> = test
        .ids
        .iter()
        .copied()
        .zip(labels.iter().copied())
        .collect();
    let mut truth = Vec::with_capacity(verdicts.len());
    for (row, v) in verdicts.iter().enumerate() {
        let label = by_id.get(&v.query_id).ok_or_else(|| Error::Data {
            row,
            message: format!(
                "query id {} not found in {}",
                v.query_id,
                args.test.display()
            ),
        })?;
        truth.push(if *label == args.normal_class {
            Label::Normal
        } else {
            Label::Abnormal
        });
    }
    let scores: Vec<f64> = verdicts.iter().map(|v| v.score).collect();
    let roc = roc_curve(&scores, &truth)?;
    let label_auc = auc(&labels_as_scores(verdicts.iter().map(|v| v.label)), &truth)?;
    create_out_dir(&args.out_dir)?;
    roc.write_csv(args.out_dir.join("roc.csv"))?;
    println!(
        "AUC {:.6} (score), {:.6} (label), {} points",
        roc.area(),
        label_auc,
        roc.points.len()
    );
    Ok(())
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    for path in &args.paths {
        let m = read_feature_file(path)?;
        let classes = m.classes();
        let mut line = format!("{}: {} rows x {} dims", path.display(), m.rows(), m.dim());
        match &m.labels {
            Some(labels) => {
                let counts: Vec<String> = classes
                    .iter()
                    .map(|c| format!("{c}:{}", labels.iter().filter(|&&l| l == *c).count()))
                    .collect();
                line.push_str(&format!(", classes {{{}}}", counts.join(", ")));
            }
            None => line.push_str(", unlabeled"),
        }
        println!("{line}");
    }
    Ok(())
}
