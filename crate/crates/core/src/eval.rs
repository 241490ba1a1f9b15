//! Test-split metrics, multi-seed aggregation and the experiment runners
//! (threshold sweep, λ/μ grid, ablation over variants).

use std::fmt::Write as _;
use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::datamodel::{Dataset, Label, Split};
use crate::graph::{build_graph, CrossModalGraph, GraphError, SimilarityConfig};
use crate::losses::LossValues;
use crate::ndops::TensorError;
use crate::trainer::{train_seeded, TrainConfig, TrainError, TrainedModel, Variant};

#[derive(Error, Debug)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("{truth} true labels but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("test node {0} has no label")]
    MissingLabel(usize),
    #[error("tau {0} outside (0, 1]")]
    InvalidTau(f64),
    #[error("grid value {0} must be positive")]
    InvalidGridValue(f64),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Single-run scores in percent, Fake as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize, what: &str) -> f64 {
    if den == 0 {
        log::warn!("{what} undefined (zero denominator); reporting 0");
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(y_true: &[Label], y_pred: &[Label]) -> Result<Metrics, EvalError> {
    if y_true.len() != y_pred.len() {
        return Err(EvalError::LengthMismatch {
            truth: y_true.len(),
            pred: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (k, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        let truth_fake = match t {
            Label::Fake => true,
            Label::Real => false,
            Label::Unlabeled => return Err(EvalError::MissingLabel(k)),
        };
        match (truth_fake, p == Label::Fake) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let precision = ratio(tp, tp + fp, "precision");
    let recall = ratio(tp, tp + fn_, "recall");
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        log::warn!("f1 undefined (precision + recall = 0); reporting 0");
        0.0
    };
    Ok(Metrics {
        accuracy: 100.0 * (tp + tn) as f64 / y_true.len() as f64,
        precision: 100.0 * precision,
        recall: 100.0 * recall,
        f1: 100.0 * f1,
    })
}

/// Mean and sample standard deviation (0 for a single value).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

impl std::fmt::Display for Stat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: Stat,
    pub precision: Stat,
    pub recall: Stat,
    pub f1: Stat,
    pub n_runs: usize,
    pub per_run: Vec<Metrics>,
}

impl MetricsReport {
    pub fn from_runs(per_run: Vec<Metrics>) -> Self {
        let col = |f: fn(&Metrics) -> f64| Stat::of(&per_run.iter().map(f).collect::<Vec<_>>());
        MetricsReport {
            accuracy: col(|m| m.accuracy),
            precision: col(|m| m.precision),
            recall: col(|m| m.recall),
            f1: col(|m| m.f1),
            n_runs: per_run.len(),
            per_run,
        }
    }
}

/// Scores a model on the test split, propagating over `g` (all nodes).
pub fn evaluate(model: &TrainedModel, ds: &Dataset, g: &CrossModalGraph) -> Result<Metrics, EvalError> {
    let pred = model.predict_dataset(ds, g)?.argmax();
    let test = ds.indices_in(Split::Test);
    let truth: Vec<Label> = test.iter().map(|&i| ds.records[i].label).collect();
    let hard: Vec<Label> = test.iter().map(|&i| pred[i]).collect();
    metrics(&truth, &hard)
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub metrics: Metrics,
    pub history: Vec<LossValues>,
    pub unseen_ce_reads: usize,
    pub model: TrainedModel,
}

/// Trains and evaluates `cfg.runs` seeds (`cfg.seed`, `cfg.seed + 1`, …).
/// Runs are independent and may execute on different worker threads;
/// results come back in seed order.
pub fn run_protocol(
    ds: &Dataset,
    g: &CrossModalGraph,
    cfg: &TrainConfig,
) -> Result<Vec<RunResult>, EvalError> {
    if ds.indices_in(Split::Test).is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    (0..cfg.runs)
        .into_par_iter()
        .map(|k| {
            let seed = cfg.run_seed(k);
            let out = train_seeded(ds, g, cfg, seed)?;
            let m = evaluate(&out.model, ds, g)?;
            Ok(RunResult {
                seed,
                metrics: m,
                history: out.history,
                unseen_ce_reads: out.unseen_ce_reads,
                model: out.model,
            })
        })
        .collect()
}

pub fn report(runs: &[RunResult]) -> MetricsReport {
    MetricsReport::from_runs(runs.iter().map(|r| r.metrics).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TauRow {
    pub tau: f64,
    pub edges: usize,
    pub avg_connections: f64,
    pub report: MetricsReport,
}

pub fn sweep_tau(ds: &Dataset, cfg: &TrainConfig, taus: &[f64]) -> Result<Vec<TauRow>, EvalError> {
    if let Some(&t) = taus.iter().find(|&&t| !(t > 0.0 && t <= 1.0)) {
        return Err(EvalError::InvalidTau(t));
    }
    taus.par_iter()
        .map(|&tau| {
            let sim = SimilarityConfig {
                tau,
                ..cfg.similarity()
            };
            let g = build_graph(ds, &sim)?;
            let run_cfg = TrainConfig {
                tau,
                ..cfg.clone()
            };
            let runs = run_protocol(ds, &g, &run_cfg)?;
            Ok(TauRow {
                tau,
                edges: g.edge_count(),
                avg_connections: g.avg_connections(),
                report: report(&runs),
            })
        })
        .collect()
}

/// Whether edge counts never increase as τ increases.
pub fn edges_monotone(rows: &[TauRow]) -> bool {
    let mut sorted: Vec<&TauRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    sorted.windows(2).all(|w| w[1].edges <= w[0].edges)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub lambda: f64,
    pub mu: f64,
    pub report: MetricsReport,
}

/// Every `(λ, μ)` pair from `values × values`, λ-major.
pub fn grid_lambda_mu(
    ds: &Dataset,
    g: &CrossModalGraph,
    cfg: &TrainConfig,
    values: &[f64],
) -> Result<Vec<GridCell>, EvalError> {
    if let Some(&v) = values.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
        return Err(EvalError::InvalidGridValue(v));
    }
    let pairs: Vec<(f64, f64)> = values
        .iter()
        .flat_map(|&l| values.iter().map(move |&m| (l, m)))
        .collect();
    pairs
        .par_iter()
        .map(|&(lambda, mu)| {
            let c = TrainConfig {
                lambda,
                mu,
                ..cfg.clone()
            };
            let runs = run_protocol(ds, g, &c)?;
            Ok(GridCell {
                lambda,
                mu,
                report: report(&runs),
            })
        })
        .collect()
}

pub fn best_cell(cells: &[GridCell]) -> Option<&GridCell> {
    cells
        .iter()
        .max_by(|a, b| a.report.accuracy.mean.total_cmp(&b.report.accuracy.mean))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: MetricsReport,
    pub unseen_ce_reads: usize,
}

/// All five variants with the same seeds, graph and hyperparameters.
pub fn ablation(ds: &Dataset, g: &CrossModalGraph, cfg: &TrainConfig) -> Result<Vec<AblationRow>, EvalError> {
    Variant::ALL
        .par_iter()
        .map(|&variant| {
            let c = TrainConfig {
                variant,
                ..cfg.clone()
            };
            let runs = run_protocol(ds, g, &c)?;
            Ok(AblationRow {
                variant,
                report: report(&runs),
                unseen_ce_reads: runs.iter().map(|r| r.unseen_ce_reads).sum(),
            })
        })
        .collect()
}

const METRIC_COLS: &str = "acc_mean,acc_std,prec_mean,prec_std,rec_mean,rec_std,f1_mean,f1_std";

fn metric_fields(r: &MetricsReport) -> String {
    [r.accuracy, r.precision, r.recall, r.f1]
        .iter()
        .map(|s| format!("{},{}", s.mean, s.std))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn write_runs_csv<W: Write>(runs: &[RunResult], mut w: W) -> io::Result<()> {
    writeln!(w, "seed,accuracy,precision,recall,f1")?;
    for r in runs {
        let m = r.metrics;
        writeln!(w, "{},{},{},{},{}", r.seed, m.accuracy, m.precision, m.recall, m.f1)?;
    }
    Ok(())
}

pub fn write_tau_csv<W: Write>(rows: &[TauRow], mut w: W) -> io::Result<()> {
    writeln!(w, "tau,edges,avg_connections,{METRIC_COLS}")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.tau, r.edges, r.avg_connections, metric_fields(&r.report))?;
    }
    Ok(())
}

pub fn write_grid_csv<W: Write>(cells: &[GridCell], mut w: W) -> io::Result<()> {
    writeln!(w, "lambda,mu,{METRIC_COLS}")?;
    for c in cells {
        writeln!(w, "{},{},{}", c.lambda, c.mu, metric_fields(&c.report))?;
    }
    Ok(())
}

pub fn write_ablation_csv<W: Write>(rows: &[AblationRow], mut w: W) -> io::Result<()> {
    writeln!(w, "row,variant,{METRIC_COLS},unseen_ce_reads")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.variant.row(),
            r.variant,
            metric_fields(&r.report),
            r.unseen_ce_reads
        )?;
    }
    Ok(())
}

/// Plain-text table: one line per labelled report.
pub fn summary_table<'a>(rows: impl IntoIterator<Item = (String, &'a MetricsReport)>) -> String {
    let mut out = format!(
        "{:<24} {:>16} {:>16} {:>16} {:>16}\n",
        "setting", "accuracy", "precision", "recall", "f1"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<24} {:>16} {:>16} {:>16} {:>16}",
            name,
            r.accuracy.to_string(),
            r.precision.to_string(),
            r.recall.to_string(),
            r.f1.to_string()
        );
    }
    out
}
