//! Report files. `report.json`, `median_ranks.csv` and `box_stats.csv` hold
//! only seed-determined values; wall-clock measurements go to `timing.json`
//! and the `wall_ms` column of the curve files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use l2x_core::metrics::BoxSummary;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

impl From<BoxSummary> for BoxStats {
    fn from(s: BoxSummary) -> Self {
        Self {
            min: s.min,
            q1: s.q1,
            median: s.median,
            mean: s.mean,
            q3: s.q3,
            max: s.max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub hidden: usize,
    pub classifier_epochs: usize,
    pub l2x_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub noise_draws: usize,
    pub additive_sin_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSummary {
    /// Mean training cross-entropy per epoch.
    pub train_loss: Vec<f64>,
    pub valid_accuracy: f64,
    /// `mean(max(p, 1 − p))` over the validation set, from the exact `p`.
    pub bayes_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub median_rank: BoxStats,
    pub optimal_median: f64,
    pub post_hoc_accuracy: f64,
    /// Classifier rows evaluated while producing the explanations.
    pub classifier_evaluations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema: u32,
    pub dataset: String,
    pub seed: u64,
    pub d: usize,
    pub k: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub settings: Settings,
    pub classifier: ClassifierSummary,
    /// Mean training objective per epoch.
    pub l2x_objective: Vec<f64>,
    /// Post-hoc accuracy when each sample keeps exactly its true features.
    pub ground_truth_post_hoc_accuracy: f64,
    pub methods: Vec<MethodSummary>,
}

impl BenchmarkReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// Report of the `evaluate` command on a single explanation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema: u32,
    pub method: String,
    pub n: usize,
    pub k: usize,
    pub median_rank: BoxStats,
    pub optimal_median: f64,
    pub post_hoc_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: String,
    pub samples: usize,
    pub total_ns: u64,
    pub per_sample_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub dataset: String,
    pub threads: usize,
    pub classifier_train_ms: f64,
    /// Training time of the explainer, reported apart from explanation time.
    pub l2x_train_ms: f64,
    pub methods: Vec<MethodTiming>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub epoch: usize,
    pub objective: f64,
    pub wall_ms: f64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| Error::io(path, e.into());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

/// `epoch,objective,wall_ms`.
pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    write_rows(
        path,
        &["epoch", "objective", "wall_ms"],
        curve
            .iter()
            .map(|p| vec![p.epoch.to_string(), p.objective.to_string(), format!("{:.3}", p.wall_ms)]),
    )
}

/// `method,dataset,median_rank`, one row per validation sample.
pub fn write_median_ranks(path: &Path, dataset: &str, per_method: &[(String, Vec<f64>)]) -> Result<()> {
    write_rows(
        path,
        &["method", "dataset", "median_rank"],
        per_method.iter().flat_map(|(method, ranks)| {
            ranks
                .iter()
                .map(move |r| vec![method.clone(), dataset.to_owned(), r.to_string()])
        }),
    )
}

/// Box-plot statistics per method, ready for external plotting.
pub fn write_box_stats(path: &Path, report: &BenchmarkReport) -> Result<()> {
    write_rows(
        path,
        &["method", "dataset", "min", "q1", "median", "mean", "q3", "max", "optimal"],
        report.methods.iter().map(|m| {
            let s = m.median_rank;
            vec![
                m.method.clone(),
                report.dataset.clone(),
                s.min.to_string(),
                s.q1.to_string(),
                s.median.to_string(),
                s.mean.to_string(),
                s.q3.to_string(),
                s.max.to_string(),
                m.optimal_median.to_string(),
            ]
        }),
    )
}
