//! Report artifacts and their JSON/CSV serializations.
//!
//! JSON is the rich format (schema_version 1). The CSV renderings are
//! plot-ready: fit/rank/penalty reports flatten to rectangular
//! `field,i,j,value` rows, simulation studies to one row per method. All
//! predictor/response indices are 1-based in both formats; objective-trace
//! entries are numbered from 0 = initial objective. Output carries no
//! timestamps or environment detail, so a fixed seed reproduces files
//! byte for byte.

use crate::io::CliError;
use rowrank::simulation::{StudyMethod, StudyReport};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Serialize)]
pub struct FitArtifact {
    pub schema_version: u32,
    pub command: &'static str,
    pub method: String,
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub standardized: bool,
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_names: Option<Vec<String>>,
    pub rank: usize,
    /// 1-based selected predictor indices.
    pub support: Vec<usize>,
    pub support_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection_score: Option<f64>,
    /// ||Y - X B||_F^2 on the standardized training scale.
    pub rss: f64,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    /// Coefficient rows (standardized scale): predictions for new data are
    /// ((x - x_mean)/x_scale) B + y_mean.
    pub b_hat: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_selection: Option<RankSection>,
    /// Score-construction table: one row per extracted component, ordered by
    /// eigenvalue of Y'X(X'X)^- X'Y; weights build the scores X w from the
    /// (standardized) predictors.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<ScoreRow>>,
}

#[derive(Serialize)]
pub struct RankSection {
    pub r_hat: usize,
    pub threshold: f64,
    pub multiplier: f64,
    pub sigma2: f64,
    pub sigma2_estimated: bool,
    pub singular_values: Vec<f64>,
}

#[derive(Serialize)]
pub struct ScoreRow {
    pub score: usize,
    pub eigenvalue: f64,
    pub weights: Vec<f64>,
}

#[derive(Serialize)]
pub struct RankArtifact {
    pub schema_version: u32,
    pub command: &'static str,
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub q: usize,
    pub standardized: bool,
    #[serde(flatten)]
    pub selection: RankSection,
}

#[derive(Serialize)]
pub struct PenaltyArtifact {
    pub schema_version: u32,
    pub command: &'static str,
    pub r: usize,
    pub j: usize,
    pub n: usize,
    pub p: usize,
    pub c: f64,
    pub sigma2: f64,
    pub score: f64,
}

#[derive(Serialize)]
pub struct SimulateArtifact {
    pub schema_version: u32,
    pub command: &'static str,
    pub preset: String,
    pub methods: Vec<StudyMethod>,
    pub tuning: String,
    pub study: StudyReport,
}

fn open_sink(out: Option<&PathBuf>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(File::create(path).map_err(|e| {
            CliError::User(format!("{}: {e}", path.display()))
        })?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

pub fn write_json<T: Serialize>(artifact: &T, out: Option<&PathBuf>) -> Result<(), CliError> {
    let mut sink = open_sink(out)?;
    serde_json::to_writer_pretty(&mut sink, artifact)
        .map_err(|e| CliError::User(format!("cannot serialize report: {e}")))?;
    writeln!(sink)?;
    sink.flush()?;
    Ok(())
}

/// Rectangular long-format rows for the field-oriented CSV reports.
pub struct LongRows {
    rows: Vec<[String; 4]>,
}

impl LongRows {
    pub fn new() -> LongRows {
        LongRows { rows: vec![] }
    }
    pub fn scalar(&mut self, field: &str, value: impl ToString) {
        self.rows.push([field.into(), String::new(), String::new(), value.to_string()]);
    }
    /// Absent optionals are omitted entirely, mirroring the JSON output.
    pub fn scalar_opt<T: ToString>(&mut self, field: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.scalar(field, v.to_string());
        }
    }
    pub fn indexed(&mut self, field: &str, i: usize, value: impl ToString) {
        self.rows.push([field.into(), i.to_string(), String::new(), value.to_string()]);
    }
    pub fn column(&mut self, field: &str, j: usize, value: impl ToString) {
        self.rows.push([field.into(), String::new(), j.to_string(), value.to_string()]);
    }
    pub fn cell(&mut self, field: &str, i: usize, j: usize, value: impl ToString) {
        self.rows
            .push([field.into(), i.to_string(), j.to_string(), value.to_string()]);
    }

    pub fn write(self, out: Option<&PathBuf>) -> Result<(), CliError> {
        let sink = open_sink(out)?;
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["field", "i", "j", "value"])
            .map_err(|e| CliError::User(format!("cannot write report: {e}")))?;
        for row in &self.rows {
            w.write_record(row)
                .map_err(|e| CliError::User(format!("cannot write report: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }
}

impl FitArtifact {
    pub fn to_long_rows(&self) -> LongRows {
        let mut rows = LongRows::new();
        rows.scalar("schema_version", self.schema_version);
        rows.scalar("command", self.command);
        rows.scalar("method", &self.method);
        rows.scalar("m", self.m);
        rows.scalar("p", self.p);
        rows.scalar("n", self.n);
        rows.scalar("standardized", self.standardized);
        rows.scalar("rank", self.rank);
        rows.scalar("support_size", self.support_size);
        rows.scalar_opt("k", &self.k);
        rows.scalar_opt("lambda", &self.lambda);
        rows.scalar_opt("sigma2", &self.sigma2);
        rows.scalar_opt("selection_score", &self.selection_score);
        rows.scalar("rss", self.rss);
        rows.scalar("converged", self.converged);
        rows.scalar_opt("warning", &self.warning);
        for (i, &s) in self.support.iter().enumerate() {
            rows.indexed("support", i + 1, s);
        }
        for (j, v) in self.x_mean.iter().enumerate() {
            rows.column("x_mean", j + 1, v);
        }
        for (j, v) in self.x_scale.iter().enumerate() {
            rows.column("x_scale", j + 1, v);
        }
        for (j, v) in self.y_mean.iter().enumerate() {
            rows.column("y_mean", j + 1, v);
        }
        if let Some(names) = &self.x_names {
            for (j, name) in names.iter().enumerate() {
                rows.column("x_name", j + 1, name);
            }
        }
        for (t, v) in self.objective_trace.iter().enumerate() {
            rows.indexed("trace", t, v);
        }
        for (i, row) in self.b_hat.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                rows.cell("b_hat", i + 1, j + 1, v);
            }
        }
        if let Some(sel) = &self.rank_selection {
            sel.push_rows(&mut rows);
        }
        if let Some(scores) = &self.scores {
            for s in scores {
                rows.indexed("score_eigenvalue", s.score, s.eigenvalue);
                for (j, w) in s.weights.iter().enumerate() {
                    rows.cell("score_weight", s.score, j + 1, w);
                }
            }
        }
        rows
    }
}

impl RankSection {
    fn push_rows(&self, rows: &mut LongRows) {
        rows.scalar("r_hat", self.r_hat);
        rows.scalar("rank_threshold", self.threshold);
        rows.scalar("rank_multiplier", self.multiplier);
        rows.scalar("rank_sigma2", self.sigma2);
        rows.scalar("rank_sigma2_estimated", self.sigma2_estimated);
        for (i, d) in self.singular_values.iter().enumerate() {
            rows.indexed("singular_value", i + 1, d);
        }
    }
}

impl RankArtifact {
    pub fn to_long_rows(&self) -> LongRows {
        let mut rows = LongRows::new();
        rows.scalar("schema_version", self.schema_version);
        rows.scalar("command", self.command);
        rows.scalar("m", self.m);
        rows.scalar("p", self.p);
        rows.scalar("n", self.n);
        rows.scalar("q", self.q);
        rows.scalar("standardized", self.standardized);
        self.selection.push_rows(&mut rows);
        rows
    }
}

impl PenaltyArtifact {
    pub fn to_long_rows(&self) -> LongRows {
        let mut rows = LongRows::new();
        rows.scalar("schema_version", self.schema_version);
        rows.scalar("command", self.command);
        rows.scalar("r", self.r);
        rows.scalar("j", self.j);
        rows.scalar("n", self.n);
        rows.scalar("p", self.p);
        rows.scalar("c", self.c);
        rows.scalar("sigma2", self.sigma2);
        rows.scalar("score", self.score);
        rows
    }
}

/// One row per method, columns matching the study tables: MSE, median
/// support size, median rank, missed-predictor and false-alarm percentages.
pub fn write_simulate_csv(artifact: &SimulateArtifact, out: Option<&PathBuf>) -> Result<(), CliError> {
    let sink = open_sink(out)?;
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "method",
        "mse",
        "support_median",
        "rank_median",
        "miss_pct",
        "false_alarm_pct",
        "failures",
    ])
    .map_err(|e| CliError::User(format!("cannot write report: {e}")))?;
    for run in &artifact.study.methods {
        w.write_record([
            run.method.to_string(),
            run.trimmed_mse.to_string(),
            run.median_support.to_string(),
            run.median_rank.to_string(),
            run.miss_rate_pct.to_string(),
            run.false_alarm_pct.to_string(),
            run.failures.len().to_string(),
        ])
        .map_err(|e| CliError::User(format!("cannot write report: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Residual sum of squares implied by a report's coefficient matrix; the
/// value stored in `rss` and checked by the round-trip invariant.
pub fn rss_of(x: &nalgebra::DMatrix<f64>, y: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> f64 {
    (y - x * b).norm_squared()
}
