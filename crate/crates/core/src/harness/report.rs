//! The report document and its JSON, markdown and CSV renderings.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{random_baselines, Baselines, DetectionReport};
use crate::scores::ScoreKind;

pub const REPORT_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    ErrorDetection,
    OodDetection,
    Abmod,
    /// Scores supplied from outside, no model involved.
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorResult {
    /// `softmax` for the probability baseline, `abmod` for the abnormality
    /// module, `external` for ingested scores.
    pub detector: String,
    pub report: DetectionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// `"MNIST"` for error detection, `"MNIST/Uniform"` style for OOD rows.
    pub experiment: String,
    /// Random-detector values for this row's population sizes.
    pub baselines: Baselines,
    pub detectors: Vec<DetectorResult>,
    /// Mean maximum softmax probability over wrong predictions (error
    /// detection) or over out-of-distribution inputs.
    pub mean_predicted_probability: Option<f64>,
    pub test_error: Option<f64>,
}

impl ReportRow {
    pub fn new(experiment: impl Into<String>, detectors: Vec<DetectorResult>) -> Result<Self> {
        let first = detectors
            .first()
            .ok_or_else(|| Error::InvalidArgument("row without detectors".into()))?;
        let (p, n) = (first.report.n_positive, first.report.n_negative);
        if detectors
            .iter()
            .any(|d| d.report.n_positive != p || d.report.n_negative != n)
        {
            return Err(Error::InvalidArgument(
                "detectors in one row must share populations".into(),
            ));
        }
        Ok(Self {
            experiment: experiment.into(),
            baselines: random_baselines(p, n)?,
            detectors,
            mean_predicted_probability: None,
            test_error: None,
        })
    }

    pub fn detector(&self, name: &str) -> Option<&DetectionReport> {
        self.detectors
            .iter()
            .find(|d| d.detector == name)
            .map(|d| &d.report)
    }
}

/// Per-detector means of the per-source metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub detector: String,
    pub auroc: f64,
    pub aupr_positive: f64,
    pub aupr_negative: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical experiment configuration.
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub format: u32,
    pub task: Task,
    pub title: String,
    pub score_kind: ScoreKind,
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub averages: Vec<AverageRow>,
    /// Free-form run facts (final losses, checksums, sampled distortions).
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub notes: serde_json::Map<String, serde_json::Value>,
    pub provenance: Provenance,
}

impl ReportDocument {
    pub fn row(&self, experiment: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.experiment == experiment)
    }

    /// Checks the format tag and that every Base equals the random baseline
    /// of its row's population sizes.
    pub fn validate(&self) -> Result<()> {
        if self.format != REPORT_FORMAT {
            return Err(Error::CheckpointFormat {
                found: format!("report format {}", self.format),
            });
        }
        for row in &self.rows {
            for d in &row.detectors {
                let b = random_baselines(d.report.n_positive, d.report.n_negative)?;
                if b != row.baselines || d.report.base_rate_positive != b.aupr {
                    return Err(Error::InvalidArgument(format!(
                        "row {:?}: base columns disagree with population sizes",
                        row.experiment
                    )));
                }
                let values = [
                    d.report.auroc,
                    d.report.aupr_positive,
                    d.report.aupr_negative,
                    d.report.mean_score_positive,
                    d.report.mean_score_negative,
                ];
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "row {:?}: non-finite metric",
                        row.experiment
                    )));
                }
            }
        }
        Ok(())
    }

    /// Canonical JSON: full precision, stable field order, trailing newline.
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ReportDocument = serde_json::from_str(text)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "## {}\n", self.title);
        match self.task {
            Task::ErrorDetection => {
                out.push_str("| Dataset | AUROC/Base | AUPR Succ/Base | AUPR Err/Base | Pred. Prob Wrong(mean) | Test Set Error |\n");
                out.push_str("|---|---|---|---|---|---|\n");
                for row in &self.rows {
                    for d in &row.detectors {
                        let r = &d.report;
                        let _ = writeln!(
                            out,
                            "| {} | {} | {} | {} | {} | {} |",
                            row.experiment,
                            value_base(r.auroc, row.baselines.auroc),
                            value_base(r.aupr_positive, r.base_rate_positive),
                            value_base(r.aupr_negative, r.base_rate_negative()),
                            opt_percent(row.mean_predicted_probability),
                            row.test_error.map_or("-".into(), error_percent),
                        );
                    }
                }
            }
            Task::OodDetection | Task::External => {
                out.push_str("| In/Out | AUROC/Base | AUPR In/Base | AUPR Out/Base | Pred. Prob (mean) |\n");
                out.push_str("|---|---|---|---|---|\n");
                for row in &self.rows {
                    for d in &row.detectors {
                        let r = &d.report;
                        let _ = writeln!(
                            out,
                            "| {} | {} | {} | {} | {} |",
                            row.experiment,
                            value_base(r.auroc, row.baselines.auroc),
                            value_base(r.aupr_positive, r.base_rate_positive),
                            value_base(r.aupr_negative, r.base_rate_negative()),
                            opt_percent(row.mean_predicted_probability),
                        );
                    }
                }
            }
            Task::Abmod => {
                let names: Vec<&str> = self
                    .rows
                    .first()
                    .map(|r| r.detectors.iter().map(|d| d.detector.as_str()).collect())
                    .unwrap_or_default();
                let mut header = String::from("| In/Out |");
                for metric in ["AUROC", "AUPR In", "AUPR Out"] {
                    for name in &names {
                        let _ = write!(header, " {metric} {} |", display_name(name));
                    }
                }
                let _ = writeln!(out, "{header}");
                let _ = writeln!(out, "|---|{}", "---|".repeat(3 * names.len()));
                for row in &self.rows {
                    let mut line = format!("| {} |", row.experiment);
                    let pick = |name: &str| row.detector(name).copied();
                    for metric in 0..3 {
                        for name in &names {
                            let cell = pick(name).map_or("-".into(), |r| {
                                percent([r.auroc, r.aupr_positive, r.aupr_negative][metric])
                            });
                            let _ = write!(line, " {cell} |");
                        }
                    }
                    let _ = writeln!(out, "{line}");
                }
                if !self.averages.is_empty() {
                    let mut line = String::from("| Average |");
                    for metric in 0..3 {
                        for name in &names {
                            let cell = self.averages.iter().find(|a| a.detector == *name).map_or(
                                "-".into(),
                                |a| percent([a.auroc, a.aupr_positive, a.aupr_negative][metric]),
                            );
                            let _ = write!(line, " {cell} |");
                        }
                    }
                    let _ = writeln!(out, "{line}");
                }
            }
        }
        out
    }

    /// One line per (experiment, detector), full precision.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "experiment",
            "detector",
            "auroc",
            "auroc_base",
            "aupr_positive",
            "aupr_positive_base",
            "aupr_negative",
            "aupr_negative_base",
            "n_positive",
            "n_negative",
            "ranksum_p",
            "mean_predicted_probability",
            "test_error",
        ])?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for row in &self.rows {
            for d in &row.detectors {
                let r = &d.report;
                w.write_record([
                    row.experiment.clone(),
                    d.detector.clone(),
                    r.auroc.to_string(),
                    row.baselines.auroc.to_string(),
                    r.aupr_positive.to_string(),
                    r.base_rate_positive.to_string(),
                    r.aupr_negative.to_string(),
                    r.base_rate_negative().to_string(),
                    r.n_positive.to_string(),
                    r.n_negative.to_string(),
                    r.ranksum_p.to_string(),
                    opt(row.mean_predicted_probability),
                    opt(row.test_error),
                ])?;
            }
        }
        for a in &self.averages {
            w.write_record([
                "Average".to_string(),
                a.detector.clone(),
                a.auroc.to_string(),
                String::new(),
                a.aupr_positive.to_string(),
                String::new(),
                a.aupr_negative.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn display_name(detector: &str) -> &str {
    match detector {
        "softmax" => "Softmax",
        "abmod" => "AbMod",
        other => other,
    }
}

/// Integer percent, rounding halves up: `0.995 -> "100"`, `0.971 -> "97"`.
pub fn percent(x: f64) -> String {
    // The epsilon absorbs representation error such as 0.995 * 100 = 99.49999...
    format!("{}", (x * 100.0 + 0.5 + 1e-9).floor() as i64)
}

/// Base-rate cell: integer percent, or one decimal below 10%.
pub fn base_percent(x: f64) -> String {
    let pct = x * 100.0;
    if pct < 9.95 {
        let tenths = (pct * 10.0 + 0.5 + 1e-9).floor() / 10.0;
        let s = format!("{tenths:.1}");
        s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
    } else {
        percent(x)
    }
}

/// `"97/50"`.
pub fn value_base(value: f64, base: f64) -> String {
    format!("{}/{}", percent(value), base_percent(base))
}

fn opt_percent(x: Option<f64>) -> String {
    x.map_or("-".into(), percent)
}

/// Test error as a percentage with two decimals.
pub fn error_percent(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Markdown, ReportFormat::Csv];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
        }
    }
}

/// Writes `<dir>/<stem>.{json,md,csv}` for the requested formats, creating
/// `dir` if needed. Returns the written paths.
pub fn emit_report(
    doc: &ReportDocument,
    dir: impl AsRef<Path>,
    stem: &str,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for &format in formats {
        let text = match format {
            ReportFormat::Json => doc.to_json()?,
            ReportFormat::Markdown => doc.to_markdown(),
            ReportFormat::Csv => doc.to_csv()?,
        };
        let path = dir.join(format!("{stem}.{}", format.extension()));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
