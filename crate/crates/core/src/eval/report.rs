use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackKind;
use crate::error::{Error, Result};
use crate::eval::bench::BenchConfig;
use crate::eval::stats::TrialRecord;
use crate::watermark::outcome::Scheme;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";

const CSV_HEADER: [&str; 10] = [
    "scheme",
    "attack",
    "n",
    "asr",
    "stat_mean",
    "stat_min",
    "stat_max",
    "threshold",
    "margin",
    "injection_rate",
];

/// Aggregate for one (scheme, attack) pair. Statistic fields are absent when
/// no trial produced an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scheme: Scheme,
    pub attack: AttackKind,
    pub n: usize,
    pub asr: f64,
    pub stat_mean: Option<f64>,
    pub stat_min: Option<f64>,
    pub stat_max: Option<f64>,
    pub threshold: f64,
    pub margin: Option<f64>,
    pub injection_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrechetEntry {
    /// Scheme name, or `pooled` for all schemes together.
    pub scope: String,
    pub set_a: String,
    pub set_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: BenchConfig,
    pub rows: Vec<ReportRow>,
    pub frechet: Vec<FrechetEntry>,
    pub records: Vec<TrialRecord>,
}

impl EvaluationReport {
    pub fn empty(config: BenchConfig) -> Self {
        Self {
            config,
            rows: Vec::new(),
            frechet: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn row(&self, scheme: Scheme, attack: AttackKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.scheme == scheme && r.attack == attack)
    }

    pub fn frechet(&self, scope: &str, a: &str, b: &str) -> Option<f64> {
        self.frechet
            .iter()
            .find(|f| f.scope == scope && ((f.set_a == a && f.set_b == b) || (f.set_a == b && f.set_b == a)))
            .map(|f| f.distance)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Format {
            what: "report csv",
            reason: e.to_string(),
        };
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format {
            what: "report csv",
            reason: e.to_string(),
        })?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn write_report(report: &EvaluationReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = dir.join(REPORT_JSON);
    let csv = dir.join(REPORT_CSV);
    fs::write(&json, serde_json::to_string_pretty(report)? + "\n").map_err(|e| Error::io(&json, e))?;
    fs::write(&csv, report.to_csv()?).map_err(|e| Error::io(&csv, e))?;
    Ok((json, csv))
}

/// Reads a structured report written by [`write_report`].
pub fn read_report(path: &Path) -> Result<EvaluationReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        what: "evaluation report",
        reason: e.to_string(),
    })
}
