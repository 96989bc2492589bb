//! Report files.
//!
//! Structured reports are JSON and round-trip exactly. The comma-separated
//! form has one row per (record, qtype) plus a `qtype = all` summary row per
//! record, with the columns of [`CSV_COLUMNS`] in that order.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::eval::EvalReport;
use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 10] = [
    "label",
    "variant",
    "gamma",
    "seed",
    "split",
    "qtype",
    "count",
    "accuracy",
    "kl_to_split",
    "kl_to_train",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub variant: String,
    pub gamma: f64,
    pub seed: u64,
    pub split: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportSet {
    pub records: Vec<RunRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Structured,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" | "structured" => Ok(ReportFormat::Structured),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::invalid("format", format!("unknown report format `{other}`"))),
        }
    }
}

impl ReportSet {
    pub fn merge(sets: impl IntoIterator<Item = ReportSet>) -> Self {
        Self {
            records: sets.into_iter().flat_map(|s| s.records).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, path: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_string(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS).expect("in-memory write");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            let rep = &r.report;
            let head = [r.label.clone(), r.variant.clone(), r.gamma.to_string(), r.seed.to_string(), r.split.clone()];
            let summary = [
                "all".to_string(),
                rep.num_samples.to_string(),
                rep.overall_accuracy.to_string(),
                rep.mean_kl_to_split.to_string(),
                opt(rep.mean_kl_to_train),
            ];
            w.write_record(head.iter().chain(&summary)).expect("in-memory write");
            for q in &rep.per_qtype {
                let row = [
                    q.qtype.to_string(),
                    q.count.to_string(),
                    q.accuracy.to_string(),
                    q.kl_to_split.to_string(),
                    opt(q.kl_to_train),
                ];
                w.write_record(head.iter().chain(&row)).expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush to Vec")).expect("utf-8 fields")
    }
}

pub fn emit_report(set: &ReportSet, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Structured => set.to_json(),
        ReportFormat::Csv => set.to_csv(),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<ReportSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ReportSet::from_json(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::eval::QtypeReport;

    fn sample() -> ReportSet {
        let report = EvalReport {
            num_samples: 10,
            overall_accuracy: 0.7,
            per_qtype: vec![QtypeReport {
                qtype: 0,
                count: 10,
                accuracy: 0.7,
                predicted: vec![0.1, 0.2, 0.7],
                kl_to_split: 0.123456789012345678,
                kl_to_train: Some(1.0 / 3.0),
            }],
            mean_kl_to_split: 0.123456789012345678,
            mean_kl_to_train: Some(1.0 / 3.0),
        };
        ReportSet {
            records: vec![RunRecord {
                label: "ce".into(),
                variant: "ce".into(),
                gamma: 0.0,
                seed: 3,
                split: "ood-test".into(),
                report,
            }],
        }
    }

    #[test]
    fn structured_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        emit_report(&sample(), &path, ReportFormat::Structured).unwrap();
        assert_eq!(read_report(&path).unwrap(), sample());
    }

    #[test]
    fn csv_header_and_determinism() {
        let csv = sample().to_csv();
        assert_eq!(csv.lines().next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv, sample().to_csv());
        assert_eq!(sample().to_json().as_bytes(), sample().to_json().as_bytes());
    }

    #[test]
    fn io_failure_names_the_path() {
        let err = emit_report(&sample(), "/nonexistent-dir/x.json", ReportFormat::Structured).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x.json"));
    }
}
