//! Deterministic experiment reports.
//!
//! A report is a set of named summary metrics plus zero or more rows (one per
//! sweep point / model / threshold). Serialization is byte-deterministic:
//! keys are emitted in sorted order, floats use the shortest round-trip
//! decimal, and wall time is kept out of the structured files entirely — it
//! goes to a side `.log` that appends across runs. Re-running a pipeline with
//! the same config and seed therefore reproduces the `.jsonl` and `.tsv`
//! artifacts bit for bit.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// One report cell. Finite-ness of `F64` is enforced at construction; use
/// `Str("NA")` for degenerate or missing measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReportValue {
    Bool(bool),
    Int(i64),
    F64(f64),
    Str(String),
}

impl ReportValue {
    /// Validating constructor: report floats must be finite.
    pub fn f64(v: f64) -> Result<Self> {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("report value {v}")));
        }
        Ok(ReportValue::F64(v))
    }

    /// The conventional marker for a degenerate measurement.
    pub fn na() -> Self {
        ReportValue::Str("NA".into())
    }

    fn tsv_cell(&self) -> String {
        match self {
            ReportValue::Bool(b) => b.to_string(),
            ReportValue::Int(i) => i.to_string(),
            ReportValue::F64(v) => format!("{v}"),
            ReportValue::Str(s) => s.replace(['\t', '\n'], " "),
        }
    }
}

impl From<i64> for ReportValue {
    fn from(v: i64) -> Self {
        ReportValue::Int(v)
    }
}

impl From<usize> for ReportValue {
    fn from(v: usize) -> Self {
        ReportValue::Int(v as i64)
    }
}

impl From<bool> for ReportValue {
    fn from(v: bool) -> Self {
        ReportValue::Bool(v)
    }
}

impl From<&str> for ReportValue {
    fn from(v: &str) -> Self {
        ReportValue::Str(v.into())
    }
}

pub type ReportRow = BTreeMap<String, ReportValue>;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    /// Complete serialized config of the run (TOML text).
    pub config_echo: String,
    pub metrics: BTreeMap<String, ReportValue>,
    pub rows: Vec<ReportRow>,
    /// Excluded from the deterministic artifacts; appended to the `.log`.
    pub wall_time_secs: f64,
}

#[derive(Debug, Serialize)]
struct MetaLine<'a> {
    kind: &'static str,
    name: &'a str,
    seed: u64,
    config_sha: String,
    config: &'a str,
    metrics: &'a BTreeMap<String, ReportValue>,
}

#[derive(Debug, Serialize)]
struct RowLine<'a> {
    kind: &'static str,
    index: usize,
    values: &'a ReportRow,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub jsonl: PathBuf,
    pub tsv: PathBuf,
    pub log: PathBuf,
}

impl ExperimentReport {
    pub fn new(name: impl Into<String>, seed: u64, config_echo: impl Into<String>) -> Self {
        ExperimentReport {
            name: name.into(),
            seed,
            config_echo: config_echo.into(),
            metrics: BTreeMap::new(),
            rows: Vec::new(),
            wall_time_secs: 0.0,
        }
    }

    pub fn set_metric(&mut self, key: impl Into<String>, value: ReportValue) {
        self.metrics.insert(key.into(), value);
    }

    pub fn push_row(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    /// Hex SHA-256 of the config echo, shortened for file names.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.config_echo.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..12].to_string()
    }

    /// Line-delimited structured records: one meta line, then one per row.
    pub fn jsonl(&self) -> String {
        let mut out = String::new();
        let meta = MetaLine {
            kind: "report",
            name: &self.name,
            seed: self.seed,
            config_sha: self.config_hash(),
            config: &self.config_echo,
            metrics: &self.metrics,
        };
        out.push_str(&serde_json::to_string(&meta).expect("report serializes"));
        out.push('\n');
        for (index, values) in self.rows.iter().enumerate() {
            let line = RowLine {
                kind: "row",
                index,
                values,
            };
            out.push_str(&serde_json::to_string(&line).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    /// Flat table over the union of row keys (sorted), `NA` where absent.
    pub fn tsv(&self) -> String {
        let mut columns: Vec<&str> = Vec::new();
        {
            let mut seen = std::collections::BTreeSet::new();
            for row in &self.rows {
                for key in row.keys() {
                    seen.insert(key.as_str());
                }
            }
            columns.extend(seen);
        }
        let mut out = columns.join("\t");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = columns
                .iter()
                .map(|c| {
                    row.get(*c)
                        .map(|v| v.tsv_cell())
                        .unwrap_or_else(|| "NA".into())
                })
                .collect();
            out.push_str(&cells.join("\t"));
            out.push('\n');
        }
        out
    }

    /// Writes `<name>-<confighash>.jsonl` / `.tsv` (overwritten, so reruns
    /// are byte-comparable) and appends timing to `<name>-<confighash>.log`.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<ReportPaths> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let stem = format!("{}-{}", self.name, self.config_hash());
        let paths = ReportPaths {
            jsonl: dir.join(format!("{stem}.jsonl")),
            tsv: dir.join(format!("{stem}.tsv")),
            log: dir.join(format!("{stem}.log")),
        };
        let io_err = |path: &Path, source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        std::fs::write(&paths.jsonl, self.jsonl()).map_err(|e| io_err(&paths.jsonl, e))?;
        std::fs::write(&paths.tsv, self.tsv()).map_err(|e| io_err(&paths.tsv, e))?;
        let mut log = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&paths.log)
            .map_err(|e| io_err(&paths.log, e))?;
        writeln!(log, "wall_time_secs={}", self.wall_time_secs).map_err(|e| io_err(&paths.log, e))?;
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> ExperimentReport {
        let mut r = ExperimentReport::new("demo", 7, "epochs = 3\nseed = 7\n");
        r.set_metric("auc", ReportValue::f64(0.875).unwrap());
        r.set_metric("n_examples", 1200usize.into());
        let mut row: ReportRow = BTreeMap::new();
        row.insert("t".into(), ReportValue::f64(100.0).unwrap());
        row.insert("pearson".into(), ReportValue::f64(0.25).unwrap());
        r.push_row(row);
        let mut row: ReportRow = BTreeMap::new();
        row.insert("t".into(), ReportValue::f64(500.0).unwrap());
        row.insert("degenerate".into(), true.into());
        r.push_row(row);
        r
    }

    #[test]
    fn non_finite_metrics_are_rejected() {
        assert!(ReportValue::f64(f64::NAN).is_err());
        assert!(ReportValue::f64(f64::INFINITY).is_err());
        assert!(ReportValue::f64(0.0).is_ok());
    }

    #[test]
    fn serialization_is_deterministic() {
        let a = sample_report();
        let b = sample_report();
        assert_eq!(a.jsonl(), b.jsonl());
        assert_eq!(a.tsv(), b.tsv());
        // Wall time must not leak into either artifact.
        let mut c = sample_report();
        c.wall_time_secs = 123.456;
        assert_eq!(a.jsonl(), c.jsonl());
        assert_eq!(a.tsv(), c.tsv());
    }

    #[test]
    fn tsv_unions_columns_and_fills_na() {
        let tsv = sample_report().tsv();
        let mut lines = tsv.lines();
        assert_eq!(lines.next().unwrap(), "degenerate\tpearson\tt");
        assert_eq!(lines.next().unwrap(), "NA\t0.25\t100");
        assert_eq!(lines.next().unwrap(), "true\tNA\t500");
    }

    #[test]
    fn jsonl_carries_config_and_sorted_metrics() {
        let report = sample_report();
        let jsonl = report.jsonl();
        let first = jsonl.lines().next().unwrap();
        let parsed: serde_json::Value = serde_json::from_str(first).unwrap();
        assert_eq!(parsed["kind"], "report");
        assert_eq!(parsed["seed"], 7);
        assert_eq!(parsed["config"], "epochs = 3\nseed = 7\n");
        assert_eq!(parsed["metrics"]["auc"], 0.875);
        assert_eq!(parsed["metrics"]["n_examples"], 1200);
        assert_eq!(jsonl.lines().count(), 3);
    }

    #[test]
    fn files_round_trip_and_log_accumulates() {
        let dir = tempfile::tempdir().unwrap();
        let mut report = sample_report();
        report.wall_time_secs = 1.5;
        let paths = report.write_files(dir.path()).unwrap();
        let jsonl_1 = std::fs::read(&paths.jsonl).unwrap();
        report.wall_time_secs = 2.5;
        let paths_2 = report.write_files(dir.path()).unwrap();
        assert_eq!(paths, paths_2);
        let jsonl_2 = std::fs::read(&paths.jsonl).unwrap();
        assert_eq!(jsonl_1, jsonl_2);
        let log = std::fs::read_to_string(&paths.log).unwrap();
        assert_eq!(log, "wall_time_secs=1.5\nwall_time_secs=2.5\n");
        assert!(paths
            .jsonl
            .file_name()
            .unwrap()
            .to_str()
            .unwrap()
            .starts_with(&format!("demo-{}", report.config_hash())));
    }

    #[test]
    fn config_hash_tracks_config_text() {
        let a = ExperimentReport::new("x", 0, "a = 1\n");
        let b = ExperimentReport::new("x", 0, "a = 2\n");
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 12);
    }
}
