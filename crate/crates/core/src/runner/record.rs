//! Run records, assertions and their on-disk form.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};

/// One checked claim of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    /// A number, or a relation such as `"<= 0.001"` or `"[-1.3, -0.7]"`.
    pub expected: Value,
    pub measured: f64,
    pub tol: f64,
    pub pass: bool,
    /// Shown in the human-readable summary only.
    #[serde(skip)]
    pub detail: Option<String>,
}

impl Assertion {
    /// `|measured - expected| <= tol`
    pub fn close(name: impl Into<String>, expected: f64, measured: f64, tol: f64) -> Self {
        Self::new(name, json!(expected), measured, tol, (measured - expected).abs() <= tol)
    }

    pub fn at_most(name: impl Into<String>, limit: f64, measured: f64) -> Self {
        Self::new(name, json!(format!("<= {limit}")), measured, 0.0, measured <= limit)
    }

    pub fn at_least(name: impl Into<String>, limit: f64, measured: f64) -> Self {
        Self::new(name, json!(format!(">= {limit}")), measured, 0.0, measured >= limit)
    }

    pub fn less_than(name: impl Into<String>, limit: f64, measured: f64) -> Self {
        Self::new(name, json!(format!("< {limit}")), measured, 0.0, measured < limit)
    }

    pub fn within(name: impl Into<String>, lo: f64, hi: f64, measured: f64) -> Self {
        Self::new(name, json!(format!("[{lo}, {hi}]")), measured, 0.0, (lo..=hi).contains(&measured))
    }

    /// A yes/no claim; `measured` is 1 when it holds.
    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        Self::new(name, json!(1.0), if ok { 1.0 } else { 0.0 }, 0.0, ok)
    }

    fn new(name: impl Into<String>, expected: Value, measured: f64, tol: f64, pass: bool) -> Self {
        Self { name: name.into(), expected, measured, tol, pass: pass && !measured.is_nan(), detail: None }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

/// A numeric result table, written as CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v:.16e}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    /// Three-column `(experiment, parameter, value)` table.
    pub fn long(name: impl Into<String>) -> Self {
        Self::new(name, &["experiment", "parameter", "value"])
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn push_long(&mut self, experiment: impl Into<String>, parameter: impl Into<String>, value: f64) {
        self.push(vec![Cell::Text(experiment.into()), Cell::Text(parameter.into()), Cell::Num(value)]);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub version: String,
    pub kind: String,
    pub seed: u64,
    /// Unix seconds.
    pub started: u64,
    pub finished: u64,
    pub tables: Vec<Table>,
    pub assertions: Vec<Assertion>,
    pub notes: Vec<String>,
}

impl RunRecord {
    pub fn new(kind: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            kind: kind.to_string(),
            seed,
            started: unix_now(),
            finished: 0,
            tables: Vec::new(),
            assertions: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        !self.assertions.is_empty() && self.assertions.iter().all(|a| a.pass)
    }

    pub fn assert(&mut self, assertion: Assertion) {
        self.assertions.push(assertion);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    /// The machine-readable summary.
    pub fn summary_json(&self) -> Value {
        json!({
            "config_hash": self.config_hash,
            "kind": self.kind,
            "assertions": self.assertions,
        })
    }

    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let _ =
            writeln!(out, "{} [{}] seed {}", self.kind, &self.config_hash[..12.min(self.config_hash.len())], self.seed);
        for a in &self.assertions {
            let expected = match &a.expected {
                Value::String(s) => s.clone(),
                other => format!("{other}"),
            };
            let tol = if a.tol > 0.0 { format!(" (tol {})", a.tol) } else { String::new() };
            let _ = writeln!(
                out,
                "  {} {}: measured {:.6e}, expected {expected}{tol}",
                if a.pass { "PASS" } else { "FAIL" },
                a.name,
                a.measured
            );
            if let Some(detail) = &a.detail {
                let _ = writeln!(out, "       {detail}");
            }
        }
        for n in &self.notes {
            let _ = writeln!(out, "  note: {n}");
        }
        let passed = self.assertions.iter().filter(|a| a.pass).count();
        let _ = writeln!(
            out,
            "{}: {passed}/{} assertions passed",
            if self.passed() { "PASS" } else { "FAIL" },
            self.assertions.len()
        );
        out
    }
}

pub(crate) fn unix_now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Files written by [`emit_summary`].
#[derive(Debug, Clone, PartialEq)]
pub struct Emitted {
    pub text: String,
    pub summary: PathBuf,
    pub record: PathBuf,
    pub tables: Vec<PathBuf>,
}

/// Writes one CSV per table, `summary.json` and `record.json` into `dir` and
/// returns the human-readable summary. A record without assertions is an
/// error.
pub fn emit_summary(record: &RunRecord, dir: &Path) -> Result<Emitted> {
    if record.assertions.is_empty() {
        return Err(Error::InvalidParameter(format!("run record for '{}' holds no assertions", record.kind)));
    }
    fs::create_dir_all(dir)?;
    let mut tables = Vec::new();
    for table in &record.tables {
        let path = dir.join(format!("{}.csv", table.name));
        fs::write(&path, table.to_csv()?)?;
        tables.push(path);
    }
    let summary = dir.join("summary.json");
    fs::write(&summary, serde_json::to_string_pretty(&record.summary_json())? + "\n")?;
    let record_path = dir.join("record.json");
    fs::write(&record_path, serde_json::to_string_pretty(record)? + "\n")?;
    Ok(Emitted { text: record.summary_text(), summary, record: record_path, tables })
}
