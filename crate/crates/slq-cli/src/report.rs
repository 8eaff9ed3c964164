//! Deterministic result reports.
//!
//! A report is an ordered key-value document plus an optional table. The
//! JSON rendering is the machine-readable artifact; the CSV rendering
//! carries the table (ε-sweeps, convergence studies) or, absent a table,
//! the scalar entries as `key,value` rows. Reports contain no timestamps,
//! hostnames, or other run-varying data: identical config and seed must
//! reproduce the bytes exactly. Every report carries the SHA-256 of the
//! config file it was produced from.

use anyhow::{Context, Result};
use serde_json::{json, Map, Value};
use std::path::Path;

/// Ordered report document for one command invocation.
pub struct Report {
    command: &'static str,
    config_sha256: String,
    seed: u64,
    passed: bool,
    entries: Vec<(String, Value)>,
    table: Option<Table>,
}

/// Tabular section (one per report at most).
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Value>>,
}

/// Renders an `f64` as a JSON value; non-finite values become strings,
/// since JSON has no literal for them.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::String(format!("{v}"))
    }
}

impl Report {
    pub fn new(command: &'static str, config_sha256: &str, seed: u64) -> Self {
        Report {
            command,
            config_sha256: config_sha256.to_string(),
            seed,
            passed: true,
            entries: Vec::new(),
            table: None,
        }
    }

    /// Appends one key-value entry (insertion order is preserved).
    pub fn push(&mut self, key: &str, value: Value) {
        self.entries.push((key.to_string(), value));
    }

    pub fn push_f64(&mut self, key: &str, value: f64) {
        self.push(key, num(value));
    }

    pub fn push_bool(&mut self, key: &str, value: bool) {
        self.push(key, json!(value));
    }

    pub fn push_usize(&mut self, key: &str, value: usize) {
        self.push(key, json!(value));
    }

    pub fn push_str(&mut self, key: &str, value: &str) {
        self.push(key, json!(value));
    }

    pub fn set_table(&mut self, table: Table) {
        self.table = Some(table);
    }

    /// Records a named check; any failed check fails the whole report.
    pub fn check(&mut self, key: &str, ok: bool) {
        self.push_bool(key, ok);
        self.passed &= ok;
    }

    /// Marks the report failed without an entry (for carried-in errors).
    pub fn fail(&mut self) {
        self.passed = false;
    }

    pub fn passed(&self) -> bool {
        self.passed
    }

    pub fn command(&self) -> &'static str {
        self.command
    }

    /// The full document as pretty JSON (stable key order).
    pub fn to_json(&self) -> String {
        let mut root = Map::new();
        root.insert("command".into(), json!(self.command));
        root.insert("config_sha256".into(), json!(self.config_sha256));
        root.insert("seed".into(), json!(self.seed));
        root.insert("passed".into(), json!(self.passed));
        let mut results = Map::new();
        for (k, v) in &self.entries {
            results.insert(k.clone(), v.clone());
        }
        root.insert("results".into(), Value::Object(results));
        if let Some(table) = &self.table {
            let rows: Vec<Value> = table
                .rows
                .iter()
                .map(|row| {
                    let mut obj = Map::new();
                    for (col, val) in table.columns.iter().zip(row.iter()) {
                        obj.insert((*col).into(), val.clone());
                    }
                    Value::Object(obj)
                })
                .collect();
            root.insert("table".into(), Value::Array(rows));
        }
        let mut out =
            serde_json::to_string_pretty(&Value::Object(root)).expect("reports are valid JSON");
        out.push('\n');
        out
    }

    /// The tabular section as CSV; without a table, the scalar entries as
    /// `key,value` rows (header-only when the report is empty).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match &self.table {
            Some(table) => {
                out.push_str(&table.columns.join(","));
                out.push('\n');
                for row in &table.rows {
                    let cells: Vec<String> = row.iter().map(csv_cell).collect();
                    out.push_str(&cells.join(","));
                    out.push('\n');
                }
            }
            None => {
                out.push_str("key,value\n");
                for (k, v) in &self.entries {
                    out.push_str(&format!("{k},{}\n", csv_cell(v)));
                }
            }
        }
        out
    }

    /// Emits to stdout, or to `<out>/<command>.json` and `.csv` when an
    /// output directory is given.
    pub fn emit(&self, format: Format, out: Option<&Path>) -> Result<()> {
        match out {
            None => {
                let text = match format {
                    Format::Json => self.to_json(),
                    Format::Csv => self.to_csv(),
                };
                print!("{text}");
            }
            Some(dir) => {
                std::fs::create_dir_all(dir)
                    .with_context(|| format!("cannot create '{}'", dir.display()))?;
                let json_path = dir.join(format!("{}.json", self.command));
                std::fs::write(&json_path, self.to_json())
                    .with_context(|| format!("cannot write '{}'", json_path.display()))?;
                let csv_path = dir.join(format!("{}.csv", self.command));
                std::fs::write(&csv_path, self.to_csv())
                    .with_context(|| format!("cannot write '{}'", csv_path.display()))?;
                println!(
                    "{}: {} (report at {})",
                    self.command,
                    if self.passed { "PASS" } else { "FAIL" },
                    json_path.display()
                );
            }
        }
        Ok(())
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::String(s) => {
            if s.contains(',') || s.contains('"') || s.contains('\n') {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.clone()
            }
        }
        other => other.to_string(),
    }
}

/// Output rendering selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}
