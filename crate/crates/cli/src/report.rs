use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use bpire::ConditionReport;
use serde::Serialize;

use crate::config::{Experiment, ExperimentConfig};
use crate::RunError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceKind {
    /// `|estimate - theory| <= tolerance * |theory|`.
    Relative,
    /// `|estimate - theory| <= tolerance`.
    Absolute,
    /// `estimate < theory`; `tolerance` is unused.
    Below,
    /// `estimate >= theory - tolerance`.
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub estimate: f64,
    pub theory: f64,
    pub tolerance: f64,
    pub tolerance_kind: ToleranceKind,
    pub pass: bool,
}

impl Metric {
    pub fn new(
        name: impl Into<String>,
        estimate: f64,
        theory: f64,
        tolerance: f64,
        kind: ToleranceKind,
    ) -> Self {
        let pass = match kind {
            ToleranceKind::Relative => (estimate - theory).abs() <= tolerance * theory.abs(),
            ToleranceKind::Absolute => (estimate - theory).abs() <= tolerance,
            ToleranceKind::Below => estimate < theory,
            ToleranceKind::AtLeast => estimate >= theory - tolerance,
        };
        Self {
            name: name.into(),
            estimate,
            theory,
            tolerance,
            tolerance_kind: kind,
            pass,
        }
    }

    pub fn relative(name: impl Into<String>, estimate: f64, theory: f64, tolerance: f64) -> Self {
        Self::new(name, estimate, theory, tolerance, ToleranceKind::Relative)
    }

    pub fn absolute(name: impl Into<String>, estimate: f64, theory: f64, tolerance: f64) -> Self {
        Self::new(name, estimate, theory, tolerance, ToleranceKind::Absolute)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    pub constant_hat: Option<f64>,
    pub constant_theory: Option<f64>,
    pub kappa_hat: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Bool(bool),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) => write!(f, "{v}"),
            Cell::Bool(v) => write!(f, "{v}"),
        }
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

/// One CSV file of the report.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub file: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(file: impl Into<String>, columns: &[&'static str]) -> Self {
        Self {
            file: file.into(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Cell::to_string).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()
    }
}

/// Raw sample written alongside the report when `dump` is enabled.
#[derive(Clone, Debug, PartialEq)]
pub enum SampleDump {
    Counts {
        file: String,
        values: Vec<u64>,
        binary: bool,
    },
    Reals {
        file: String,
        values: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub experiment: Experiment,
    pub seed: u64,
    pub pass: bool,
    pub metrics: Vec<Metric>,
    pub wall_ms: u64,
    pub config: ExperimentConfig,
    pub conditions: ConditionReport,
    pub summary: Summary,
    #[serde(skip)]
    pub tables: Vec<Table>,
    #[serde(skip)]
    pub dump: Option<SampleDump>,
}

impl RunReport {
    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn table(&self, file: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.file == file)
    }

    /// Directory name, deterministic in experiment and seed.
    pub fn dir_name(&self) -> String {
        format!("{}-{}", self.experiment, self.seed)
    }
}

fn io_error(path: &Path, e: io::Error) -> RunError {
    RunError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, RunError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| io_error(path, e))
}

/// Writes `report.json`, `metrics.csv`, every table and the optional sample
/// dump into `out_dir/<experiment>-<seed>/`. Returns the paths written.
pub fn emit_report(report: &RunReport, out_dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let dir = out_dir.join(report.dir_name());
    fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("report.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, report).map_err(|e| io_error(&path, e.into()))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| io_error(&path, e))?;
    written.push(path);

    let path = dir.join("metrics.csv");
    write_metrics(report, create(&path)?).map_err(|e| io_error(&path, e))?;
    written.push(path);

    for table in &report.tables {
        let path = dir.join(&table.file);
        table
            .write_csv(create(&path)?)
            .map_err(|e| io_error(&path, e))?;
        written.push(path);
    }

    match &report.dump {
        None => {}
        Some(SampleDump::Counts {
            file,
            values,
            binary,
        }) => {
            let path = dir.join(file);
            let w = create(&path)?;
            let res = if *binary {
                bpire::dump::write_binary(w, values)
            } else {
                bpire::dump::write_text(w, values)
            };
            res.map_err(|e| io_error(&path, e))?;
            written.push(path);
        }
        Some(SampleDump::Reals { file, values }) => {
            let path = dir.join(file);
            bpire::dump::write_text_f64(create(&path)?, values).map_err(|e| io_error(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

fn write_metrics<W: Write>(report: &RunReport, mut w: W) -> io::Result<()> {
    writeln!(w, "name,estimate,theory,tolerance,tolerance_kind,pass")?;
    for m in &report.metrics {
        let kind = serde_json::to_value(m.tolerance_kind).ok();
        let kind = kind.as_ref().and_then(|v| v.as_str()).unwrap_or("");
        writeln!(
            w,
            "{},{},{},{},{},{}",
            m.name, m.estimate, m.theory, m.tolerance, kind, m.pass
        )?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_pass_rules() {
        assert!(Metric::relative("a", 1.9, 1.8182, 0.15).pass);
        assert!(!Metric::relative("a", 2.2, 1.8182, 0.15).pass);
        assert!(!Metric::relative("a", f64::NAN, 1.0, 0.15).pass);
        assert!(Metric::absolute("tv", 0.004, 0.0, 0.005).pass);
        assert!(!Metric::absolute("tv", 0.006, 0.0, 0.005).pass);
        assert!(Metric::new("q", 0.45, 1.0, 0.0, ToleranceKind::Below).pass);
        assert!(!Metric::new("q", 1.0, 1.0, 0.0, ToleranceKind::Below).pass);
        assert!(Metric::new("r2", 0.985, 1.0, 0.02, ToleranceKind::AtLeast).pass);
        assert!(!Metric::new("r2", 0.97, 1.0, 0.02, ToleranceKind::AtLeast).pass);
    }

    #[test]
    fn table_csv_layout() {
        let mut t = Table::new("x.csv", &["k", "kappa_hat"]);
        t.push(vec![10usize.into(), 2.5.into()]);
        t.push(vec![12usize.into(), 0.1.into()]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "k,kappa_hat\n10,2.5\n12,0.1\n"
        );
    }
}
