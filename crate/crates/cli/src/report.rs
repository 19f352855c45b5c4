//! Report assembly and CSV output.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::{Cplx, RunConfig, Task, SCHEMA};

#[derive(Clone, Copy, Debug, Serialize)]
pub enum Comparison {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub residual: Option<f64>,
    /// Accumulated quadrature error estimate, relative, where one exists.
    pub estimate: Option<f64>,
    pub tolerance: f64,
    pub comparison: Comparison,
    pub passed: bool,
    pub error: Option<String>,
}

impl Check {
    pub fn at_most(name: impl Into<String>, residual: f64, estimate: Option<f64>, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            residual: Some(residual),
            estimate,
            tolerance,
            comparison: Comparison::AtMost,
            passed: residual <= tolerance,
            error: None,
        }
    }

    pub fn at_least(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            residual: Some(value),
            estimate: None,
            tolerance,
            comparison: Comparison::AtLeast,
            passed: value >= tolerance,
            error: None,
        }
    }

    pub fn failed(name: impl Into<String>, tolerance: f64, err: &qkzb_core::Error) -> Self {
        Check {
            name: name.into(),
            residual: None,
            estimate: None,
            tolerance,
            comparison: Comparison::AtMost,
            passed: false,
            error: Some(format!("{err:?}")),
        }
    }

    /// Check from a computation that may fail.
    pub fn from_result(name: impl Into<String>, r: qkzb_core::Result<(f64, Option<f64>)>, tolerance: f64) -> Self {
        match r {
            Ok((res, est)) => Check::at_most(name, res, est, tolerance),
            Err(e) => Check::failed(name, tolerance, &e),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub labels: Vec<String>,
    pub value: Cplx,
    pub err_estimate: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, labels: Vec<String>, value: qkzb_core::C64, err: Option<f64>) {
        self.rows.push(Row { labels, value: value.into(), err_estimate: err });
    }

    fn write_csv(&self, dir: &Path) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{}.csv", self.name)))?);
        let mut header = self.columns.clone();
        header.extend(["re", "im", "err_estimate"].map(String::from));
        writeln!(f, "{}", header.join(","))?;
        for r in &self.rows {
            let err = r.err_estimate.map(|e| format!("{e:e}")).unwrap_or_default();
            writeln!(f, "{},{:e},{:e},{}", r.labels.join(","), r.value.re, r.value.im, err)?;
        }
        f.flush()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    pub schema: &'static str,
    pub task: Task,
    pub config_hash: String,
    pub parameters: RunConfig,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub tables: Vec<Table>,
    pub passed: bool,
}

impl Report {
    pub fn new(task: Task, cfg: &RunConfig, checks: Vec<Check>, warnings: Vec<String>, tables: Vec<Table>) -> Self {
        let passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
        Report {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            schema: SCHEMA,
            task,
            config_hash: cfg.hash(),
            parameters: cfg.clone(),
            checks,
            warnings,
            tables,
            passed,
        }
    }

    pub fn write_csv(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for t in &self.tables {
            t.write_csv(dir)?;
        }
        Ok(())
    }
}
