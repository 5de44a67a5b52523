//! Run records and their CSV and JSON renderings.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::bounds::{BoundReport, MARGIN_TOL};
use crate::coupling::CouplingEstimate;
use crate::error::{Error, Result};
use crate::score::LossReport;

use super::config::{format_float, format_value, ExperimentConfig};

/// Columns following the configuration axes in every report.
pub const RESULT_COLUMNS: [&str; 8] = [
    "lhs",
    "rhs",
    "margin",
    "prior_term",
    "loss_term",
    "l3_term",
    "runtime_ms",
    "status",
];

/// One inequality `lhs <= rhs`, passing when `rhs - lhs >= -slack`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub slack: f64,
    pub prior_term: Option<f64>,
    pub loss_term: Option<f64>,
    pub l3_term: Option<f64>,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, slack: f64) -> Self {
        let margin = rhs - lhs;
        Self {
            name: name.into(),
            lhs,
            rhs,
            margin,
            slack,
            prior_term: None,
            loss_term: None,
            l3_term: None,
            passed: margin >= -slack,
        }
    }

    /// `value <= limit` with no slack.
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self::new(name, value, limit, 0.0)
    }

    /// A bound report under the standard margin tolerance.
    pub fn bound(report: &BoundReport) -> Self {
        let mut c = Self::new(report.id.clone(), report.lhs, report.rhs, MARGIN_TOL);
        c.prior_term = Some(report.prior_term);
        c.loss_term = Some(report.loss_term);
        c.l3_term = report.l3_term;
        c
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct Diagnostics {
    /// Largest negative weight clipped by any integrator.
    pub max_clip: f64,
    /// Largest step-doubling change of a forward terminal marginal.
    pub richardson_gap: f64,
    /// Largest relative residual of the adjoint identity, when evaluated.
    pub duality_residual: Option<f64>,
}

impl Diagnostics {
    pub fn absorb(&mut self, max_clip: f64, richardson_gap: f64) {
        self.max_clip = self.max_clip.max(max_clip);
        self.richardson_gap = self.richardson_gap.max(richardson_gap);
    }

    pub fn absorb_residual(&mut self, r: f64) {
        self.duality_residual = Some(self.duality_residual.map_or(r, |m| m.max(r)));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub suite: String,
    pub config: ExperimentConfig,
    pub checks: Vec<Check>,
    pub losses: Vec<LossReport>,
    pub bounds: Vec<BoundReport>,
    pub coupling: Vec<CouplingEstimate>,
    pub diagnostics: Diagnostics,
    pub runtime_ms: Option<f64>,
}

impl RunRecord {
    pub fn new(suite: &str, config: &ExperimentConfig) -> Self {
        Self {
            suite: suite.to_string(),
            config: config.clone(),
            checks: Vec::new(),
            losses: Vec::new(),
            bounds: Vec::new(),
            coupling: Vec::new(),
            diagnostics: Diagnostics::default(),
            runtime_ms: None,
        }
    }

    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    /// Records a bound report and its check.
    pub fn push_bound(&mut self, report: BoundReport) {
        self.checks.push(Check::bound(&report));
        self.bounds.push(report);
    }

    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn status(&self) -> &'static str {
        status_label(self.passed())
    }

    /// Smallest margin over all checks.
    pub fn min_margin(&self) -> f64 {
        self.checks.iter().map(|c| c.margin).fold(f64::INFINITY, f64::min)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = self.config.axes().into_iter().map(|(k, _)| k).collect();
        h.push("suite".into());
        h.push("check".into());
        h.extend(RESULT_COLUMNS.iter().map(|s| s.to_string()));
        h
    }

    pub fn rows(&self) -> Vec<Vec<String>> {
        let axes: Vec<String> = self.config.axes().iter().map(|(_, v)| format_value(v)).collect();
        let runtime = self.runtime_ms.map(format_float).unwrap_or_default();
        self.checks
            .iter()
            .map(|c| {
                let mut row = axes.clone();
                row.push(self.suite.clone());
                row.push(c.name.clone());
                row.extend(result_cells(
                    c.lhs,
                    c.rhs,
                    c.margin,
                    [c.prior_term, c.loss_term, c.l3_term],
                    &runtime,
                    c.passed,
                ));
                row
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_table(path, &self.header(), &self.rows())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        ensure_parent(path)?;
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    /// One line per check, then the verdict.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{} {}/{}: lhs={} rhs={} margin={}",
                status_label(c.passed),
                self.suite,
                c.name,
                format_float(c.lhs),
                format_float(c.rhs),
                format_float(c.margin)
            );
        }
        let _ = writeln!(
            s,
            "{} {}: {} checks, min margin {}",
            self.status(),
            self.suite,
            self.checks.len(),
            format_float(self.min_margin())
        );
        s
    }
}

pub fn status_label(passed: bool) -> &'static str {
    if passed {
        "PASS"
    } else {
        "FAIL"
    }
}

/// The trailing result cells shared by every report.
pub fn result_cells(
    lhs: f64,
    rhs: f64,
    margin: f64,
    terms: [Option<f64>; 3],
    runtime: &str,
    passed: bool,
) -> Vec<String> {
    let mut cells = vec![format_float(lhs), format_float(rhs), format_float(margin)];
    cells.extend(terms.iter().map(|t| t.map(format_float).unwrap_or_default()));
    cells.push(runtime.to_string());
    cells.push(status_label(passed).to_string());
    cells
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    w.write_record(header).map_err(|e| Error::Io(e.to_string()))?;
    for row in rows {
        w.write_record(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
