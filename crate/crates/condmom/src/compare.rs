//! Element-wise comparison of reports.

use std::fmt::Write as _;

use crate::error::{CliError, Result};
use crate::report::Report;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffRow {
    /// Indices of the two reports in the input list.
    pub pair: (usize, usize),
    pub name: String,
    pub max_abs_diff: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSummary {
    pub tolerance: f64,
    pub rows: Vec<DiffRow>,
}

impl CompareSummary {
    pub fn any_flagged(&self) -> bool {
        self.rows.iter().any(|r| r.flagged)
    }

    pub fn max_diff(&self) -> f64 {
        self.rows.iter().map(|r| r.max_abs_diff).fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(4);
        let _ = writeln!(s, "pair   {:width$}  max_abs_diff  flag", "name");
        for r in &self.rows {
            let flag = if r.flagged { "EXCEEDS" } else { "ok" };
            let _ = writeln!(
                s,
                "{}-{}    {:width$}  {:12.3e}  {flag}",
                r.pair.0, r.pair.1, r.name, r.max_abs_diff
            );
        }
        let _ = writeln!(s, "tolerance {:e}; max difference {:e}", self.tolerance, self.max_diff());
        s
    }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn compare_pair(i: usize, j: usize, a: &Report, b: &Report, tol: f64, rows: &mut Vec<DiffRow>) -> Result<()> {
    let before = rows.len();
    let mut push = |name: String, d: f64| {
        rows.push(DiffRow {
            pair: (i, j),
            flagged: !(d <= tol),
            name,
            max_abs_diff: d,
        })
    };
    for (name, ma) in &a.matrices {
        if let Some(mb) = b.matrices.get(name) {
            if (ma.rows, ma.cols) != (mb.rows, mb.cols) {
                return Err(CliError::validation(format!(
                    "matrix `{name}` is {}x{} in report {i} but {}x{} in report {j}",
                    ma.rows, ma.cols, mb.rows, mb.cols
                )));
            }
            push(name.clone(), max_abs(&ma.data, &mb.data));
        }
    }
    for (name, sa) in &a.series {
        if let Some(sb) = b.series.get(name) {
            if sa.len() != sb.len() {
                return Err(CliError::validation(format!(
                    "series `{name}` has length {} in report {i} but {} in report {j}",
                    sa.len(),
                    sb.len()
                )));
            }
            push(name.clone(), max_abs(sa, sb));
        }
    }
    for (name, xa) in &a.scalars {
        if let Some(xb) = b.scalars.get(name) {
            push(name.clone(), (xa - xb).abs());
        }
    }
    if rows.len() == before {
        return Err(CliError::validation(format!("reports {i} and {j} share no quantities")));
    }
    Ok(())
}

/// Every pair of reports, on the quantities they have in common. Shape
/// mismatches are validation errors.
pub fn compare(reports: &[Report], tolerance: f64) -> Result<CompareSummary> {
    if reports.len() < 2 {
        return Err(CliError::validation("compare needs at least two reports"));
    }
    if !(tolerance >= 0.0) {
        return Err(CliError::validation("tolerance must be nonnegative"));
    }
    let mut rows = Vec::new();
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            compare_pair(i, j, &reports[i], &reports[j], tolerance, &mut rows)?;
        }
    }
    Ok(CompareSummary { tolerance, rows })
}
