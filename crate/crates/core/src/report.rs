//! Cross-run reports: variance against relative error, and trajectory
//! diagnostics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::estimators::median;
use crate::trainer::{MetricRow, RunSummary, SUMMARY_FILE};

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let denom = (sxx * syy).sqrt();
    (denom > 0.0).then(|| sxy / denom)
}

/// One completed run joined into the report.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub system: String,
    pub variance: f64,
    pub relative_error: Option<f64>,
    pub converged: bool,
}

impl ReportRow {
    pub fn from_summary(run: &str, system: &str, s: &RunSummary) -> Self {
        ReportRow {
            run: run.to_string(),
            system: system.to_string(),
            variance: s.variance,
            relative_error: s.relative_error,
            converged: s.converged,
        }
    }
}

/// Pearson coefficient of `(log10 σ², log10 relative error)` over rows
/// where both are positive and finite.
pub fn log_log_pearson(rows: &[ReportRow]) -> Option<f64> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| {
            let e = r.relative_error?;
            (r.variance > 0.0 && e > 0.0 && r.variance.is_finite() && e.is_finite())
                .then(|| (r.variance.log10(), e.log10()))
        })
        .unzip();
    pearson(&xs, &ys)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdCheck {
    /// Rows with a reference and `σ² < threshold`.
    pub below: usize,
    /// Those of them with relative error at or above the bound.
    pub violations: Vec<String>,
}

pub fn threshold_check(rows: &[ReportRow], threshold: f64, max_error: f64) -> ThresholdCheck {
    let mut below = 0;
    let mut violations = Vec::new();
    for r in rows {
        let Some(e) = r.relative_error else { continue };
        if r.variance < threshold {
            below += 1;
            if !(e < max_error) {
                violations.push(format!("{}: variance {} but relative error {e}", r.run, r.variance));
            }
        }
    }
    ThresholdCheck { below, violations }
}

/// Every directory below `root` (inclusive) holding a run summary.
pub fn collect_runs(root: &Path) -> Result<Vec<(PathBuf, RunSummary, String)>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        let summary = dir.join(SUMMARY_FILE);
        if summary.is_file() {
            let text = std::fs::read_to_string(&summary).map_err(|e| Error::file(&summary, e))?;
            let system = text
                .lines()
                .find_map(|l| l.strip_prefix("system = "))
                .unwrap_or("unknown")
                .to_string();
            out.push((dir.clone(), RunSummary::from_text(&text)?, system));
        }
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::file(&dir, e))?;
        for entry in entries {
            let entry = entry?;
            if entry.file_type()?.is_dir() {
                stack.push(entry.path());
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("run,system,variance,relative_error,converged\n");
    for r in rows {
        let err = r.relative_error.map_or_else(String::new, |e| e.to_string());
        let _ = writeln!(out, "{},{},{},{err},{}", r.run, r.system, r.variance, r.converged);
    }
    out
}

/// A pair of consecutive windows where the energy has settled but the
/// variance is still falling.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoConvergence {
    pub start_step: usize,
    pub energy_change: f64,
    pub variance_drop: f64,
}

/// Scans consecutive non-overlapping windows `[a, a+w)`, `[a+w, a+2w)` of
/// the trajectory for `|ΔĒ| < energy_tol` together with a fractional drop
/// of the median σ² larger than `min_drop`. Returns the first hit.
pub fn find_pseudo_convergence(
    rows: &[MetricRow],
    window: usize,
    energy_tol: f64,
    min_drop: f64,
) -> Option<PseudoConvergence> {
    if window == 0 || rows.len() < 2 * window {
        return None;
    }
    let mean = |s: &[MetricRow]| s.iter().map(|r| r.energy).sum::<f64>() / s.len() as f64;
    let med = |s: &[MetricRow]| median(&s.iter().map(|r| r.variance).collect::<Vec<_>>());
    (0..=rows.len() - 2 * window).find_map(|a| {
        let (first, second) = (&rows[a..a + window], &rows[a + window..a + 2 * window]);
        let de = (mean(second) - mean(first)).abs();
        let (v1, v2) = (med(first), med(second));
        let drop = 1.0 - v2 / v1;
        (de < energy_tol && drop > min_drop).then(|| PseudoConvergence {
            start_step: first[0].step,
            energy_change: de,
            variance_drop: drop,
        })
    })
}
