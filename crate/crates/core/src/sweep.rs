//! Full-factorial `(beta, 1/upsilon)` sweeps for detection rates.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::DetectionCounts;
use crate::scenario::ScenarioSpec;
use crate::sim::{run_case, Pipeline, RunOptions};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    pub upsilon_inv: f64,
    /// Mean of per-seed rates.
    pub fn_mean: f64,
    pub fp_mean: f64,
    /// Binomial standard errors from the pooled link counts.
    pub fn_se: f64,
    pub fp_se: f64,
    pub avg_opt_rate: f64,
    pub counts: DetectionCounts,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn binomial_se(p: f64, n: u64) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        (p * (1.0 - p) / n as f64).sqrt()
    }
}

/// Runs the scenario's own selection mode at every grid point.
pub fn sweep(spec: &ScenarioSpec, beta_grid: &[f64], upsilon_grid: &[f64], jobs: usize) -> Result<Vec<SweepRow>> {
    if beta_grid.is_empty() || upsilon_grid.is_empty() {
        return Err(Error::Argument("sweep grids must be nonempty".into()));
    }
    let pipeline = Pipeline::for_mode(spec.scheduler.mode);
    let options = RunOptions {
        pipelines: vec![pipeline],
        jobs,
        ..RunOptions::default()
    };
    let mut rows = Vec::with_capacity(beta_grid.len() * upsilon_grid.len());
    for &beta in beta_grid {
        for &upsilon_inv in upsilon_grid {
            let mut point = spec.clone();
            point.scheduler.beta = beta;
            point.detector.upsilon_inv = upsilon_inv;
            let scenario = point.validate()?;
            let result = run_case(&scenario, &options)?;
            let summaries = result.summaries(pipeline);
            let counts = result.detection(pipeline);
            let pooled_fn = counts.false_negative_rate().unwrap_or(f64::NAN);
            let pooled_fp = counts.false_positive_rate().unwrap_or(f64::NAN);
            rows.push(SweepRow {
                beta,
                upsilon_inv,
                fn_mean: mean(summaries.iter().filter_map(|s| s.fn_rate)),
                fp_mean: mean(summaries.iter().filter_map(|s| s.fp_rate)),
                fn_se: binomial_se(pooled_fn, counts.attacked),
                fp_se: binomial_se(pooled_fp, counts.benign),
                avg_opt_rate: result.mean_opt_rate(pipeline),
                counts,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep(rows: &[SweepRow], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["beta", "upsilon_inv", "fn", "fp", "fn_se", "fp_se", "avg_opt_rate"])?;
    for r in rows {
        w.write_record([
            r.beta.to_string(),
            r.upsilon_inv.to_string(),
            r.fn_mean.to_string(),
            r.fp_mean.to_string(),
            r.fn_se.to_string(),
            r.fp_se.to_string(),
            r.avg_opt_rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Violations of "FN nonincreasing, FP nondecreasing in 1/upsilon" beyond
/// two combined standard errors, for consecutive grid points at equal beta.
pub fn trend_violations(rows: &[SweepRow]) -> Vec<String> {
    let mut out = Vec::new();
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.beta != b.beta || b.upsilon_inv <= a.upsilon_inv {
            continue;
        }
        let fn_tol = 2.0 * (a.fn_se.powi(2) + b.fn_se.powi(2)).sqrt();
        let fp_tol = 2.0 * (a.fp_se.powi(2) + b.fp_se.powi(2)).sqrt();
        if b.fn_mean > a.fn_mean + fn_tol {
            out.push(format!(
                "beta {}: FN rises from {} to {} between 1/upsilon {} and {}",
                a.beta, a.fn_mean, b.fn_mean, a.upsilon_inv, b.upsilon_inv
            ));
        }
        if b.fp_mean + fp_tol < a.fp_mean {
            out.push(format!(
                "beta {}: FP falls from {} to {} between 1/upsilon {} and {}",
                a.beta, a.fp_mean, b.fp_mean, a.upsilon_inv, b.upsilon_inv
            ));
        }
    }
    out
}
