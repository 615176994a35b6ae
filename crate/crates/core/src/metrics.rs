//! Selection quality, regret, detection rates and estimation error.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};

/// Tolerance for `f_sel <= f_opt`.
pub const OPTIMALITY_SLACK: f64 = 1e-9;

/// `f_sel / f_opt` for one step. `degenerate` marks `0 / 0`, reported as 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRate {
    pub rate: f64,
    pub degenerate: bool,
}

pub fn optimization_rate(f_sel: f64, f_opt: f64) -> Result<StepRate> {
    if f_sel > f_opt + OPTIMALITY_SLACK {
        return Err(Error::Invariant(format!(
            "selected objective {f_sel} exceeds the optimum {f_opt}"
        )));
    }
    if f_opt == 0.0 {
        return Ok(StepRate {
            rate: 1.0,
            degenerate: true,
        });
    }
    Ok(StepRate {
        rate: (f_sel / f_opt).min(1.0),
        degenerate: false,
    })
}

/// Mean rate over a series and the number of `0 / 0` steps in it.
pub fn average_rate(rates: &[StepRate]) -> (f64, usize) {
    if rates.is_empty() {
        return (f64::NAN, 0);
    }
    let mean = rates.iter().map(|r| r.rate).sum::<f64>() / rates.len() as f64;
    (mean, rates.iter().filter(|r| r.degenerate).count())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Regret {
    /// `(1 - 1/e) sum f* - sum f`.
    pub lhs: f64,
    /// `2 sqrt(q T (2 (Delta_T + q ln(|N| T)) + q ln T))`.
    pub rhs: f64,
}

impl Regret {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs
    }
}

pub fn regret_bound(q: usize, horizon: usize, neighbor_count: usize, delta_t: usize) -> f64 {
    let (q, t, n, d) = (q as f64, horizon as f64, neighbor_count as f64, delta_t as f64);
    2.0 * (q * t * (2.0 * (d + q * (n * t).ln()) + q * t.ln())).sqrt()
}

pub fn regret_and_bound(
    f_sel: &[f64],
    f_opt: &[f64],
    q: usize,
    neighbor_count: usize,
    delta_t: usize,
) -> Result<Regret> {
    if f_sel.len() != f_opt.len() {
        return Err(Error::dim("objective series", f_opt.len(), f_sel.len()));
    }
    if f_sel.is_empty() {
        return Err(Error::Argument("regret needs at least one step".into()));
    }
    let ratio = 1.0 - (-1.0f64).exp();
    let lhs = ratio * f_opt.iter().sum::<f64>() - f_sel.iter().sum::<f64>();
    Ok(Regret {
        lhs,
        rhs: regret_bound(q, f_sel.len(), neighbor_count, delta_t),
    })
}

/// Link-level confusion counts over `(i, j, k)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DetectionCounts {
    pub attacked: u64,
    pub missed: u64,
    pub benign: u64,
    pub false_alarms: u64,
}

impl DetectionCounts {
    /// `flagged` means the link was selected and rejected by the detector.
    pub fn record(&mut self, attacked: bool, flagged: bool) {
        if attacked {
            self.attacked += 1;
            if !flagged {
                self.missed += 1;
            }
        } else {
            self.benign += 1;
            if flagged {
                self.false_alarms += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &DetectionCounts) {
        self.attacked += other.attacked;
        self.missed += other.missed;
        self.benign += other.benign;
        self.false_alarms += other.false_alarms;
    }

    /// `None` when no link was ever attacked.
    pub fn false_negative_rate(&self) -> Option<f64> {
        (self.attacked > 0).then(|| self.missed as f64 / self.attacked as f64)
    }

    /// `None` when every link was attacked.
    pub fn false_positive_rate(&self) -> Option<f64> {
        (self.benign > 0).then(|| self.false_alarms as f64 / self.benign as f64)
    }
}

/// Network-average estimation error `mean_i (xhat_i - x)`.
pub fn mean_error(estimates: &[DVector<f64>], x: &DVector<f64>) -> DVector<f64> {
    let mut sum = DVector::zeros(x.len());
    for e in estimates {
        sum += e - x;
    }
    sum / estimates.len() as f64
}

/// `RMSE(k) = sqrt(mean_runs |e(k)|^2)` from per-run error trajectories.
pub fn rmse(errors: &[Vec<DVector<f64>>]) -> Result<Vec<f64>> {
    let Some(first) = errors.first() else {
        return Err(Error::Argument("RMSE needs at least one run".into()));
    };
    let horizon = first.len();
    if let Some(bad) = errors.iter().find(|e| e.len() != horizon) {
        return Err(Error::dim("error trajectory", horizon, bad.len()));
    }
    let runs = errors.len() as f64;
    Ok((0..horizon)
        .map(|k| (errors.iter().map(|e| e[k].norm_squared()).sum::<f64>() / runs).sqrt())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub avg_opt_rate: f64,
    pub degenerate_steps: usize,
    pub regret: Regret,
    pub fn_rate: Option<f64>,
    pub fp_rate: Option<f64>,
}
