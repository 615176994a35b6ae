//! Randomized-threshold residual detector.
//!
//! Sensor `i` draws one threshold `xi ~ Exp(1)` per step and accepts a
//! received estimate iff `||xhat_i - received|| <= upsilon_i * xi`. The flag
//! probability for a residual `r` is therefore `1 - exp(-r / upsilon_i)`.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};

/// Per-sensor detection sharpness `1/upsilon_i`, indexed by 1-based sensor id.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    upsilon_inv: Vec<f64>,
}

impl DetectorConfig {
    pub fn new(upsilon_inv: Vec<f64>) -> Result<Self> {
        if let Some(bad) = upsilon_inv.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!(
                "detector sharpness must be a positive finite number, got {bad}"
            )));
        }
        Ok(Self { upsilon_inv })
    }

    pub fn uniform(upsilon_inv: f64, sensor_count: usize) -> Result<Self> {
        Self::new(vec![upsilon_inv; sensor_count])
    }

    pub fn upsilon_inv(&self, i: usize) -> f64 {
        self.upsilon_inv[i - 1]
    }
}

/// The per-step random threshold `xi_i(k) ~ Exp(1)`.
pub fn draw_threshold<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Exp1)
}

/// Verdict for one received estimate given an already-drawn threshold.
/// `true` is gamma = 1 (accepted), `false` is gamma = 0 (flagged).
pub fn verdict(upsilon_inv: f64, xhat_i: &DVector<f64>, received: &DVector<f64>, xi: f64) -> bool {
    (xhat_i - received).norm() * upsilon_inv <= xi
}

/// Draws a fresh threshold and tests one received estimate.
pub fn detect<R: Rng + ?Sized>(
    upsilon_inv: f64,
    xhat_i: &DVector<f64>,
    received: &DVector<f64>,
    rng: &mut R,
) -> bool {
    let xi = draw_threshold(rng);
    verdict(upsilon_inv, xhat_i, received, xi)
}

pub fn flag_probability(upsilon_inv: f64, residual_norm: f64) -> f64 {
    -(-upsilon_inv * residual_norm).exp_m1()
}
