//! Distributed consensus estimator with detector masking, its detector-free
//! counterpart, and the stacked estimation-difference dynamics.
//!
//! Sensor `i` updates
//!
//! ```text
//! xhat_i(k+1) = A xhat_i + K_i (y_i - C_i xhat_i) - lambda A sum_j gamma_ij (xhat_i - xhat^a_ij)
//! ```
//!
//! where `xhat^a_ij` is the (possibly tampered) estimate received from `j`.
//! The difference `dx_i = xhat'_i - xhat_i` between a run that consumes the
//! injections and one that does not, under the same masks, obeys
//!
//! ```text
//! dx_i(k+1) = (A - K_i C_i) dx_i + lambda A sum_j gamma_ij z_ij - lambda A sum_j gamma_ij (dx_i - dx_j)
//! ```
//!
//! and stacking it gives `dx(k+1) = F(k) dx(k) + injection(k)`.

use nalgebra::{DMatrix, DVector};

use crate::attack::Injections;
use crate::error::{Error, Result};
use crate::lin_model::{SensorModel, StateVector, SystemModel, Topology};

const RICCATI_TOL: f64 = 1e-10;
const RICCATI_DIVERGENCE: f64 = 1e12;

/// Steady-state Kalman gain for each sensor from its own `(A, C_i, Q, R_i)`.
///
/// Iterates `P <- A P A' + Q - A P C' (C P C' + R)^-1 C P A'` from `P = Q`
/// until the relative change drops below 1e-10 or `iters` is reached, then
/// returns `K = A P C' (C P C' + R)^-1`.
pub fn synthesize_gains(
    model: &SystemModel,
    sensors: &[SensorModel],
    iters: usize,
) -> Result<Vec<DMatrix<f64>>> {
    sensors
        .iter()
        .map(|s| steady_state_gain(model, s, iters).map(|(_, k)| k))
        .collect()
}

/// Returns the Riccati fixed point and the matching gain for one sensor.
pub fn steady_state_gain(
    model: &SystemModel,
    sensor: &SensorModel,
    iters: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let a = model.a();
    let c = sensor.c();
    if c.ncols() != model.state_dim() {
        return Err(Error::dim("observation matrix columns", model.state_dim(), c.ncols()));
    }
    let fail = |reason: String| Error::Synthesis {
        sensor: sensor.id(),
        reason,
    };
    let innovation_gain = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let s = c * p * c.transpose() + sensor.r();
        let s_inv = s
            .try_inverse()
            .ok_or_else(|| fail("innovation covariance is singular".into()))?;
        Ok(a * p * c.transpose() * s_inv)
    };

    let mut p = model.q().clone();
    for _ in 0..iters {
        let k = innovation_gain(&p)?;
        let next = a * &p * a.transpose() + model.q() - &k * c * &p * a.transpose();
        let next = (&next + next.transpose()) * 0.5;
        let norm = next.norm();
        if !norm.is_finite() || norm > RICCATI_DIVERGENCE {
            return Err(fail(format!("Riccati iterate norm reached {norm:e}")));
        }
        let change = (&next - &p).norm() / p.norm().max(f64::MIN_POSITIVE);
        p = next;
        if change < RICCATI_TOL {
            break;
        }
    }
    let k = innovation_gain(&p)?;
    Ok((p, k))
}

/// Per-directed-link inclusion flags `gamma_ij`, aligned with the topology's
/// adjacency lists. `true` means the received estimate is used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InclusionMask {
    flags: Vec<Vec<bool>>,
}

impl InclusionMask {
    pub fn uniform(topology: &Topology, value: bool) -> Self {
        let flags = (1..=topology.sensor_count())
            .map(|i| vec![value; topology.degree(i)])
            .collect();
        Self { flags }
    }

    pub fn from_rows(topology: &Topology, flags: Vec<Vec<bool>>) -> Result<Self> {
        if flags.len() != topology.sensor_count() {
            return Err(Error::dim("mask rows", topology.sensor_count(), flags.len()));
        }
        for (idx, row) in flags.iter().enumerate() {
            if row.len() != topology.degree(idx + 1) {
                return Err(Error::dim("mask row", topology.degree(idx + 1), row.len()));
            }
        }
        Ok(Self { flags })
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.flags[i - 1]
    }

    pub fn set_row(&mut self, i: usize, row: Vec<bool>) {
        assert_eq!(row.len(), self.flags[i - 1].len(), "mask row length");
        self.flags[i - 1] = row;
    }

    pub fn get(&self, topology: &Topology, i: usize, j: usize) -> Option<bool> {
        topology.slot(i, j).map(|s| self.flags[i - 1][s])
    }
}

/// Current estimates, gains and coupling strength of the whole network.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    xhat: Vec<StateVector>,
    gains: Vec<DMatrix<f64>>,
    lambda: f64,
}

impl EstimatorState {
    /// Every sensor starts from `x0`. Requires `0 < lambda < 1/max_i |N_i|`.
    pub fn new(
        x0: &StateVector,
        gains: Vec<DMatrix<f64>>,
        lambda: f64,
        topology: &Topology,
    ) -> Result<Self> {
        check_lambda(lambda, topology)?;
        if gains.len() != topology.sensor_count() {
            return Err(Error::dim("gain list", topology.sensor_count(), gains.len()));
        }
        Ok(Self {
            xhat: vec![x0.clone(); topology.sensor_count()],
            gains,
            lambda,
        })
    }

    pub fn estimate(&self, i: usize) -> &StateVector {
        &self.xhat[i - 1]
    }

    pub fn estimates(&self) -> &[StateVector] {
        &self.xhat
    }

    pub fn gain(&self, i: usize) -> &DMatrix<f64> {
        &self.gains[i - 1]
    }

    pub fn gains(&self) -> &[DMatrix<f64>] {
        &self.gains
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn replace_estimates(&mut self, xhat: Vec<StateVector>) {
        assert_eq!(xhat.len(), self.xhat.len(), "estimate count");
        self.xhat = xhat;
    }

    /// Masked update for sensor `i`. `received` and `mask` are in the
    /// sensor's neighbor order and must cover exactly `N_i`.
    pub fn estimator_step(
        &self,
        sensor: &SensorModel,
        y_i: &DVector<f64>,
        received: &[StateVector],
        mask: &[bool],
        model: &SystemModel,
        degree: usize,
    ) -> Result<StateVector> {
        let i = sensor.id();
        if received.len() != degree {
            return Err(Error::Protocol {
                sensor: i,
                reason: format!("expected {degree} neighbor payloads, got {}", received.len()),
            });
        }
        if mask.len() != degree {
            return Err(Error::Protocol {
                sensor: i,
                reason: format!("expected {degree} inclusion flags, got {}", mask.len()),
            });
        }
        let xi = &self.xhat[i - 1];
        let k = &self.gains[i - 1];
        if y_i.len() != sensor.measurement_dim() {
            return Err(Error::dim("measurement", sensor.measurement_dim(), y_i.len()));
        }
        let mut disagreement = DVector::zeros(xi.len());
        for (r, &keep) in received.iter().zip(mask) {
            if keep {
                if r.len() != xi.len() {
                    return Err(Error::dim("neighbor payload", xi.len(), r.len()));
                }
                disagreement += xi - r;
            }
        }
        let a = model.a();
        Ok(a * xi + k * (y_i - sensor.c() * xi) - a * disagreement * self.lambda)
    }

    /// Detector-free update: every received payload is consumed.
    pub fn virtual_estimator_step(
        &self,
        sensor: &SensorModel,
        y_i: &DVector<f64>,
        received: &[StateVector],
        model: &SystemModel,
        degree: usize,
    ) -> Result<StateVector> {
        let all = vec![true; received.len()];
        self.estimator_step(sensor, y_i, received, &all, model, degree)
    }

    /// Advances every sensor at once. `payload(i, slot)` yields what sensor
    /// `i` receives from `neighbors(i)[slot]`.
    pub fn network_step(
        &mut self,
        topology: &Topology,
        sensors: &[SensorModel],
        model: &SystemModel,
        measurements: &[DVector<f64>],
        injections: Option<&Injections>,
        mask: &InclusionMask,
    ) -> Result<()> {
        let next = self.peek_network_step(topology, sensors, model, measurements, injections, mask)?;
        self.xhat = next;
        Ok(())
    }

    pub fn peek_network_step(
        &self,
        topology: &Topology,
        sensors: &[SensorModel],
        model: &SystemModel,
        measurements: &[DVector<f64>],
        injections: Option<&Injections>,
        mask: &InclusionMask,
    ) -> Result<Vec<StateVector>> {
        let mut next = Vec::with_capacity(self.xhat.len());
        for sensor in sensors {
            let i = sensor.id();
            let received = self.received(topology, injections, i);
            next.push(self.estimator_step(
                sensor,
                &measurements[i - 1],
                &received,
                mask.row(i),
                model,
                topology.degree(i),
            )?);
        }
        Ok(next)
    }

    /// `xhat_j + z_ij` for every neighbor `j` of `i`, in neighbor order.
    pub fn received(
        &self,
        topology: &Topology,
        injections: Option<&Injections>,
        i: usize,
    ) -> Vec<StateVector> {
        let neighbors = topology.neighbors(i);
        match injections {
            Some(z) => neighbors
                .iter()
                .zip(z.row(i))
                .map(|(&j, zij)| &self.xhat[j - 1] + zij)
                .collect(),
            None => neighbors.iter().map(|&j| self.xhat[j - 1].clone()).collect(),
        }
    }
}

fn check_lambda(lambda: f64, topology: &Topology) -> Result<()> {
    let max_deg = topology.max_degree();
    let ok = lambda > 0.0 && (max_deg == 0 || lambda < 1.0 / max_deg as f64);
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "consensus parameter {lambda} must lie in (0, 1/{max_deg})"
        )))
    }
}

/// Per-sensor recursion for the estimation difference.
#[allow(clippy::too_many_arguments)]
pub fn delta_step(
    delta: &[StateVector],
    mask: &InclusionMask,
    injections: &Injections,
    gains: &[DMatrix<f64>],
    model: &SystemModel,
    sensors: &[SensorModel],
    topology: &Topology,
    lambda: f64,
) -> Result<Vec<StateVector>> {
    let n = model.state_dim();
    if delta.len() != topology.sensor_count() {
        return Err(Error::dim("difference vectors", topology.sensor_count(), delta.len()));
    }
    let a = model.a();
    let mut out = Vec::with_capacity(delta.len());
    for sensor in sensors {
        let i = sensor.id();
        let di = &delta[i - 1];
        if di.len() != n {
            return Err(Error::dim("difference vector", n, di.len()));
        }
        let mut drive = DVector::zeros(n);
        for ((&j, &keep), z) in topology.neighbors(i).iter().zip(mask.row(i)).zip(injections.row(i)) {
            if keep {
                drive += z - (di - &delta[j - 1]);
            }
        }
        let closed = a - &gains[i - 1] * sensor.c();
        out.push(closed * di + a * drive * lambda);
    }
    Ok(out)
}

/// The stacked difference dynamics for one mask.
#[derive(Debug, Clone)]
pub struct AugmentedError {
    pub delta_xhat: DVector<f64>,
    /// `F(k)`, reproducing [`delta_step`] block by block.
    pub f: DMatrix<f64>,
    /// `Gamma(k)` with entries `l_ij = -gamma_ij` on edges and
    /// `l_ii = -sum_j gamma_ij`. Kept for reporting only; `f` is built
    /// directly from the per-sensor recursion.
    pub gamma_mat: DMatrix<f64>,
}

impl AugmentedError {
    pub fn new(
        delta: &[StateVector],
        mask: &InclusionMask,
        gains: &[DMatrix<f64>],
        model: &SystemModel,
        sensors: &[SensorModel],
        topology: &Topology,
        lambda: f64,
    ) -> Self {
        let (f, gamma_mat) = assemble_f(mask, gains, model, sensors, topology, lambda);
        Self {
            delta_xhat: stack(delta),
            f,
            gamma_mat,
        }
    }

    /// `F dx + lambda (Upsilon (x) A) Z`.
    pub fn advance(&self, mask: &InclusionMask, injections: &Injections, model: &SystemModel, topology: &Topology, lambda: f64) -> DVector<f64> {
        &self.f * &self.delta_xhat + injection_term(mask, injections, model, topology, lambda)
    }
}

/// Builds `F(k)` and the printed `Gamma(k)`.
///
/// Block `(i,i)` of `F` is `A - K_i C_i - lambda A sum_j gamma_ij`; block
/// `(i,j)` is `lambda A gamma_ij`.
pub fn assemble_f(
    mask: &InclusionMask,
    gains: &[DMatrix<f64>],
    model: &SystemModel,
    sensors: &[SensorModel],
    topology: &Topology,
    lambda: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = model.state_dim();
    let count = topology.sensor_count();
    let a = model.a();
    let mut f = DMatrix::zeros(n * count, n * count);
    let mut gamma = DMatrix::zeros(count, count);
    for sensor in sensors {
        let i = sensor.id();
        let included = mask.row(i).iter().filter(|&&g| g).count() as f64;
        let diag = a - &gains[i - 1] * sensor.c() - a * (lambda * included);
        f.view_mut(((i - 1) * n, (i - 1) * n), (n, n)).copy_from(&diag);
        gamma[(i - 1, i - 1)] = -included;
        for (&j, &keep) in topology.neighbors(i).iter().zip(mask.row(i)) {
            if keep {
                f.view_mut(((i - 1) * n, (j - 1) * n), (n, n))
                    .copy_from(&(a * lambda));
                gamma[(i - 1, j - 1)] = -1.0;
            }
        }
    }
    (f, gamma)
}

/// Stacked `lambda A sum_j gamma_ij z_ij` for every sensor.
pub fn injection_term(
    mask: &InclusionMask,
    injections: &Injections,
    model: &SystemModel,
    topology: &Topology,
    lambda: f64,
) -> DVector<f64> {
    let n = model.state_dim();
    let mut out = DVector::zeros(n * topology.sensor_count());
    for i in 1..=topology.sensor_count() {
        let mut sum = DVector::zeros(n);
        for (z, &keep) in injections.row(i).iter().zip(mask.row(i)) {
            if keep {
                sum += z;
            }
        }
        out.rows_mut((i - 1) * n, n).copy_from(&(model.a() * sum * lambda));
    }
    out
}

pub fn stack(blocks: &[StateVector]) -> DVector<f64> {
    let total = blocks.iter().map(|b| b.len()).sum();
    let mut out = DVector::zeros(total);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.len()).copy_from(b);
        at += b.len();
    }
    out
}

pub fn unstack(v: &DVector<f64>, block: usize) -> Vec<StateVector> {
    v.as_slice()
        .chunks(block)
        .map(DVector::from_row_slice)
        .collect()
}

const POWER_ITERS: usize = 2_000;

/// Largest eigenvalue modulus. Tries power iteration and falls back to a
/// dense Schur eigensolve when it does not settle on a real eigenpair.
pub fn spectral_radius(f: &DMatrix<f64>) -> Result<f64> {
    if !f.is_square() {
        return Err(Error::dim("spectral radius input", "square", format!("{}x{}", f.nrows(), f.ncols())));
    }
    let dim = f.nrows();
    if dim == 0 {
        return Ok(0.0);
    }
    let scale = f.amax();
    if scale == 0.0 {
        return Ok(0.0);
    }
    if let Some(rho) = power_iteration(f, scale) {
        return Ok(rho);
    }
    log::debug!("power iteration did not converge on {dim}x{dim} matrix; using dense eigensolve");
    Ok(dense_spectral_radius(f))
}

fn power_iteration(f: &DMatrix<f64>, scale: f64) -> Option<f64> {
    let dim = f.nrows();
    let mut v = DVector::from_fn(dim, |r, _| 1.0 + 1e-3 * (r as f64 + 1.0).sqrt());
    v /= v.norm();
    for _ in 0..POWER_ITERS {
        let w = f * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return None;
        }
        let mu = v.dot(&w);
        let residual = (&w - &v * mu).norm();
        if residual <= 1e-12 * scale * (dim as f64) {
            return Some(mu.abs());
        }
        v = w / norm;
    }
    None
}

fn dense_spectral_radius(f: &DMatrix<f64>) -> f64 {
    f.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_model(a: f64, q: f64) -> SystemModel {
        SystemModel::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, q), None).unwrap()
    }

    fn scalar_sensor(id: usize, c: f64, r: f64) -> SensorModel {
        SensorModel::new(id, DMatrix::from_element(1, 1, c), DMatrix::from_element(1, 1, r), None, [0.0; 2])
            .unwrap()
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn dead_plant_needs_no_correction() {
        let (_, k) = steady_state_gain(&scalar_model(0.0, 1.0), &scalar_sensor(1, 2.0, 0.3), 100).unwrap();
        assert_eq!(k[(0, 0)], 0.0);
    }

    #[test]
    fn scalar_riccati_matches_bisection_oracle() {
        // P = 0.25 P + 1 - 0.25 P^2 / (P + 1), solved independently by bisection.
        let g = |p: f64| 0.25 * p + 1.0 - 0.25 * p * p / (p + 1.0) - p;
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p_star = 0.5 * (lo + hi);
        let (p, k) = steady_state_gain(&scalar_model(0.5, 1.0), &scalar_sensor(1, 1.0, 1.0), 10_000).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], p_star, epsilon = 1e-8);
        assert_abs_diff_eq!(k[(0, 0)], 0.5 * p_star / (p_star + 1.0), epsilon = 1e-8);
    }

    #[test]
    fn cstr_gain_stabilizes_local_loop() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9719, -0.0013, -0.0340, 0.8628]);
        let model = SystemModel::new(a.clone(), DMatrix::identity(2, 2) * 0.5, None).unwrap();
        let c5 = DMatrix::from_row_slice(1, 2, &[0.0, 0.3]);
        let s5 = SensorModel::new(5, c5.clone(), DMatrix::identity(1, 1) * 0.5, None, [0.0; 2]).unwrap();
        let (_, k) = steady_state_gain(&model, &s5, 10_000).unwrap();
        let closed = &a - &k * &c5;
        let rho = dense_spectral_radius(&closed);
        assert!(rho < 1.0, "rho(A - K C) = {rho}");
    }

    #[test]
    fn unstable_unobservable_plant_diverges() {
        let model = scalar_model(2.0, 1.0);
        let s = scalar_sensor(7, 0.0, 1.0);
        match steady_state_gain(&model, &s, 1_000) {
            Err(Error::Synthesis { sensor, .. }) => assert_eq!(sensor, 7),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    fn scalar_star() -> (SystemModel, Vec<SensorModel>, Topology) {
        let model = scalar_model(1.0, 1.0);
        let sensors = (1..=3).map(|i| scalar_sensor(i, 1.0, 1.0)).collect();
        let topo = Topology::from_edges(3, &[(1, 2), (1, 3)]).unwrap();
        (model, sensors, topo)
    }

    #[test]
    fn hand_evaluated_update() {
        let (model, sensors, topo) = scalar_star();
        let gains = vec![DMatrix::zeros(1, 1); 3];
        let state = EstimatorState::new(&v(&[0.0]), gains, 0.1, &topo).unwrap();
        let received = [v(&[1.0]), v(&[3.0])];
        let y = v(&[123.0]);
        let out = state.estimator_step(&sensors[0], &y, &received, &[true, true], &model, 2).unwrap();
        assert_abs_diff_eq!(out[0], 0.4, epsilon = 1e-15);
        let out = state.virtual_estimator_step(&sensors[0], &y, &received, &model, 2).unwrap();
        assert_abs_diff_eq!(out[0], 0.4, epsilon = 1e-15);
    }

    #[test]
    fn fully_masked_update_is_open_loop() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9719, -0.0013, -0.0340, 0.8628]);
        let model = SystemModel::new(a.clone(), DMatrix::identity(2, 2), None).unwrap();
        let sensors: Vec<_> = (1..=3)
            .map(|i| SensorModel::new(i, DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), DMatrix::identity(1, 1), None, [0.0; 2]).unwrap())
            .collect();
        let topo = Topology::from_edges(3, &[(1, 2), (1, 3)]).unwrap();
        let mut state = EstimatorState::new(&v(&[1.0, -2.0]), vec![DMatrix::zeros(2, 1); 3], 0.1, &topo).unwrap();
        state.replace_estimates(vec![v(&[1.0, -2.0]), v(&[9.0, 9.0]), v(&[-5.0, 4.0])]);
        let received = state.received(&topo, None, 1);
        let out = state.estimator_step(&sensors[0], &v(&[3.0]), &received, &[false, false], &model, 2).unwrap();
        assert_eq!(out, &a * v(&[1.0, -2.0]));
    }

    #[test]
    fn agreeing_neighbor_leaves_only_the_correction() {
        let (model, sensors, _) = scalar_star();
        let topo = Topology::from_edges(2, &[(1, 2)]).unwrap();
        let mut state = EstimatorState::new(&v(&[0.0]), vec![DMatrix::from_element(1, 1, 0.3); 2], 0.2, &topo).unwrap();
        state.replace_estimates(vec![v(&[2.0]), v(&[2.0])]);
        let y = v(&[5.0]);
        let with = state.estimator_step(&sensors[0], &y, &[v(&[2.0])], &[true], &model, 1).unwrap();
        let without = state.estimator_step(&sensors[0], &y, &[v(&[2.0])], &[false], &model, 1).unwrap();
        assert_eq!(with, without);
        assert_abs_diff_eq!(with[0], 2.0 + 0.3 * (5.0 - 2.0), epsilon = 1e-15);
    }

    #[test]
    fn missing_payload_is_a_protocol_error() {
        let (model, sensors, topo) = scalar_star();
        let state = EstimatorState::new(&v(&[0.0]), vec![DMatrix::zeros(1, 1); 3], 0.1, &topo).unwrap();
        let err = state.estimator_step(&sensors[0], &v(&[0.0]), &[v(&[1.0])], &[true], &model, 2).unwrap_err();
        assert!(matches!(err, Error::Protocol { sensor: 1, .. }));
    }

    #[test]
    fn lambda_range_is_enforced() {
        let topo = Topology::from_edges(3, &[(1, 2), (1, 3)]).unwrap();
        let gains = vec![DMatrix::zeros(1, 1); 3];
        assert!(EstimatorState::new(&v(&[0.0]), gains.clone(), 0.5, &topo).is_err());
        assert!(EstimatorState::new(&v(&[0.0]), gains.clone(), 0.0, &topo).is_err());
        assert!(EstimatorState::new(&v(&[0.0]), gains, 0.49, &topo).is_ok());
    }

    #[test]
    fn single_injection_shifts_virtual_estimate_by_lambda_a_c() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9719, -0.0013, -0.0340, 0.8628]);
        let model = SystemModel::new(a.clone(), DMatrix::identity(2, 2), None).unwrap();
        let sensors: Vec<_> = (1..=2)
            .map(|i| SensorModel::new(i, DMatrix::from_row_slice(1, 2, &[0.0, 0.5]), DMatrix::identity(1, 1), None, [0.0; 2]).unwrap())
            .collect();
        let topo = Topology::from_edges(2, &[(1, 2)]).unwrap();
        let gains = synthesize_gains(&model, &sensors, 1000).unwrap();
        let mut state = EstimatorState::new(&v(&[0.0, 0.0]), gains, 0.1, &topo).unwrap();
        state.replace_estimates(vec![v(&[0.3, 0.1]), v(&[-0.2, 0.4])]);
        let c = v(&[1.5, -0.7]);
        let mut z = Injections::zeros(&topo, 2);
        z.set(&topo, (1, 2).into(), c.clone()).unwrap();
        let y = v(&[0.25]);
        let attacked = state.received(&topo, Some(&z), 1);
        let clean = state.received(&topo, None, 1);
        let x_att = state.virtual_estimator_step(&sensors[0], &y, &attacked, &model, 1).unwrap();
        let x_clean = state.virtual_estimator_step(&sensors[0], &y, &clean, &model, 1).unwrap();
        let diff = x_att - x_clean;
        let expected = &a * &c * 0.1;
        assert!((diff - expected).amax() < 1e-15);
    }

    #[test]
    fn zero_difference_is_a_fixed_point() {
        let (model, sensors, topo) = scalar_star();
        let gains = synthesize_gains(&model, &sensors, 1000).unwrap();
        let mask = InclusionMask::uniform(&topo, true);
        let z = Injections::zeros(&topo, 1);
        let mut d = vec![v(&[0.0]); 3];
        for _ in 0..20 {
            d = delta_step(&d, &mask, &z, &gains, &model, &sensors, &topo, 0.1).unwrap();
        }
        assert!(d.iter().all(|x| x[0] == 0.0));
    }

    #[test]
    fn isolated_sensor_difference_follows_closed_loop() {
        let model = scalar_model(0.9, 1.0);
        let sensors = vec![scalar_sensor(1, 2.0, 1.0)];
        let topo = Topology::from_edges(1, &[]).unwrap();
        let gains = vec![DMatrix::from_element(1, 1, 0.2)];
        let out = delta_step(&[v(&[3.0])], &InclusionMask::uniform(&topo, true), &Injections::zeros(&topo, 1), &gains, &model, &sensors, &topo, 0.3).unwrap();
        assert_abs_diff_eq!(out[0][0], (0.9 - 0.2 * 2.0) * 3.0, epsilon = 1e-15);
    }

    #[test]
    fn two_sensor_f_by_hand() {
        let model = scalar_model(1.0, 1.0);
        let sensors = vec![scalar_sensor(1, 1.0, 1.0), scalar_sensor(2, 1.0, 1.0)];
        let topo = Topology::from_edges(2, &[(1, 2)]).unwrap();
        let gains = vec![DMatrix::zeros(1, 1); 2];
        let (f, gamma) = assemble_f(&InclusionMask::uniform(&topo, true), &gains, &model, &sensors, &topo, 0.1);
        let expected = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        assert!((f - expected).amax() < 1e-15);
        assert_eq!(gamma, DMatrix::from_row_slice(2, 2, &[-1.0, -1.0, -1.0, -1.0]));
    }

    #[test]
    fn all_excluded_f_is_block_diagonal() {
        let (model, sensors, topo) = scalar_star();
        let gains: Vec<_> = (0..3).map(|i| DMatrix::from_element(1, 1, 0.1 * i as f64)).collect();
        let (f, _) = assemble_f(&InclusionMask::uniform(&topo, false), &gains, &model, &sensors, &topo, 0.1);
        let expected = DMatrix::from_diagonal(&v(&[1.0, 0.9, 0.8]));
        assert!((f - expected).amax() < 1e-15);
    }

    #[test]
    fn spectral_radius_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9719, -0.0013, -0.0340, 0.8628]);
        // Characteristic polynomial roots of the 2x2.
        let tr: f64 = 0.9719 + 0.8628;
        let det = 0.9719 * 0.8628 - 0.0013 * 0.0340;
        let root = 0.5 * (tr + (tr * tr - 4.0 * det).sqrt());
        assert_abs_diff_eq!(spectral_radius(&a).unwrap(), root, epsilon = 1e-9);
        assert_abs_diff_eq!(root, 0.972, epsilon = 1e-3);
        assert_abs_diff_eq!(spectral_radius(&DMatrix::identity(4, 4)).unwrap(), 1.0, epsilon = 1e-12);
        let d = DMatrix::from_diagonal(&v(&[0.3, -0.8]));
        assert_abs_diff_eq!(spectral_radius(&d).unwrap(), 0.8, epsilon = 1e-9);
    }

    #[test]
    fn spectral_radius_handles_complex_dominant_pair() {
        // Rotation by 60 degrees scaled by 0.7: eigenvalues 0.7 e^{+-i pi/3}.
        let (s, c) = (std::f64::consts::FRAC_PI_3.sin(), std::f64::consts::FRAC_PI_3.cos());
        let m = DMatrix::from_row_slice(3, 3, &[0.7 * c, -0.7 * s, 0.0, 0.7 * s, 0.7 * c, 0.0, 0.0, 0.0, 0.2]);
        assert_abs_diff_eq!(spectral_radius(&m).unwrap(), 0.7, epsilon = 1e-9);
        let flip = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.5, 0.0]);
        assert_abs_diff_eq!(spectral_radius(&flip).unwrap(), 1.0, epsilon = 1e-9);
    }
}
