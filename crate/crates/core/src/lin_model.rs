//! Plant dynamics, sensor observation models, network topology and
//! norm-bounded Gaussian noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type StateVector = DVector<f64>;

/// Rejection budget for [`sample_bounded_gaussian`].
pub const MAX_REJECTIONS: u64 = 1_000_000;

const SYMMETRY_TOL: f64 = 1e-9;

/// Linear time-invariant plant `x(k+1) = A x(k) + w(k)`.
#[derive(Debug, Clone)]
pub struct SystemModel {
    a: DMatrix<f64>,
    q: DMatrix<f64>,
    q_chol: DMatrix<f64>,
    omega_bound: Option<f64>,
}

impl SystemModel {
    /// `omega_bound` of `None` disables truncation; `Some(0.0)` makes the
    /// plant noise-free.
    pub fn new(a: DMatrix<f64>, q: DMatrix<f64>, omega_bound: Option<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(Error::dim("system matrix A", "square n x n with n >= 1", shape(&a)));
        }
        if q.shape() != (n, n) {
            return Err(Error::dim("process covariance Q", format!("{n}x{n}"), shape(&q)));
        }
        let q_chol = spd_factor(&q).ok_or_else(|| {
            Error::Config("process covariance Q must be symmetric positive definite".into())
        })?;
        check_bound("omega_bound", omega_bound)?;
        Ok(Self {
            a,
            q,
            q_chol,
            omega_bound,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn omega_bound(&self) -> Option<f64> {
        self.omega_bound
    }

    /// Noise-free propagation `A x + w` with an explicit noise sample.
    pub fn propagate(&self, x: &StateVector, w: &StateVector) -> Result<StateVector> {
        let n = self.state_dim();
        if x.len() != n {
            return Err(Error::dim("state vector", n, x.len()));
        }
        if w.len() != n {
            return Err(Error::dim("process noise", n, w.len()));
        }
        Ok(&self.a * x + w)
    }
}

/// One sensor's observation model `y = C x + v`.
#[derive(Debug, Clone)]
pub struct SensorModel {
    id: usize,
    c: DMatrix<f64>,
    r: DMatrix<f64>,
    r_chol: DMatrix<f64>,
    nu_bound: Option<f64>,
    position: [f64; 2],
}

impl SensorModel {
    pub fn new(
        id: usize,
        c: DMatrix<f64>,
        r: DMatrix<f64>,
        nu_bound: Option<f64>,
        position: [f64; 2],
    ) -> Result<Self> {
        if id == 0 {
            return Err(Error::Config("sensor ids are 1-based".into()));
        }
        let m = c.nrows();
        if m == 0 || c.ncols() == 0 {
            return Err(Error::dim("observation matrix C", "m x n with m, n >= 1", shape(&c)));
        }
        if r.shape() != (m, m) {
            return Err(Error::dim("measurement covariance R", format!("{m}x{m}"), shape(&r)));
        }
        let r_chol = spd_factor(&r).ok_or_else(|| {
            Error::Config(format!(
                "measurement covariance R of sensor {id} must be symmetric positive definite"
            ))
        })?;
        check_bound("nu_bound", nu_bound)?;
        Ok(Self {
            id,
            c,
            r,
            r_chol,
            nu_bound,
            position,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn nu_bound(&self) -> Option<f64> {
        self.nu_bound
    }

    pub fn position(&self) -> [f64; 2] {
        self.position
    }

    pub fn measurement_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn observe(&self, x: &StateVector, v: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.c.ncols() {
            return Err(Error::dim("state vector for measurement", self.c.ncols(), x.len()));
        }
        if v.len() != self.c.nrows() {
            return Err(Error::dim("measurement noise", self.c.nrows(), v.len()));
        }
        Ok(&self.c * x + v)
    }
}

/// Undirected sensor graph. Sensor ids are 1-based; every adjacency list is
/// sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    pub fn from_edges(sensor_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if sensor_count == 0 {
            return Err(Error::Config("a topology needs at least one sensor".into()));
        }
        let mut neighbors = vec![Vec::new(); sensor_count];
        for &(i, j) in edges {
            if i == j {
                return Err(Error::Config(format!("self-loop on sensor {i}")));
            }
            if i == 0 || j == 0 || i > sensor_count || j > sensor_count {
                return Err(Error::Config(format!(
                    "edge ({i},{j}) references a sensor outside 1..={sensor_count}"
                )));
            }
            neighbors[i - 1].push(j);
            neighbors[j - 1].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { neighbors })
    }

    pub fn sensor_count(&self) -> usize {
        self.neighbors.len()
    }

    /// Sorted neighbor ids of sensor `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i - 1]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i - 1].len()
    }

    pub fn max_degree(&self) -> usize {
        self.neighbors.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i >= 1
            && i <= self.sensor_count()
            && self.neighbors[i - 1].binary_search(&j).is_ok()
    }

    /// Position of `j` within `neighbors(i)`.
    pub fn slot(&self, i: usize, j: usize) -> Option<usize> {
        self.neighbors[i - 1].binary_search(&j).ok()
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (idx, list) in self.neighbors.iter().enumerate() {
            let i = idx + 1;
            out.extend(list.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    /// `q_i = floor(|N_i| / 2)`.
    pub fn attack_budget(&self, i: usize) -> usize {
        self.degree(i) / 2
    }
}

/// Edge `(i,j)` iff the Euclidean distance between the two positions is at
/// most `radius`. Sensor `i` sits at `positions[i - 1]`.
pub fn build_geometric_topology(positions: &[[f64; 2]], radius: f64) -> Result<Topology> {
    if !(radius >= 0.0) {
        return Err(Error::Config(format!("radius must be >= 0, got {radius}")));
    }
    let mut edges = Vec::new();
    for (a, pa) in positions.iter().enumerate() {
        for (b, pb) in positions.iter().enumerate().skip(a + 1) {
            let dist = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
            if dist <= radius {
                edges.push((a + 1, b + 1));
            }
        }
    }
    Topology::from_edges(positions.len(), &edges)
}

/// Zero-mean Gaussian sample with covariance `cov`, redrawn until its
/// Euclidean norm is at most `bound`. `None` means no truncation.
pub fn sample_bounded_gaussian<R: Rng + ?Sized>(
    cov: &DMatrix<f64>,
    bound: Option<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let factor = spd_factor(cov)
        .ok_or_else(|| Error::Argument("covariance must be symmetric positive definite".into()))?;
    draw_bounded(&factor, bound, rng)
}

fn draw_bounded<R: Rng + ?Sized>(
    factor: &DMatrix<f64>,
    bound: Option<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let dim = factor.nrows();
    let draw = |rng: &mut R| {
        let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        factor * z
    };
    let bound = match bound {
        None => return Ok(draw(rng)),
        Some(b) if b.is_infinite() => return Ok(draw(rng)),
        Some(b) if b <= 0.0 => {
            return Err(Error::Argument(format!("sampling bound must be > 0, got {b}")))
        }
        Some(b) => b,
    };
    for _ in 0..MAX_REJECTIONS {
        let sample = draw(rng);
        if sample.norm() <= bound {
            return Ok(sample);
        }
    }
    Err(Error::Sampling {
        bound,
        attempts: MAX_REJECTIONS,
    })
}

/// `x(k+1) = A x(k) + w(k)` with `w` drawn from the truncated process-noise law.
pub fn step_state<R: Rng + ?Sized>(
    model: &SystemModel,
    x: &StateVector,
    rng: &mut R,
) -> Result<StateVector> {
    let w = match model.omega_bound {
        Some(0.0) => DVector::zeros(model.state_dim()),
        bound => draw_bounded(&model.q_chol, bound, rng)?,
    };
    model.propagate(x, &w)
}

/// `y = C x + v` with `v` drawn from the sensor's truncated noise law.
pub fn measure<R: Rng + ?Sized>(
    sensor: &SensorModel,
    x: &StateVector,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let v = match sensor.nu_bound {
        Some(0.0) => DVector::zeros(sensor.measurement_dim()),
        bound => draw_bounded(&sensor.r_chol, bound, rng)?,
    };
    sensor.observe(x, &v)
}

fn check_bound(name: &str, bound: Option<f64>) -> Result<()> {
    match bound {
        Some(b) if b.is_nan() || b < 0.0 => {
            Err(Error::Config(format!("{name} must be >= 0, got {b}")))
        }
        _ => Ok(()),
    }
}

/// Lower Cholesky factor, or `None` if the matrix is not symmetric positive definite.
fn spd_factor(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if !m.is_square() || (m - m.transpose()).amax() > SYMMETRY_TOL * m.amax().max(1.0) {
        return None;
    }
    m.clone().cholesky().map(|c| c.l())
}

fn shape(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}
