//! Scenario files, validation and the built-in presets.
//!
//! A scenario is a JSON document with six sections: `model`, `topology`,
//! `attacks`, `scheduler`, `detector` and `run`. [`load_scenario`] accepts
//! either a preset name (`cstr-case1`, `cstr-case2`) or a path.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::attack::{AttackInterval, AttackSchedule, Link, SignalFamily, SignalKind};
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::lin_model::{build_geometric_topology, SensorModel, StateVector, SystemModel, Topology};
use crate::scheduler::SelectionMode;

pub const PRESETS: [&str; 2] = ["cstr-case1", "cstr-case2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub model: ModelSpec,
    pub topology: TopologySpec,
    pub attacks: AttacksSpec,
    pub scheduler: SchedulerSpec,
    pub detector: DetectorSpec,
    pub run: RunSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Row-major state transition matrix.
    pub a: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    #[serde(default)]
    pub omega_bound: Option<f64>,
    pub lambda: f64,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    pub sensors: SensorsSpec,
    #[serde(default = "default_riccati_iters")]
    pub riccati_iters: usize,
}

fn default_riccati_iters() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SensorsSpec {
    /// `C_i = [0, 0.1 + 1/i]`, `R_i = r`.
    Cstr {
        r: f64,
        #[serde(default)]
        nu_bound: Option<f64>,
    },
    Explicit { sensors: Vec<ExplicitSensor> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitSensor {
    pub c: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    #[serde(default)]
    pub nu_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    Explicit {
        sensor_count: usize,
        edges: Vec<(usize, usize)>,
        #[serde(default)]
        positions: Option<Vec<[f64; 2]>>,
    },
    Geometric { positions: Vec<[f64; 2]>, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttacksSpec {
    #[serde(default)]
    pub families: BTreeMap<String, SignalFamily>,
    #[serde(default)]
    pub intervals: Vec<AttackInterval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QPolicy {
    /// `q_i = floor(|N_i| / 2)`.
    Half,
    /// The same `q` for every sensor, capped by `floor(|N_i| / 2)`.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSpec {
    pub beta: f64,
    pub mode: SelectionMode,
    #[serde(default = "default_q_policy")]
    pub q_policy: QPolicy,
}

fn default_q_policy() -> QPolicy {
    QPolicy::Half
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub upsilon_inv: f64,
}

/// What a sensor drops from its consensus term after selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionPolicy {
    /// Every selected neighbor is excluded.
    #[default]
    Selected,
    /// Only selected neighbors the detector rejects are excluded.
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub horizon: usize,
    pub monte_carlo: usize,
    pub seed: u64,
    #[serde(default)]
    pub focus_sensors: Vec<usize>,
    #[serde(default)]
    pub exclusion: ExclusionPolicy,
}

/// A validated scenario with every model object built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub model: SystemModel,
    pub sensors: Vec<SensorModel>,
    pub topology: Topology,
    pub schedule: AttackSchedule,
    pub detector: DetectorConfig,
    pub lambda: f64,
    pub x0: StateVector,
    pub beta: f64,
    pub mode: SelectionMode,
    pub q: Vec<usize>,
    pub horizon: usize,
    pub monte_carlo: usize,
    pub seed: u64,
    pub focus_sensors: Vec<usize>,
    pub exclusion: ExclusionPolicy,
}

impl Scenario {
    /// Selection budget of sensor `i`.
    pub fn q_of(&self, i: usize) -> usize {
        self.q[i - 1]
    }

    pub fn sensor_count(&self) -> usize {
        self.topology.sensor_count()
    }
}

fn matrix(rows: &[Vec<f64>], what: &str, problems: &mut Vec<String>) -> Option<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        problems.push(format!("{what} must be a non-empty matrix"));
        return None;
    }
    if rows.iter().any(|r| r.len() != m) {
        problems.push(format!("{what} has rows of different lengths"));
        return None;
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        problems.push(format!("{what} has non-finite entries"));
        return None;
    }
    Some(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn push_err(problems: &mut Vec<String>, context: &str, err: Error) {
    match err {
        Error::Validation(list) => problems.extend(list.into_iter().map(|p| format!("{context}: {p}"))),
        other => problems.push(format!("{context}: {other}")),
    }
}

impl ScenarioSpec {
    /// Builds every model object, reporting all violations at once.
    pub fn validate(&self) -> Result<Scenario> {
        let mut problems = Vec::new();

        let topology = match &self.topology {
            TopologySpec::Explicit {
                sensor_count,
                edges,
                positions,
            } => {
                if let Some(p) = positions {
                    if p.len() != *sensor_count {
                        problems.push(format!(
                            "topology: {} positions for {sensor_count} sensors",
                            p.len()
                        ));
                    }
                }
                Topology::from_edges(*sensor_count, edges)
            }
            TopologySpec::Geometric { positions, radius } => build_geometric_topology(positions, *radius),
        };
        let topology = match topology {
            Ok(t) if t.sensor_count() > 0 => Some(t),
            Ok(_) => {
                problems.push("topology: at least one sensor is required".into());
                None
            }
            Err(e) => {
                push_err(&mut problems, "topology", e);
                None
            }
        };

        let a = matrix(&self.model.a, "model.a", &mut problems);
        let q = matrix(&self.model.q, "model.q", &mut problems);
        let model = match (a, q) {
            (Some(a), Some(q)) => match SystemModel::new(a, q, self.model.omega_bound) {
                Ok(m) => Some(m),
                Err(e) => {
                    push_err(&mut problems, "model", e);
                    None
                }
            },
            _ => None,
        };
        let n = model.as_ref().map(SystemModel::state_dim);

        let x0 = match (&self.model.x0, n) {
            (Some(v), Some(n)) if v.len() != n => {
                problems.push(format!("model.x0 has {} entries but the state has {n}", v.len()));
                None
            }
            (Some(v), Some(_)) => Some(DVector::from_row_slice(v)),
            (None, Some(n)) => Some(DVector::zeros(n)),
            _ => None,
        };

        let mut sensors = Vec::new();
        if let (Some(topo), Some(n)) = (&topology, n) {
            let positions = match &self.topology {
                TopologySpec::Explicit { positions, .. } => positions.clone(),
                TopologySpec::Geometric { positions, .. } => Some(positions.clone()),
            };
            let pos = |i: usize| {
                positions
                    .as_ref()
                    .and_then(|p| p.get(i - 1).copied())
                    .unwrap_or([0.0, 0.0])
            };
            let count = topo.sensor_count();
            match &self.model.sensors {
                SensorsSpec::Cstr { r, nu_bound } => {
                    for i in 1..=count {
                        let mut c = DMatrix::zeros(1, n);
                        c[(0, n - 1)] = 0.1 + 1.0 / i as f64;
                        let r = DMatrix::from_element(1, 1, *r);
                        match SensorModel::new(i, c, r, *nu_bound, pos(i)) {
                            Ok(s) => sensors.push(s),
                            Err(e) => push_err(&mut problems, &format!("sensor {i}"), e),
                        }
                    }
                }
                SensorsSpec::Explicit { sensors: list } => {
                    if list.len() != count {
                        problems.push(format!(
                            "model.sensors lists {} sensors but the topology has {count}",
                            list.len()
                        ));
                    }
                    for (idx, s) in list.iter().enumerate() {
                        let i = idx + 1;
                        let c = matrix(&s.c, &format!("sensor {i} c"), &mut problems);
                        let r = matrix(&s.r, &format!("sensor {i} r"), &mut problems);
                        if let (Some(c), Some(r)) = (c, r) {
                            match SensorModel::new(i, c, r, s.nu_bound, pos(i)) {
                                Ok(s) => sensors.push(s),
                                Err(e) => push_err(&mut problems, &format!("sensor {i}"), e),
                            }
                        }
                    }
                }
            }
        }

        let lambda = self.model.lambda;
        if let Some(topo) = &topology {
            let max_deg = topo.max_degree();
            if !(lambda > 0.0) || (max_deg > 0 && lambda >= 1.0 / max_deg as f64) {
                problems.push(format!(
                    "model.lambda = {lambda} must lie in (0, 1/{max_deg}) for a maximum degree of {max_deg}"
                ));
            }
        }
        if self.model.riccati_iters == 0 {
            problems.push("model.riccati_iters must be positive".into());
        }

        let schedule = match (&topology, n) {
            (Some(topo), Some(n)) => {
                match AttackSchedule::new(self.attacks.intervals.clone(), self.attacks.families.clone(), topo, n) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        push_err(&mut problems, "attacks", e);
                        None
                    }
                }
            }
            _ => None,
        };

        if !(0.0..=1.0).contains(&self.scheduler.beta) {
            problems.push(format!("scheduler.beta = {} must lie in [0, 1]", self.scheduler.beta));
        }
        let mut q = Vec::new();
        if let Some(topo) = &topology {
            for i in 1..=topo.sensor_count() {
                let budget = topo.attack_budget(i);
                q.push(match self.scheduler.q_policy {
                    QPolicy::Half => budget,
                    QPolicy::Fixed(v) => v.min(budget),
                });
            }
        }

        let detector = topology
            .as_ref()
            .map(|t| DetectorConfig::uniform(self.detector.upsilon_inv, t.sensor_count()));
        let detector = match detector {
            Some(Ok(d)) => Some(d),
            Some(Err(e)) => {
                push_err(&mut problems, "detector", e);
                None
            }
            None => None,
        };

        let run = &self.run;
        if run.horizon == 0 {
            problems.push("run.horizon must be at least 1".into());
        }
        if run.monte_carlo == 0 {
            problems.push("run.monte_carlo must be at least 1".into());
        }
        if let Some(topo) = &topology {
            for &f in &run.focus_sensors {
                if f == 0 || f > topo.sensor_count() {
                    problems.push(format!("run.focus_sensors: sensor {f} does not exist"));
                }
            }
        }

        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        // Every Option below is Some once no problem was recorded.
        let topology = topology.expect("validated");
        let focus_sensors = if run.focus_sensors.is_empty() {
            (1..=topology.sensor_count()).collect()
        } else {
            let mut f = run.focus_sensors.clone();
            f.sort_unstable();
            f.dedup();
            f
        };
        Ok(Scenario {
            spec: self.clone(),
            model: model.expect("validated"),
            sensors,
            topology,
            schedule: schedule.expect("validated"),
            detector: detector.expect("validated"),
            lambda,
            x0: x0.expect("validated"),
            beta: self.scheduler.beta,
            mode: self.scheduler.mode,
            q,
            horizon: run.horizon,
            monte_carlo: run.monte_carlo,
            seed: run.seed,
            focus_sensors,
            exclusion: run.exclusion,
        })
    }

    /// Points every attack interval at the default family of `kind`.
    pub fn with_family(mut self, kind: SignalKind) -> Self {
        let name = family_name(kind);
        let family = match kind {
            SignalKind::Unstealthy => SignalFamily::unstealthy_default(),
            SignalKind::Stealthy => SignalFamily::stealthy_default(),
        };
        self.attacks.families.entry(name.to_string()).or_insert(family);
        for iv in &mut self.attacks.intervals {
            iv.family = name.to_string();
        }
        self
    }
}

pub fn family_name(kind: SignalKind) -> &'static str {
    match kind {
        SignalKind::Unstealthy => "unstealthy",
        SignalKind::Stealthy => "stealthy",
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioSpec> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Loads a preset by name, or a JSON file by path, and validates it.
pub fn load_scenario(name_or_path: &str) -> Result<Scenario> {
    load_spec(name_or_path)?.validate()
}

pub fn load_spec(name_or_path: &str) -> Result<ScenarioSpec> {
    if let Some(spec) = preset(name_or_path) {
        return Ok(spec);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(Error::Config(format!(
            "`{name_or_path}` is neither a preset ({}) nor an existing file",
            PRESETS.join(", ")
        )));
    }
    parse_scenario(&std::fs::read_to_string(path)?)
}

pub fn preset(name: &str) -> Option<ScenarioSpec> {
    match name {
        "cstr-case1" => Some(case1()),
        "cstr-case2" => Some(case2()),
        _ => None,
    }
}

const CSTR_A: [[f64; 2]; 2] = [[0.9719, -0.0013], [-0.0340, 0.8628]];

/// 30-sensor layout with `N_5 = {3, 7, 10, 13, 23, 26}` and every Case 2
/// link present. Maximum degree 8, so `lambda = 0.1` is admissible.
const CSTR_EDGES: &[(usize, usize)] = &[
    (1, 2), (1, 6), (1, 7), (1, 11), (1, 17), (1, 20), (1, 28), (2, 11), (2, 12), (2, 14),
    (2, 15), (2, 26), (2, 29), (3, 5), (3, 13), (3, 16), (3, 21), (3, 24), (3, 26), (4, 8),
    (4, 22), (4, 25), (5, 7), (5, 10), (5, 13), (5, 23), (5, 26), (6, 7), (6, 17), (7, 9),
    (7, 11), (7, 17), (7, 20), (7, 28), (8, 25), (8, 30), (9, 11), (9, 19), (9, 20), (9, 28),
    (9, 30), (10, 13), (10, 16), (10, 27), (11, 19), (11, 20), (11, 28), (11, 30), (12, 14), (12, 16),
    (12, 18), (12, 24), (12, 26), (12, 29), (13, 16), (13, 21), (13, 24), (14, 24), (14, 25), (14, 29),
    (15, 18), (15, 23), (16, 19), (16, 21), (16, 24), (16, 27), (17, 20), (18, 23), (18, 26), (19, 20),
    (19, 28), (19, 30), (20, 28), (20, 30), (21, 24), (21, 26), (22, 25), (22, 27), (24, 26), (24, 29),
    (25, 29), (28, 30),
];

const CSTR_POSITIONS: [[f64; 2]; 30] = [
    [25.3, 15.0], [18.0, 14.2], [9.1, 5.1], [8.4, 27.2], [27.0, 17.7], [29.8, 11.4],
    [25.0, 16.7], [13.9, 26.0], [22.7, 23.2], [0.8, 8.5], [22.1, 19.0], [17.7, 12.3],
    [8.2, 8.4], [10.9, 16.0], [26.0, 1.2], [7.6, 8.7], [29.6, 15.9], [19.4, 5.4],
    [27.1, 24.3], [26.9, 22.3], [8.6, 6.5], [2.4, 25.5], [21.8, 1.7], [10.4, 11.3],
    [9.9, 22.4], [16.3, 8.5], [1.1, 14.1], [23.0, 20.7], [10.8, 16.3], [21.9, 26.2],
];

fn cstr_base(name: &str) -> ScenarioSpec {
    let mut edges: Vec<(usize, usize)> = CSTR_EDGES.to_vec();
    edges.sort_unstable();
    edges.dedup();
    let mut families = BTreeMap::new();
    families.insert("unstealthy".to_string(), SignalFamily::unstealthy_default());
    families.insert("stealthy".to_string(), SignalFamily::stealthy_default());
    ScenarioSpec {
        name: name.to_string(),
        model: ModelSpec {
            a: CSTR_A.iter().map(|r| r.to_vec()).collect(),
            q: vec![vec![0.5, 0.0], vec![0.0, 0.5]],
            omega_bound: Some(0.05),
            lambda: 0.1,
            x0: None,
            sensors: SensorsSpec::Cstr {
                r: 0.5,
                nu_bound: Some(0.05),
            },
            riccati_iters: default_riccati_iters(),
        },
        topology: TopologySpec::Explicit {
            sensor_count: 30,
            edges,
            positions: Some(CSTR_POSITIONS.to_vec()),
        },
        attacks: AttacksSpec {
            families,
            intervals: Vec::new(),
        },
        scheduler: SchedulerSpec {
            beta: 0.5,
            mode: SelectionMode::Sorted,
            q_policy: QPolicy::Half,
        },
        detector: DetectorSpec { upsilon_inv: 0.5 },
        run: RunSpec {
            horizon: 100,
            monte_carlo: 20,
            seed: 1,
            focus_sensors: Vec::new(),
            exclusion: ExclusionPolicy::Selected,
        },
    }
}

fn links(pairs: &[(usize, usize)]) -> Vec<Link> {
    pairs.iter().map(|&p| Link::from(p)).collect()
}

/// Dynamic attack on sensor 5: links to 7, 10, 23 for `k <= 50`, then to
/// 3, 7, 23 (`Delta_T = 2`).
pub fn case1() -> ScenarioSpec {
    let mut s = cstr_base("cstr-case1");
    s.attacks.intervals = vec![
        AttackInterval {
            start: 1,
            end: 50,
            links: links(&[(5, 7), (5, 10), (5, 23)]),
            family: "unstealthy".into(),
        },
        AttackInterval {
            start: 51,
            end: 100,
            links: links(&[(5, 3), (5, 7), (5, 23)]),
            family: "unstealthy".into(),
        },
    ];
    s.run.focus_sensors = vec![5];
    s
}

/// Static attack on seven links from `k = 101` to the end of a 500-step run.
pub fn case2() -> ScenarioSpec {
    let mut s = cstr_base("cstr-case2");
    s.attacks.intervals = vec![AttackInterval {
        start: 101,
        end: 500,
        links: links(&[(2, 15), (2, 29), (5, 7), (5, 10), (5, 23), (16, 12), (16, 19)]),
        family: "unstealthy".into(),
    }];
    s.run.horizon = 500;
    s.run.monte_carlo = 50;
    s.run.focus_sensors = vec![2, 5, 16];
    s
}
