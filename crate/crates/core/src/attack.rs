//! False-data injection schedules and signal generation.
//!
//! A directed link `(i, j)` carries sensor `j`'s estimate to sensor `i`;
//! `i` is the target. Schedules are validated once, at construction, against
//! the topology and the half-neighborhood attack budget.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lin_model::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Link {
    pub target: usize,
    pub source: usize,
}

impl Link {
    pub fn new(target: usize, source: usize) -> Self {
        Self { target, source }
    }
}

impl From<(usize, usize)> for Link {
    fn from((target, source): (usize, usize)) -> Self {
        Self { target, source }
    }
}

impl From<Link> for (usize, usize) {
    fn from(l: Link) -> Self {
        (l.target, l.source)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Unstealthy,
    Stealthy,
}

/// Magnitude law for injected signals. Directions are always uniform on the
/// unit sphere.
///
/// On each attacked step the magnitude is uniform on
/// `[amplitude_low, amplitude_high]` with probability `active_fraction`, and
/// uniform on `[0, quiet_amplitude]` otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalFamily {
    pub kind: SignalKind,
    pub amplitude_low: f64,
    pub amplitude_high: f64,
    /// Hard cap on every stealthy draw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_tilde: Option<f64>,
    pub active_fraction: f64,
    #[serde(default = "default_quiet")]
    pub quiet_amplitude: f64,
}

fn default_quiet() -> f64 {
    0.05
}

impl SignalFamily {
    /// Large injections on 90% of attacked steps, noise-level otherwise.
    pub fn unstealthy_default() -> Self {
        Self {
            kind: SignalKind::Unstealthy,
            amplitude_low: 5.0,
            amplitude_high: 10.0,
            z_tilde: None,
            active_fraction: 0.9,
            quiet_amplitude: 0.05,
        }
    }

    /// Injections comparable to the 0.05 noise bound, capped at 0.08.
    pub fn stealthy_default() -> Self {
        Self {
            kind: SignalKind::Stealthy,
            amplitude_low: 0.02,
            amplitude_high: 0.08,
            z_tilde: Some(0.08),
            active_fraction: 1.0,
            quiet_amplitude: 0.05,
        }
    }

    fn problems(&self, name: &str) -> Vec<String> {
        let mut out = Vec::new();
        let finite = [self.amplitude_low, self.amplitude_high, self.quiet_amplitude];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            out.push(format!("family `{name}`: amplitudes must be finite and >= 0"));
        }
        if self.amplitude_low > self.amplitude_high {
            out.push(format!("family `{name}`: amplitude_low exceeds amplitude_high"));
        }
        if !(self.active_fraction > 0.0 && self.active_fraction <= 1.0) {
            out.push(format!("family `{name}`: active_fraction must lie in (0, 1]"));
        }
        if self.kind == SignalKind::Stealthy {
            match self.z_tilde {
                None => out.push(format!("family `{name}`: stealthy family needs z_tilde")),
                Some(cap) => {
                    if self.amplitude_high > cap || self.quiet_amplitude > cap {
                        out.push(format!(
                            "family `{name}`: stealthy amplitudes must not exceed z_tilde = {cap}"
                        ));
                    }
                }
            }
        }
        out
    }

    pub fn draw<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> DVector<f64> {
        let active = rng.random::<f64>() < self.active_fraction;
        let u: f64 = rng.random();
        let magnitude = if active {
            self.amplitude_low + u * (self.amplitude_high - self.amplitude_low)
        } else {
            u * self.quiet_amplitude
        };
        let mut dir = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = dir.norm();
        if norm > 0.0 {
            dir /= norm;
        } else {
            dir[0] = 1.0;
        }
        let z = dir * magnitude;
        if let (SignalKind::Stealthy, Some(cap)) = (self.kind, self.z_tilde) {
            assert!(z.norm() <= cap * (1.0 + 1e-12), "stealthy draw exceeded z_tilde");
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackInterval {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub links: Vec<Link>,
    pub family: String,
}

/// Per-step injections aligned with the topology's adjacency lists:
/// `z(i)[s]` is the signal on the link from `neighbors(i)[s]` into `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Injections {
    z: Vec<Vec<DVector<f64>>>,
    active: Vec<Vec<bool>>,
}

impl Injections {
    pub fn zeros(topology: &Topology, dim: usize) -> Self {
        let count = topology.sensor_count();
        let z = (1..=count)
            .map(|i| vec![DVector::zeros(dim); topology.degree(i)])
            .collect();
        let active = (1..=count).map(|i| vec![false; topology.degree(i)]).collect();
        Self { z, active }
    }

    /// Signals into sensor `i`, in neighbor order.
    pub fn row(&self, i: usize) -> &[DVector<f64>] {
        &self.z[i - 1]
    }

    pub fn active_row(&self, i: usize) -> &[bool] {
        &self.active[i - 1]
    }

    pub fn set(&mut self, topology: &Topology, link: Link, z: DVector<f64>) -> Result<()> {
        let slot = topology
            .slot(link.target, link.source)
            .ok_or_else(|| Error::Argument(format!("no link ({},{})", link.target, link.source)))?;
        self.z[link.target - 1][slot] = z;
        self.active[link.target - 1][slot] = true;
        Ok(())
    }

    pub fn get(&self, topology: &Topology, link: Link) -> Option<&DVector<f64>> {
        topology
            .slot(link.target, link.source)
            .map(|s| &self.z[link.target - 1][s])
    }

    pub fn is_quiet(&self) -> bool {
        self.active.iter().flatten().all(|a| !a)
    }
}

#[derive(Debug, Clone)]
pub struct AttackSchedule {
    intervals: Vec<AttackInterval>,
    families: BTreeMap<String, SignalFamily>,
    topology: Topology,
    state_dim: usize,
}

impl AttackSchedule {
    /// Validates links, families, interval bounds and the per-target budget
    /// `|attacked in-neighbors of i| <= floor(|N_i|/2)` at every step. All
    /// violations are reported together.
    pub fn new(
        intervals: Vec<AttackInterval>,
        families: BTreeMap<String, SignalFamily>,
        topology: &Topology,
        state_dim: usize,
    ) -> Result<Self> {
        let mut problems = Vec::new();
        for (name, fam) in &families {
            problems.extend(fam.problems(name));
        }
        for (n, iv) in intervals.iter().enumerate() {
            if iv.start == 0 || iv.end < iv.start {
                problems.push(format!(
                    "interval #{n}: steps are 1-based and need start <= end (got {}..={})",
                    iv.start, iv.end
                ));
            }
            if !families.contains_key(&iv.family) {
                problems.push(format!("interval #{n}: unknown signal family `{}`", iv.family));
            }
            for l in &iv.links {
                if !topology.has_edge(l.target, l.source) {
                    problems.push(format!(
                        "interval #{n}: link ({},{}) is not an edge of the topology",
                        l.target, l.source
                    ));
                }
            }
        }
        let schedule = Self {
            intervals,
            families,
            topology: topology.clone(),
            state_dim,
        };
        if problems.is_empty() {
            problems.extend(schedule.overlap_problems());
            problems.extend(schedule.budget_problems());
        }
        if problems.is_empty() {
            Ok(schedule)
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// A schedule with no attacks at all.
    pub fn empty(topology: &Topology, state_dim: usize) -> Self {
        Self {
            intervals: Vec::new(),
            families: BTreeMap::new(),
            topology: topology.clone(),
            state_dim,
        }
    }

    pub fn intervals(&self) -> &[AttackInterval] {
        &self.intervals
    }

    pub fn families(&self) -> &BTreeMap<String, SignalFamily> {
        &self.families
    }

    fn breakpoints(&self) -> BTreeSet<usize> {
        self.intervals.iter().map(|iv| iv.start).collect()
    }

    fn active_links(&self, k: usize) -> impl Iterator<Item = (&Link, &AttackInterval)> {
        self.intervals
            .iter()
            .filter(move |iv| iv.start <= k && k <= iv.end)
            .flat_map(|iv| iv.links.iter().map(move |l| (l, iv)))
    }

    fn overlap_problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for k in self.breakpoints() {
            let mut seen = BTreeSet::new();
            for (l, _) in self.active_links(k) {
                if !seen.insert(*l) {
                    out.push(format!(
                        "link ({},{}) is scheduled twice at step {k}",
                        l.target, l.source
                    ));
                }
            }
        }
        out
    }

    fn budget_problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for k in self.breakpoints() {
            for i in 1..=self.topology.sensor_count() {
                let attacked = self.attacked_set(i, k).len();
                let budget = self.topology.attack_budget(i);
                if attacked > budget {
                    out.push(format!(
                        "step {k}: sensor {i} has {attacked} attacked neighbors but may have at most floor({}/2) = {budget}",
                        self.topology.degree(i)
                    ));
                }
            }
        }
        out
    }

    /// Ground-truth attacked in-neighbors of sensor `i` at step `k`, sorted.
    pub fn attacked_set(&self, i: usize, k: usize) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .active_links(k)
            .filter(|(l, _)| l.target == i)
            .map(|(l, _)| l.source)
            .collect();
        set.into_iter().collect()
    }

    /// Targets that are attacked at some step.
    pub fn targets(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .intervals
            .iter()
            .flat_map(|iv| iv.links.iter().map(|l| l.target))
            .collect();
        set.into_iter().collect()
    }

    /// Number of changes in sensor `i`'s attacked set over steps `1..=horizon`:
    /// the sum over consecutive step pairs of the symmetric-difference size.
    pub fn delta_t(&self, i: usize, horizon: usize) -> usize {
        if horizon < 2 {
            return 0;
        }
        let mut prev: BTreeSet<usize> = self.attacked_set(i, 1).into_iter().collect();
        let mut total = 0;
        for k in 2..=horizon {
            let cur: BTreeSet<usize> = self.attacked_set(i, k).into_iter().collect();
            total += prev.symmetric_difference(&cur).count();
            prev = cur;
        }
        total
    }

    /// Signals for step `k`. Active links are drawn in (target, source)
    /// order; every other link carries zero.
    pub fn injections_at<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Injections {
        let mut out = Injections::zeros(&self.topology, self.state_dim);
        let mut active: Vec<(&Link, &AttackInterval)> = self.active_links(k).collect();
        active.sort_by_key(|(l, _)| **l);
        for (link, iv) in active {
            let z = self.families[&iv.family].draw(self.state_dim, rng);
            // Links were validated at construction.
            out.set(&self.topology, *link, z).expect("validated link");
        }
        out
    }
}
