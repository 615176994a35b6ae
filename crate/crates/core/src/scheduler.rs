//! Suspicious-neighbor selection.
//!
//! Sensor `i` scores each neighbor `j` by the residual
//! `d_j = ||xhat_i - xhat^a_ij||` and picks at most `q_i = floor(|N_i|/2)`
//! of them to maximize `f(S) = sqrt(sum_{j in S} d_j^2)`. `f` is monotone and
//! submodular, so a sequential greedy choice driven by multiplicative
//! weights has a `1 - 1/e` guarantee.
//!
//! Each call to [`select_suspicious`] runs exactly `q` rounds. In round `l`,
//! for every unselected neighbor:
//!
//! ```text
//! G_j   = f(S) - f(S + j)                      (<= 0)
//! v_j   = w_j * exp(-G_j)
//! w_j   = v_j                                  if beta = 0
//!       = beta * W_j / (k - 1) + (1 - beta) v_j otherwise (history term 0 at k = 1)
//! p     = w / |w|_1
//! ```
//!
//! and one neighbor is drawn from `p` (sampled mode) or taken as `argmax p`
//! (sorted mode, ties to the lowest id). Round weights start at 1 every step;
//! cross-step memory lives only in `W_j += exp(-1/k) v_j` of the first round.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neighborhood size above which [`oracle_optimal`] stops enumerating.
pub const ORACLE_ENUMERATION_LIMIT: usize = 25;

/// Largest exponent fed to `exp` when turning gains into weights.
const MAX_EXPONENT: f64 = 700.0;

/// Diagonal of the error summary matrix: one residual per neighbor, in
/// ascending neighbor-id order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub sensor: usize,
    pub step: usize,
    neighbors: Vec<usize>,
    entries: Vec<f64>,
}

impl ErrorSummary {
    pub fn new(sensor: usize, step: usize, neighbors: Vec<usize>, entries: Vec<f64>) -> Result<Self> {
        if neighbors.len() != entries.len() {
            return Err(Error::dim("error summary entries", neighbors.len(), entries.len()));
        }
        if neighbors.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Argument("neighbor ids must be strictly ascending".into()));
        }
        if let Some(bad) = entries.iter().find(|e| !(**e >= 0.0) || !e.is_finite()) {
            return Err(Error::Argument(format!("residuals must be finite and >= 0, got {bad}")));
        }
        Ok(Self {
            sensor,
            step,
            neighbors,
            entries,
        })
    }

    /// Neighbors numbered `1..=entries.len()`.
    pub fn from_entries(entries: Vec<f64>) -> Result<Self> {
        let neighbors = (1..=entries.len()).collect();
        Self::new(0, 1, neighbors, entries)
    }

    /// Residual norms between the local estimate and each received estimate.
    pub fn from_residuals(
        sensor: usize,
        step: usize,
        neighbors: &[usize],
        xhat_i: &DVector<f64>,
        received: &[DVector<f64>],
    ) -> Result<Self> {
        let entries = received.iter().map(|r| (xhat_i - r).norm()).collect();
        Self::new(sensor, step, neighbors.to_vec(), entries)
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn slot(&self, j: usize) -> Result<usize> {
        self.neighbors.binary_search(&j).map_err(|_| {
            Error::Argument(format!("sensor {j} is not a neighbor of sensor {}", self.sensor))
        })
    }

    fn slots(&self, subset: &[usize]) -> Result<Vec<usize>> {
        let mut slots = subset.iter().map(|&j| self.slot(j)).collect::<Result<Vec<_>>>()?;
        slots.sort_unstable();
        if slots.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("subset lists a neighbor twice".into()));
        }
        Ok(slots)
    }

    fn value_of_slots(&self, slots: &[usize]) -> f64 {
        slots.iter().map(|&s| self.entries[s].powi(2)).sum::<f64>().sqrt()
    }
}

/// `f(S) = sqrt(sum_{j in S} d_j^2)`.
pub fn objective(summary: &ErrorSummary, subset: &[usize]) -> Result<f64> {
    let slots = summary.slots(subset)?;
    Ok(summary.value_of_slots(&slots))
}

/// `f(base + j) - f(base)`, always >= 0.
pub fn marginal_gain(summary: &ErrorSummary, base: &[usize], j: usize) -> Result<f64> {
    if base.contains(&j) {
        return Err(Error::Argument(format!("neighbor {j} is already in the base set")));
    }
    let mut with = base.to_vec();
    with.push(j);
    Ok(objective(summary, &with)? - objective(summary, base)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Sampled,
    Sorted,
}

/// Selection output for one sensor at one step. `members` is in selection order.
#[derive(Debug, Clone, PartialEq)]
pub struct SuspiciousSet {
    pub sensor: usize,
    pub step: usize,
    pub members: Vec<usize>,
}

impl SuspiciousSet {
    pub fn sorted_members(&self) -> Vec<usize> {
        let mut m = self.members.clone();
        m.sort_unstable();
        m
    }

    pub fn contains(&self, j: usize) -> bool {
        self.members.contains(&j)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Historical suspicion for one sensor's neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertState {
    beta: f64,
    cumulative: Vec<f64>,
    history_count: usize,
    last_first_round: Vec<f64>,
}

impl ExpertState {
    pub fn new(beta: f64, neighbor_count: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1], got {beta}")));
        }
        Ok(Self {
            beta,
            cumulative: vec![0.0; neighbor_count],
            history_count: 0,
            last_first_round: vec![0.0; neighbor_count],
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `W_j`, per neighbor slot.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn history_count(&self) -> usize {
        self.history_count
    }

    /// First-round `v_j` from the most recent step.
    pub fn last_first_round(&self) -> &[f64] {
        &self.last_first_round
    }

    fn historical_term(&self, slot: usize) -> f64 {
        if self.history_count == 0 {
            0.0
        } else {
            self.cumulative[slot] / self.history_count as f64
        }
    }
}

/// One selection round, for diagnostics and distribution checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    /// Unselected neighbor ids, ascending.
    pub candidates: Vec<usize>,
    /// `G_j = f(S) - f(S + j)` per candidate.
    pub gains: Vec<f64>,
    /// Normalized weights `p_j` per candidate.
    pub probabilities: Vec<f64>,
    pub chosen: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub set: SuspiciousSet,
    /// Objective evaluations `f(S + j)` performed. At most `q * |N_i|`.
    pub evaluations: usize,
    pub rounds: Vec<Round>,
}

pub fn select_suspicious<R: Rng + ?Sized>(
    summary: &ErrorSummary,
    expert: &mut ExpertState,
    q: usize,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<SelectionOutcome> {
    let size = summary.len();
    if q > size / 2 {
        return Err(Error::Config(format!(
            "cannot select {q} suspicious neighbors out of {size}: the budget is floor({size}/2) = {}",
            size / 2
        )));
    }
    if expert.cumulative.len() != size {
        return Err(Error::dim("expert state", size, expert.cumulative.len()));
    }

    let beta = expert.beta;
    let mut selected = vec![false; size];
    let mut weights = vec![1.0; size];
    let mut first_round = vec![0.0; size];
    let mut current_sq = 0.0;
    let mut current_f = 0.0;
    let mut evaluations = 0;
    let mut members = Vec::with_capacity(q);
    let mut rounds = Vec::with_capacity(q);

    for l in 0..q {
        let candidates: Vec<usize> = (0..size).filter(|&s| !selected[s]).collect();
        let mut gains = Vec::with_capacity(candidates.len());
        for &s in &candidates {
            let with_sq = current_sq + summary.entries[s].powi(2);
            let with_f = with_sq.sqrt();
            evaluations += 1;
            let g = current_f - with_f;
            let v = (weights[s] * (-g).min(MAX_EXPONENT).exp()).min(f64::MAX);
            if l == 0 {
                first_round[s] = v;
            }
            weights[s] = if beta == 0.0 {
                v
            } else {
                beta * expert.historical_term(s) + (1.0 - beta) * v
            };
            gains.push(g);
        }

        let probabilities = normalize(candidates.iter().map(|&s| weights[s]));
        let pick = match mode {
            SelectionMode::Sorted => argmax_lowest(&probabilities),
            SelectionMode::Sampled => draw_index(&probabilities, rng),
        };
        let slot = candidates[pick];
        selected[slot] = true;
        current_sq += summary.entries[slot].powi(2);
        current_f = current_sq.sqrt();
        members.push(summary.neighbors[slot]);
        rounds.push(Round {
            candidates: candidates.iter().map(|&s| summary.neighbors[s]).collect(),
            gains,
            probabilities,
            chosen: summary.neighbors[slot],
        });
    }

    if evaluations > q * size {
        return Err(Error::Invariant(format!(
            "{evaluations} objective evaluations exceed the budget q|N| = {}",
            q * size
        )));
    }

    let t = expert.history_count + 1;
    if q > 0 {
        let decay = (-1.0 / t as f64).exp();
        for (w, v) in expert.cumulative.iter_mut().zip(&first_round) {
            *w += decay * v;
        }
        expert.last_first_round = first_round;
    }
    expert.history_count = t;

    Ok(SelectionOutcome {
        set: SuspiciousSet {
            sensor: summary.sensor,
            step: summary.step,
            members,
        },
        evaluations,
        rounds,
    })
}

/// Scaled by the largest weight first so huge weights cannot overflow the
/// sum. All-zero weights give the uniform distribution.
fn normalize(weights: impl Iterator<Item = f64>) -> Vec<f64> {
    let w: Vec<f64> = weights.collect();
    let max = w.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        log::warn!("all selection weights are zero; falling back to a uniform draw");
        return vec![1.0 / w.len() as f64; w.len()];
    }
    let scaled: Vec<f64> = w.iter().map(|x| x / max).collect();
    let total: f64 = scaled.iter().sum();
    scaled.into_iter().map(|x| x / total).collect()
}

fn argmax_lowest(p: &[f64]) -> usize {
    let mut best = 0;
    for (idx, &x) in p.iter().enumerate().skip(1) {
        if x > p[best] {
            best = idx;
        }
    }
    best
}

fn draw_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (idx, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return idx;
        }
    }
    // Rounding left `acc` slightly below 1; take the last nonzero entry.
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// Best subset of size at most `q` by exhaustive enumeration. Ties prefer
/// the larger set, then the lexicographically smallest id list.
/// Neighborhoods above [`ORACLE_ENUMERATION_LIMIT`] use the top-`q`
/// shortcut, which is exact for this objective.
pub fn oracle_optimal(summary: &ErrorSummary, q: usize) -> Result<SuspiciousSet> {
    let size = summary.len();
    if q > size {
        return Err(Error::Argument(format!("q = {q} exceeds neighborhood size {size}")));
    }
    let slots = if size > ORACLE_ENUMERATION_LIMIT {
        log::info!(
            "neighborhood of {size} exceeds the enumeration limit; using the top-{q} shortcut"
        );
        top_q_slots(summary, q)
    } else {
        enumerate_best(summary, q)
    };
    Ok(SuspiciousSet {
        sensor: summary.sensor,
        step: summary.step,
        members: slots.iter().map(|&s| summary.neighbors[s]).collect(),
    })
}

fn enumerate_best(summary: &ErrorSummary, q: usize) -> Vec<usize> {
    let size = summary.len();
    let squares: Vec<f64> = summary.entries.iter().map(|d| d.powi(2)).collect();
    let bits = |mask: u64| (0..size).filter(move |&b| mask & (1 << b) != 0);
    let mut best_mask: u64 = 0;
    let mut best_f = 0.0;
    for k in 1..=q {
        // Gosper's hack over all k-subsets of `size` bits.
        let mut mask: u64 = (1u64 << k) - 1;
        let limit: u64 = 1u64 << size;
        while mask < limit {
            let f = bits(mask).map(|b| squares[b]).sum::<f64>().sqrt();
            let better = f > best_f
                || (f == best_f
                    && (mask.count_ones() > best_mask.count_ones()
                        || (mask.count_ones() == best_mask.count_ones()
                            && bits(mask).lt(bits(best_mask)))));
            if better {
                best_f = f;
                best_mask = mask;
            }
            let c = mask & mask.wrapping_neg();
            let r = mask + c;
            mask = (((r ^ mask) >> 2) / c) | r;
        }
    }
    bits(best_mask).collect()
}

fn top_q_slots(summary: &ErrorSummary, q: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..summary.len()).collect();
    order.sort_by(|&a, &b| {
        summary.entries[b]
            .partial_cmp(&summary.entries[a])
            .expect("finite residuals")
            .then(a.cmp(&b))
    });
    let mut top: Vec<usize> = order.into_iter().take(q).collect();
    top.sort_unstable();
    top
}

/// A counterexample to monotonicity or diminishing returns.
#[derive(Debug, Clone, PartialEq)]
pub struct SubmodularityViolation {
    pub entries: Vec<f64>,
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub j: usize,
    pub detail: String,
}

/// Samples nested `A <= B` and `j` outside `B`; returns the first violation
/// beyond 1e-12 slack.
pub fn find_submodularity_violation<R: Rng + ?Sized>(
    summary: &ErrorSummary,
    trials: usize,
    rng: &mut R,
) -> Option<SubmodularityViolation> {
    const SLACK: f64 = 1e-12;
    let size = summary.len();
    if size == 0 {
        return None;
    }
    for _ in 0..trials {
        let j_slot = rng.random_range(0..size);
        let mut b = Vec::new();
        let mut a = Vec::new();
        for s in (0..size).filter(|&s| s != j_slot) {
            if rng.random::<bool>() {
                b.push(s);
                if rng.random::<bool>() {
                    a.push(s);
                }
            }
        }
        let f = |slots: &[usize]| summary.value_of_slots(slots);
        let with = |slots: &[usize]| {
            let mut v = slots.to_vec();
            v.push(j_slot);
            f(&v)
        };
        let (fa, fb) = (f(&a), f(&b));
        let gain_a = with(&a) - fa;
        let gain_b = with(&b) - fb;
        let detail = if fb + SLACK < fa {
            Some(format!("monotonicity: f(B) = {fb} < f(A) = {fa}"))
        } else if gain_a + SLACK < gain_b {
            Some(format!("diminishing returns: gain at A = {gain_a} < gain at B = {gain_b}"))
        } else {
            None
        };
        if let Some(detail) = detail {
            let ids = |slots: &[usize]| slots.iter().map(|&s| summary.neighbors[s]).collect();
            return Some(SubmodularityViolation {
                entries: summary.entries.clone(),
                a: ids(&a),
                b: ids(&b),
                j: summary.neighbors[j_slot],
                detail,
            });
        }
    }
    None
}

pub fn check_submodularity<R: Rng + ?Sized>(summary: &ErrorSummary, trials: usize, rng: &mut R) -> bool {
    find_submodularity_violation(summary, trials, rng).is_none()
}
