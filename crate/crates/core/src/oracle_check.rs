//! Randomized self-check of the selection machinery against brute force.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::scheduler::{
    find_submodularity_violation, oracle_optimal, select_suspicious, ErrorSummary, ExpertState,
    SelectionMode, ORACLE_ENUMERATION_LIMIT,
};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheckReport {
    pub trials: usize,
    pub evaluations: usize,
    /// Each failure names its instance so it can be replayed.
    pub failures: Vec<String>,
}

impl OracleCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// For each trial draws a size from `sizes`, residuals uniform on `[0, 10)`
/// and a budget from `q_values` (capped at half the size), then checks that
/// sorted selection with `beta = 0` equals the exhaustive optimum, that the
/// objective is submodular on sampled triples, and that a sampled-mode call
/// stays within `q |N|` evaluations.
pub fn oracle_check(sizes: &[usize], q_values: Option<&[usize]>, trials: usize, seed: u64) -> Result<OracleCheckReport> {
    if sizes.is_empty() {
        return Err(Error::Argument("oracle check needs at least one size".into()));
    }
    if let Some(&big) = sizes.iter().find(|&&s| s > ORACLE_ENUMERATION_LIMIT) {
        return Err(Error::Argument(format!(
            "size {big} exceeds the enumeration limit {ORACLE_ENUMERATION_LIMIT}"
        )));
    }
    let mut rng = stream(seed, Purpose::SchedulerOracle);
    let mut failures = Vec::new();
    let mut evaluations = 0;
    for t in 0..trials {
        let size = sizes[rng.random_range(0..sizes.len())];
        let q = match q_values {
            Some(qs) if !qs.is_empty() => qs[rng.random_range(0..qs.len())].min(size / 2),
            _ => rng.random_range(0..=size / 2),
        };
        let entries: Vec<f64> = (0..size).map(|_| rng.random::<f64>() * 10.0).collect();
        let summary = ErrorSummary::from_entries(entries.clone())?;
        let instance = format!("trial {t}: entries {entries:?}, q = {q}");

        let mut expert = ExpertState::new(0.0, size)?;
        let greedy = select_suspicious(&summary, &mut expert, q, SelectionMode::Sorted, &mut rng)?;
        let best = oracle_optimal(&summary, q)?;
        if greedy.set.sorted_members() != best.sorted_members() {
            failures.push(format!(
                "{instance}: sorted selection {:?} differs from the optimum {:?}",
                greedy.set.sorted_members(),
                best.sorted_members()
            ));
        }

        let mut expert = ExpertState::new(0.5, size)?;
        let sampled = select_suspicious(&summary, &mut expert, q, SelectionMode::Sampled, &mut rng)?;
        evaluations += sampled.evaluations;
        if sampled.evaluations > q * size {
            failures.push(format!(
                "{instance}: {} evaluations exceed q|N| = {}",
                sampled.evaluations,
                q * size
            ));
        }

        if let Some(v) = find_submodularity_violation(&summary, 10, &mut rng) {
            failures.push(format!(
                "{instance}: {} for A = {:?}, B = {:?}, j = {}",
                v.detail, v.a, v.b, v.j
            ));
        }
    }
    Ok(OracleCheckReport {
        trials,
        evaluations,
        failures,
    })
}
