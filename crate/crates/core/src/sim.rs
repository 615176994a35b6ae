//! Seeded Monte Carlo runs over several estimation pipelines.
//!
//! Every seed simulates one plant trajectory and feeds the same
//! measurements, injections and detector thresholds to each pipeline:
//!
//! - `noattack`: consensus estimator on clean payloads.
//! - `nodetector`: the same estimator consuming every tampered payload.
//! - `sampled`, `sorted`: suspicious-neighbor selection followed by exclusion.
//! - `oracle`: exhaustive-search selection followed by exclusion.
//!
//! Step `k` runs from 1 to the horizon with `x(1) = xhat_i(1) = x0`. The
//! recorded error at `k` is taken before the step-`k` update.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::Injections;
use crate::detector::{draw_threshold, verdict};
use crate::error::{Error, Result};
use crate::estimator::{assemble_f, spectral_radius, synthesize_gains, EstimatorState, InclusionMask};
use crate::lin_model::{measure, step_state, StateVector};
use crate::metrics::{
    average_rate, mean_error, optimization_rate, regret_and_bound, rmse, DetectionCounts, Regret,
    RunSummary, StepRate,
};
use crate::rng::{stream, Purpose, Stream};
use crate::scenario::{ExclusionPolicy, Scenario};
use crate::scheduler::{objective, oracle_optimal, select_suspicious, ErrorSummary, ExpertState, SelectionMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    NoAttack,
    NoDetector,
    Sampled,
    Sorted,
    Oracle,
}

impl Pipeline {
    pub const ALL: [Pipeline; 5] = [
        Pipeline::NoAttack,
        Pipeline::NoDetector,
        Pipeline::Sampled,
        Pipeline::Sorted,
        Pipeline::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pipeline::NoAttack => "noattack",
            Pipeline::NoDetector => "nodetector",
            Pipeline::Sampled => "sampled",
            Pipeline::Sorted => "sorted",
            Pipeline::Oracle => "oracle",
        }
    }

    /// Whether the pipeline selects and verifies suspicious neighbors.
    pub fn selects(self) -> bool {
        matches!(self, Pipeline::Sampled | Pipeline::Sorted | Pipeline::Oracle)
    }

    pub fn for_mode(mode: SelectionMode) -> Self {
        match mode {
            SelectionMode::Sampled => Pipeline::Sampled,
            SelectionMode::Sorted => Pipeline::Sorted,
        }
    }

    fn purpose(self) -> Purpose {
        match self {
            Pipeline::Sorted => Purpose::SchedulerSorted,
            Pipeline::Oracle => Purpose::SchedulerOracle,
            _ => Purpose::SchedulerSampled,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub pipelines: Vec<Pipeline>,
    /// Worker threads; 0 uses rayon's default.
    pub jobs: usize,
    pub record_trace: bool,
    /// Abort when `rho(F) >= 1` for the all-included or all-excluded mask.
    pub check_spectral: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            pipelines: Pipeline::ALL.to_vec(),
            jobs: 1,
            record_trace: false,
            check_spectral: true,
        }
    }
}

/// One focus-sensor row of the per-step output.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub k: usize,
    pub sensor: usize,
    pub f_sel: f64,
    pub f_opt: f64,
    pub rate: StepRate,
    /// `|xhat_i(k) - x(k)|^2`.
    pub rmse_contrib: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub pipeline: Pipeline,
    /// Network-average error `e(k)` for `k = 1..=T`.
    pub errors: Vec<DVector<f64>>,
    pub steps: Vec<StepRow>,
    pub detection: DetectionCounts,
    /// Present for selecting pipelines only.
    pub summary: Option<RunSummary>,
    pub final_estimates: Vec<StateVector>,
}

/// Full per-step record of one seed, kept only on request.
#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    /// `x(k)` for `k = 1..=T`.
    pub states: Vec<StateVector>,
    pub injections: Vec<Injections>,
    /// Estimates at the start of each step.
    pub estimates: BTreeMap<Pipeline, Vec<Vec<StateVector>>>,
    /// Selected neighbors per step and sensor.
    pub selections: BTreeMap<Pipeline, Vec<Vec<Vec<usize>>>>,
    /// Detector verdicts for the selected neighbors, aligned with `selections`.
    pub verdicts: BTreeMap<Pipeline, Vec<Vec<Vec<bool>>>>,
    pub masks: BTreeMap<Pipeline, Vec<InclusionMask>>,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub runs: Vec<PipelineRun>,
    pub trace: Option<RunTrace>,
}

impl SeedRun {
    pub fn get(&self, pipeline: Pipeline) -> Option<&PipelineRun> {
        self.runs.iter().find(|r| r.pipeline == pipeline)
    }
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub master_seed: u64,
    pub pipelines: Vec<Pipeline>,
    pub spectral_radius: Option<f64>,
    /// Sorted by seed.
    pub seeds: Vec<SeedRun>,
}

impl CaseResult {
    fn runs(&self, pipeline: Pipeline) -> impl Iterator<Item = &PipelineRun> {
        self.seeds.iter().filter_map(move |s| s.get(pipeline))
    }

    pub fn rmse(&self, pipeline: Pipeline) -> Result<Vec<f64>> {
        let errors: Vec<Vec<DVector<f64>>> = self.runs(pipeline).map(|r| r.errors.clone()).collect();
        rmse(&errors)
    }

    pub fn summaries(&self, pipeline: Pipeline) -> Vec<&RunSummary> {
        self.runs(pipeline).filter_map(|r| r.summary.as_ref()).collect()
    }

    /// Seed mean of the average optimization rate.
    pub fn mean_opt_rate(&self, pipeline: Pipeline) -> f64 {
        let s = self.summaries(pipeline);
        s.iter().map(|r| r.avg_opt_rate).sum::<f64>() / s.len() as f64
    }

    /// Detection counts pooled over seeds.
    pub fn detection(&self, pipeline: Pipeline) -> DetectionCounts {
        let mut total = DetectionCounts::default();
        for r in self.runs(pipeline) {
            total.merge(&r.detection);
        }
        total
    }
}

/// Largest `rho(F)` over the all-included and all-excluded masks.
pub fn check_spectral_precondition(scenario: &Scenario, gains: &[DMatrix<f64>]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for value in [true, false] {
        let mask = InclusionMask::uniform(&scenario.topology, value);
        let (f, _) = assemble_f(&mask, gains, &scenario.model, &scenario.sensors, &scenario.topology, scenario.lambda);
        let rho = spectral_radius(&f)?;
        if rho >= 1.0 {
            return Err(Error::Precondition(format!(
                "rho(F) = {rho:.6} >= 1 with every link {}; the difference dynamics are not contractive",
                if value { "included" } else { "excluded" }
            )));
        }
        worst = worst.max(rho);
    }
    Ok(worst)
}

/// Runs every seed `master_seed + r` for `r < monte_carlo`.
pub fn run_case(scenario: &Scenario, options: &RunOptions) -> Result<CaseResult> {
    let seeds: Vec<u64> = (0..scenario.monte_carlo as u64)
        .map(|r| scenario.seed.wrapping_add(r))
        .collect();
    run_seeds(scenario, &seeds, options)
}

pub fn run_seeds(scenario: &Scenario, seeds: &[u64], options: &RunOptions) -> Result<CaseResult> {
    let gains = synthesize_gains(&scenario.model, &scenario.sensors, scenario.spec.model.riccati_iters)?;
    let spectral = if options.check_spectral {
        Some(check_spectral_precondition(scenario, &gains)?)
    } else {
        None
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", options.jobs)))?;
    let mut runs: Vec<SeedRun> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| run_seed(scenario, &gains, seed, options))
            .collect::<Result<Vec<_>>>()
    })?;
    runs.sort_by_key(|r| r.seed);
    let mut pipelines = options.pipelines.clone();
    pipelines.sort();
    pipelines.dedup();
    Ok(CaseResult {
        name: scenario.spec.name.clone(),
        master_seed: scenario.seed,
        pipelines,
        spectral_radius: spectral,
        seeds: runs,
    })
}

struct Lane {
    pipeline: Pipeline,
    est: EstimatorState,
    experts: Vec<ExpertState>,
    rng: Stream,
    errors: Vec<DVector<f64>>,
    steps: Vec<StepRow>,
    detection: DetectionCounts,
    /// Per focus sensor: objective series and step rates.
    f_sel: Vec<Vec<f64>>,
    f_opt: Vec<Vec<f64>>,
    rates: Vec<Vec<StepRate>>,
}

pub fn run_seed(scenario: &Scenario, gains: &[DMatrix<f64>], seed: u64, options: &RunOptions) -> Result<SeedRun> {
    let topo = &scenario.topology;
    let count = topo.sensor_count();
    let focus = &scenario.focus_sensors;

    let mut process_rng = stream(seed, Purpose::ProcessNoise);
    let mut attack_rng = stream(seed, Purpose::Attack);
    let mut detector_rng = stream(seed, Purpose::Detector);
    let mut measurement_rngs: Vec<Stream> = (1..=count).map(|i| stream(seed, Purpose::Measurement(i))).collect();

    let mut pipelines = options.pipelines.clone();
    pipelines.sort();
    pipelines.dedup();
    let mut lanes = Vec::with_capacity(pipelines.len());
    for &p in &pipelines {
        let experts = (1..=count)
            .map(|i| ExpertState::new(scenario.beta, topo.degree(i)))
            .collect::<Result<Vec<_>>>()?;
        lanes.push(Lane {
            pipeline: p,
            est: EstimatorState::new(&scenario.x0, gains.to_vec(), scenario.lambda, topo)?,
            experts,
            rng: stream(seed, p.purpose()),
            errors: Vec::with_capacity(scenario.horizon),
            steps: Vec::new(),
            detection: DetectionCounts::default(),
            f_sel: vec![Vec::with_capacity(scenario.horizon); focus.len()],
            f_opt: vec![Vec::with_capacity(scenario.horizon); focus.len()],
            rates: vec![Vec::with_capacity(scenario.horizon); focus.len()],
        });
    }

    let mut trace = options.record_trace.then(RunTrace::default);
    let all_in = InclusionMask::uniform(topo, true);
    let mut x = scenario.x0.clone();
    for k in 1..=scenario.horizon {
        let ys = scenario
            .sensors
            .iter()
            .zip(measurement_rngs.iter_mut())
            .map(|(s, rng)| measure(s, &x, rng))
            .collect::<Result<Vec<_>>>()?;
        let z = scenario.schedule.injections_at(k, &mut attack_rng);
        let xi: Vec<f64> = (0..count).map(|_| draw_threshold(&mut detector_rng)).collect();

        for lane in &mut lanes {
            lane.errors.push(mean_error(lane.est.estimates(), &x));
            if let Some(t) = trace.as_mut() {
                t.estimates.entry(lane.pipeline).or_default().push(lane.est.estimates().to_vec());
            }
            match lane.pipeline {
                Pipeline::NoAttack => lane.est.network_step(topo, &scenario.sensors, &scenario.model, &ys, None, &all_in)?,
                Pipeline::NoDetector => {
                    lane.est.network_step(topo, &scenario.sensors, &scenario.model, &ys, Some(&z), &all_in)?
                }
                _ => {
                    let (mask, selections, verdicts) = select_step(scenario, lane, &x, &z, &xi, k)?;
                    lane.est.network_step(topo, &scenario.sensors, &scenario.model, &ys, Some(&z), &mask)?;
                    if let Some(t) = trace.as_mut() {
                        t.selections.entry(lane.pipeline).or_default().push(selections);
                        t.verdicts.entry(lane.pipeline).or_default().push(verdicts);
                        t.masks.entry(lane.pipeline).or_default().push(mask);
                    }
                }
            }
        }
        if let Some(t) = trace.as_mut() {
            t.states.push(x.clone());
            t.injections.push(z);
        }
        x = step_state(&scenario.model, &x, &mut process_rng)?;
    }

    let runs = lanes
        .into_iter()
        .map(|lane| finish_lane(scenario, seed, lane))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedRun { seed, runs, trace })
}

type StepSelection = (InclusionMask, Vec<Vec<usize>>, Vec<Vec<bool>>);

fn select_step(
    scenario: &Scenario,
    lane: &mut Lane,
    x: &StateVector,
    z: &Injections,
    xi: &[f64],
    k: usize,
) -> Result<StepSelection> {
    let topo = &scenario.topology;
    let mut rows = Vec::with_capacity(topo.sensor_count());
    let mut selections = Vec::with_capacity(topo.sensor_count());
    let mut verdicts = Vec::with_capacity(topo.sensor_count());
    for i in 1..=topo.sensor_count() {
        let neighbors = topo.neighbors(i);
        let xhat_i = lane.est.estimate(i).clone();
        let received = lane.est.received(topo, Some(z), i);
        let summary = ErrorSummary::from_residuals(i, k, neighbors, &xhat_i, &received)?;
        let q = scenario.q_of(i);
        let chosen = match lane.pipeline {
            Pipeline::Oracle => oracle_optimal(&summary, q)?,
            p => {
                let mode = if p == Pipeline::Sampled {
                    SelectionMode::Sampled
                } else {
                    SelectionMode::Sorted
                };
                select_suspicious(&summary, &mut lane.experts[i - 1], q, mode, &mut lane.rng)?.set
            }
        };

        let upsilon_inv = scenario.detector.upsilon_inv(i);
        let mut row = vec![true; neighbors.len()];
        let mut accepted = Vec::with_capacity(chosen.len());
        for &j in &chosen.members {
            let slot = topo.slot(i, j).expect("selected from the neighborhood");
            let ok = verdict(upsilon_inv, &xhat_i, &received[slot], xi[i - 1]);
            accepted.push(ok);
            row[slot] = match scenario.exclusion {
                ExclusionPolicy::Selected => false,
                ExclusionPolicy::Flagged => ok,
            };
        }
        for (slot, &attacked) in z.active_row(i).iter().enumerate() {
            let j = neighbors[slot];
            let flagged = chosen
                .members
                .iter()
                .position(|&m| m == j)
                .is_some_and(|p| !accepted[p]);
            lane.detection.record(attacked, flagged);
        }

        if let Ok(fi) = scenario.focus_sensors.binary_search(&i) {
            let f_sel = objective(&summary, &chosen.members)?;
            let f_opt = if lane.pipeline == Pipeline::Oracle {
                f_sel
            } else {
                objective(&summary, &oracle_optimal(&summary, q)?.members)?
            };
            let rate = optimization_rate(f_sel, f_opt)?;
            lane.f_sel[fi].push(f_sel);
            lane.f_opt[fi].push(f_opt);
            lane.rates[fi].push(rate);
            lane.steps.push(StepRow {
                k,
                sensor: i,
                f_sel,
                f_opt,
                rate,
                rmse_contrib: (&xhat_i - x).norm_squared(),
            });
        }
        rows.push(row);
        selections.push(chosen.members);
        verdicts.push(accepted);
    }
    Ok((InclusionMask::from_rows(topo, rows)?, selections, verdicts))
}

fn finish_lane(scenario: &Scenario, seed: u64, lane: Lane) -> Result<PipelineRun> {
    let summary = if lane.pipeline.selects() && !scenario.focus_sensors.is_empty() {
        let mut rate_sum = 0.0;
        let mut degenerate = 0;
        let mut worst: Option<Regret> = None;
        for (fi, &i) in scenario.focus_sensors.iter().enumerate() {
            let (avg, deg) = average_rate(&lane.rates[fi]);
            rate_sum += avg;
            degenerate += deg;
            let regret = regret_and_bound(
                &lane.f_sel[fi],
                &lane.f_opt[fi],
                scenario.q_of(i),
                scenario.topology.degree(i),
                scenario.schedule.delta_t(i, scenario.horizon),
            )?;
            if worst.is_none_or(|w| regret.lhs - regret.rhs > w.lhs - w.rhs) {
                worst = Some(regret);
            }
        }
        Some(RunSummary {
            seed,
            avg_opt_rate: rate_sum / scenario.focus_sensors.len() as f64,
            degenerate_steps: degenerate,
            regret: worst.expect("at least one focus sensor"),
            fn_rate: lane.detection.false_negative_rate(),
            fp_rate: lane.detection.false_positive_rate(),
        })
    } else {
        None
    };
    Ok(PipelineRun {
        pipeline: lane.pipeline,
        errors: lane.errors,
        steps: lane.steps,
        detection: lane.detection,
        summary,
        final_estimates: lane.est.estimates().to_vec(),
    })
}
