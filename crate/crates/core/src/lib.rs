//! Resilient distributed state estimation under false data injection.
//!
//! A network of sensors runs consensus Kalman-type estimators over a shared
//! linear plant. An adversary injects bounded signals on a few links. Each
//! sensor picks its most suspicious neighbors with an online submodular
//! scheduler, tests them with a randomized threshold detector, and drops
//! them from the consensus term.

pub mod attack;
pub mod detector;
pub mod error;
pub mod estimator;
pub mod lin_model;
pub mod metrics;
pub mod oracle_check;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod scheduler;
pub mod sim;
pub mod sweep;

pub use attack::{AttackInterval, AttackSchedule, Injections, Link, SignalFamily, SignalKind};
pub use detector::DetectorConfig;
pub use error::{Error, Result};
pub use estimator::{AugmentedError, EstimatorState, InclusionMask};
pub use lin_model::{SensorModel, StateVector, SystemModel, Topology};
pub use metrics::{DetectionCounts, Regret, RunSummary, StepRate};
pub use scenario::{load_scenario, ExclusionPolicy, Scenario, ScenarioSpec};
pub use scheduler::{ErrorSummary, ExpertState, SelectionMode, SuspiciousSet};
pub use sim::{run_case, CaseResult, Pipeline, RunOptions, RunTrace};
