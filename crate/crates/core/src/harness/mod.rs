//! Twin-experiment orchestration: truth, baseline and filtered runs, the
//! error metric and every file the experiment writes.

mod artifacts;
mod config;
mod metrics;
mod run;

pub use artifacts::{run_experiment, MetricsTable, RunArtifacts, RunPlan};
pub use config::{theta_label, EnsembleSpread, ExperimentConfig, ModelParams, Release};
pub use metrics::{default_gamma, err_l2, observe_truth, polyline_nodes, sample_polyline, Station};
pub use run::{run_baseline, run_filter, run_truth, Experiment, FilterRun, PathRecord, PathStep, Trajectory, TruthSensor};
