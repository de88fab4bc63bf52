//! Truth, baseline and filtered runs of the twin experiment.

use std::path::Path;
use std::sync::Arc;

use super::config::{ExperimentConfig, ModelParams};
use super::metrics::{default_gamma, observe_truth};
use crate::enkf::{enkf_step, init_ensemble, EnsembleState, Forecaster, Observation, ObservationOperator, Sensor, StepDiagnostics};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{load_domain, DronePose, Grid, Point2};
use crate::rng::{substream, OBSERVATION_NOISE};
use crate::routing::ThetaSchedule;
use crate::transport::{gaussian_initial_condition, ConcentrationField};
use crate::windfield::WindField;

/// A validated configuration with its grid and initial release.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub grid: Grid,
    pub hash: String,
    pub c0: ConcentrationField,
    pub gamma: Vec<Point2>,
}

impl Experiment {
    /// Reads the domain file named by the config.
    pub fn prepare(cfg: ExperimentConfig) -> Result<Self> {
        let text = std::fs::read_to_string(&cfg.domain).map_err(|e| {
            Error::Config(format!("cannot read domain {}: {e}", cfg.domain.display()))
        })?;
        Self::from_domain_text(cfg, &text)
    }

    pub fn from_domain_text(cfg: ExperimentConfig, domain: &str) -> Result<Self> {
        cfg.validate()?;
        let spec = load_domain(domain, cfg.bbox, cfg.units)?;
        let grid = Grid::rasterize(&spec, cfg.h)?;
        let c0 = gaussian_initial_condition(&grid, cfg.release_center(), cfg.release.sigma0)?;
        DronePose::new(&grid, cfg.drone_start(), cfg.speed, 0.0)?;
        let gamma = match &cfg.gamma {
            Some(line) => line.iter().copied().map(Point2::from).collect(),
            None => default_gamma(&grid, cfg.release_center()),
        };
        let hash = cfg.hash(domain);
        Ok(Self {
            cfg,
            grid,
            hash,
            c0,
            gamma,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::prepare(ExperimentConfig::load(path)?)
    }

    pub fn steps(&self) -> usize {
        self.cfg.steps().expect("validated on construction")
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.cfg.dt
    }
}

/// Concentrations at every step `0..=T/dt` and the wind that drove them.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub fields: Vec<ConcentrationField>,
    pub wind: Arc<WindField>,
}

/// Reference run with the true wind and diffusion.
pub fn run_truth(exp: &Experiment) -> Result<Trajectory> {
    run_single(exp, exp.cfg.truth)
}

/// The model run from the initial belief with no observations.
pub fn run_baseline(exp: &Experiment) -> Result<Trajectory> {
    run_single(exp, exp.cfg.belief)
}

fn run_single(exp: &Experiment, params: ModelParams) -> Result<Trajectory> {
    let mut fc = exp.cfg.forecast(params.epsilon);
    fc.execution = Execution::Sequential;
    let forecaster = Forecaster::new(&exp.grid, exp.cfg.wind, fc)?;
    let mut state = EnsembleState::new(vec![exp.c0.clone()], vec![params.w_in], vec![params.w_dir])?;
    let mut fields = Vec::with_capacity(exp.steps() + 1);
    fields.push(exp.c0.clone());
    for _ in 0..exp.steps() {
        let report = forecaster.forecast(&mut state)?;
        if !report.degraded.is_empty() {
            return Err(Error::WindNotConverged {
                iterations: exp.cfg.wind.max_iterations,
                residual: f64::NAN,
            });
        }
        fields.push(state.members[0].clone());
    }
    let wind = state.winds[0].clone().expect("forecast solved the wind");
    Ok(Trajectory { fields, wind })
}

/// Reads the truth one step ahead of the filter with seeded Gaussian noise.
pub struct TruthSensor<'a> {
    truth: &'a [ConcentrationField],
    sigma_ob: f64,
    seed: u64,
}

impl<'a> TruthSensor<'a> {
    pub fn new(truth: &'a [ConcentrationField], sigma_ob: f64, seed: u64) -> Self {
        Self { truth, sigma_ob, seed }
    }
}

impl Sensor for TruthSensor<'_> {
    fn observe(&mut self, step: usize, h: &ObservationOperator) -> Result<Observation> {
        let field = self
            .truth
            .get(step + 1)
            .ok_or_else(|| Error::Config(format!("no truth stored for step {}", step + 1)))?;
        let mut rng = substream(self.seed, OBSERVATION_NOISE, step as u64, 0);
        let values = observe_truth(field, h, self.sigma_ob, &mut rng);
        Observation::new(h.nodes().to_vec(), values, self.sigma_ob)
    }
}

/// What the drone did during one step.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStep {
    pub heading: Option<f64>,
    pub sector: usize,
    pub fallbacks: usize,
    pub observed_nodes: Vec<usize>,
}

/// Pose at time `t` and the move made from it; the last record has no move.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub t: f64,
    pub position: Point2,
    pub step: Option<PathStep>,
}

#[derive(Debug, Clone)]
pub struct FilterRun {
    pub label: String,
    pub theta: ThetaSchedule,
    /// Ensemble means for the steps completed, starting at t = 0.
    pub means: Vec<ConcentrationField>,
    pub path: Vec<PathRecord>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Why the run stopped early, if it did.
    pub error: Option<String>,
}

/// Runs the ensemble filter against `truth`. Failures end the run and are
/// kept in `error` alongside everything computed before them.
pub fn run_filter(exp: &Experiment, truth: &Trajectory, theta: &ThetaSchedule, label: &str) -> FilterRun {
    let mut run = FilterRun {
        label: label.to_string(),
        theta: theta.clone(),
        means: Vec::new(),
        path: Vec::new(),
        diagnostics: Vec::new(),
        error: None,
    };
    if let Err(e) = filter_loop(exp, truth, theta, &mut run) {
        log::error!("filter run theta={label} stopped: {e}");
        run.error = Some(e.to_string());
    }
    run
}

fn filter_loop(exp: &Experiment, truth: &Trajectory, theta: &ThetaSchedule, run: &mut FilterRun) -> Result<()> {
    let cfg = &exp.cfg;
    let policy = cfg.policy(theta);
    let filter = cfg.filter();
    let forecaster = Forecaster::new(&exp.grid, cfg.wind, cfg.forecast(cfg.belief.epsilon))?;
    let mut sensor = TruthSensor::new(&truth.fields, cfg.sigma_ob, cfg.seed);
    let mut state = init_ensemble(&cfg.ensemble_init(), &exp.c0)?;
    let mut pose = DronePose::new(&exp.grid, cfg.drone_start(), cfg.speed, 0.0)?;
    run.means.push(state.mean_concentration());

    for step in 0..exp.steps() {
        let t = exp.time(step);
        let out = enkf_step(&state, &pose, step, &forecaster, &policy, &mut sensor, &filter)?;
        log::debug!(
            "theta={} t={t}: sector {} observed {:?} w_i {:.3}",
            run.label,
            out.diagnostics.sector,
            out.diagnostics.observed_nodes,
            out.diagnostics.w_i_mean
        );
        run.path.push(PathRecord {
            t,
            position: pose.position,
            step: Some(PathStep {
                heading: out.decision.choice.heading,
                sector: out.decision.choice.sector,
                fallbacks: out.decision.choice.fallbacks,
                observed_nodes: out.decision.operator.nodes().to_vec(),
            }),
        });
        run.diagnostics.push(out.diagnostics);
        state = out.state;
        pose = out.pose;
        run.means.push(state.mean_concentration());
    }
    run.path.push(PathRecord {
        t: exp.time(exp.steps()),
        position: pose.position,
        step: None,
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::err_l2;
    use std::f64::consts::PI;

    const OPEN: &str = r#"{"type": "FeatureCollection", "units": "meters", "bbox": [0, 0, 200, 200],
        "features": [{"type": "Feature", "geometry": {"type": "Polygon",
        "coordinates": [[[120, 120], [150, 120], [150, 150], [120, 150], [120, 120]]]}}]}"#;

    fn small(t_final: f64) -> ExperimentConfig {
        ExperimentConfig {
            units: crate::geometry::Units::Meters,
            t_final,
            release: super::super::config::Release {
                center: [100.0, 100.0],
                sigma0: 20.0,
            },
            drone_start: [60.0, 60.0],
            ensemble: super::super::config::EnsembleSpread {
                n: 4,
                sigma_in: 1.0,
                sigma_dir: 0.3,
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn calm_diffusionless_truth_is_constant() {
        let mut cfg = small(5.0);
        cfg.truth = ModelParams {
            w_in: 0.0,
            w_dir: 0.0,
            epsilon: 0.0,
        };
        let exp = Experiment::from_domain_text(cfg, OPEN).unwrap();
        let truth = run_truth(&exp).unwrap();
        assert_eq!(truth.fields.len(), 6);
        assert!(truth.fields.iter().all(|f| f == &exp.c0));
    }

    #[test]
    fn truth_is_reproducible_and_obeys_the_max_principle() {
        let exp = Experiment::from_domain_text(small(10.0), OPEN).unwrap();
        let a = run_truth(&exp).unwrap();
        let b = run_truth(&exp).unwrap();
        assert_eq!(a.fields, b.fields);
        for w in a.fields.windows(2) {
            assert!(w[1].max() <= w[0].max() * (1.0 + 1e-12));
            assert!(w[1].min() >= 0.0);
        }
        for f in &a.fields {
            assert_eq!(err_l2(&f.values, &f.values), Some(0.0));
        }
    }

    #[test]
    fn sensor_reads_one_step_ahead() {
        let truth: Vec<ConcentrationField> = (0..3).map(|k| ConcentrationField::new(vec![k as f64; 4])).collect();
        let mut sensor = TruthSensor::new(&truth, 1e-3, 5);
        let h = ObservationOperator::new(vec![1, 3]);
        let obs = sensor.observe(1, &h).unwrap();
        assert_eq!(obs.node_ids, vec![1, 3]);
        assert!(obs.values.iter().all(|v| (v - 2.0).abs() < 1e-2));
        assert_eq!(sensor.observe(1, &h).unwrap(), obs);
        assert!(sensor.observe(2, &h).is_err());
    }

    #[test]
    fn short_filter_run_records_everything() {
        let mut cfg = small(3.0);
        cfg.belief = ModelParams {
            w_in: 4.0,
            w_dir: PI,
            epsilon: 0.8,
        };
        let exp = Experiment::from_domain_text(cfg, OPEN).unwrap();
        let truth = run_truth(&exp).unwrap();
        let run = run_filter(&exp, &truth, &ThetaSchedule::Constant(0.2), "0.2");
        assert_eq!(run.error, None);
        assert_eq!(run.means.len(), 4);
        assert_eq!(run.diagnostics.len(), 3);
        assert_eq!(run.path.len(), 4);
        assert_eq!(run.path[0].position, Point2::new(60.0, 60.0));
        assert!(run.path[3].step.is_none());
        for rec in &run.path[..3] {
            let n = rec.step.as_ref().unwrap().observed_nodes.len();
            assert!((1..=2).contains(&n));
        }
        let again = run_filter(&exp, &truth, &ThetaSchedule::Constant(0.2), "0.2");
        assert_eq!(again.means, run.means);
        assert_eq!(again.path, run.path);
    }

    #[test]
    fn bad_start_is_rejected() {
        let mut cfg = small(3.0);
        cfg.drone_start = [130.0, 130.0];
        assert!(matches!(
            Experiment::from_domain_text(cfg, OPEN),
            Err(Error::NotInFluid { .. })
        ));
    }
}
