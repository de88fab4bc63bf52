//! One complete assimilation step.

use serde::{Deserialize, Serialize};

use super::{add_process_noise, analysis, circ_an, EnsembleState, Forecaster, Observation, ObservationOperator, RInverse};
use crate::error::Result;
use crate::geometry::DronePose;
use crate::rng::{substream, PROCESS_NOISE};
use crate::routing::{policy_step, PolicyConfig, PolicyDecision};

/// Source of readings for the nodes the drone flew over.
pub trait Sensor {
    fn observe(&mut self, step: usize, h: &ObservationOperator) -> Result<Observation>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub sigma_ob: f64,
    /// Process-noise std as a fraction of each concentration.
    pub noise_fraction: f64,
    pub epsilon_spurious: f64,
    pub r_inverse: RInverse,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            sigma_ob: 1e-3,
            noise_fraction: 0.1,
            epsilon_spurious: 1e-6,
            r_inverse: RInverse::default(),
            seed: 0,
        }
    }
}

/// One JSON line of the diagnostics stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub w_i_mean: f64,
    pub w_i_std: f64,
    pub w_d_circ_mean: f64,
    pub ins_resolves: usize,
    pub krylov_iterations: usize,
    pub direct_fallbacks: usize,
    pub degraded_members: Vec<usize>,
    pub observed_nodes: Vec<usize>,
    pub innovation_norm: Option<f64>,
    pub clipped: usize,
    pub heading: Option<f64>,
    pub sector: usize,
    pub fallbacks: usize,
    pub analysis_error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: EnsembleState,
    pub pose: DronePose,
    pub decision: PolicyDecision,
    pub observation: Observation,
    pub diagnostics: StepDiagnostics,
}

/// policy -> process noise -> forecast (with wind re-solves) -> observe ->
/// analysis. A failed analysis keeps the forecast and is reported in the
/// diagnostics.
pub fn enkf_step(
    state: &EnsembleState,
    pose: &DronePose,
    step: usize,
    forecaster: &Forecaster<'_>,
    policy: &PolicyConfig,
    sensor: &mut dyn Sensor,
    cfg: &FilterConfig,
) -> Result<StepOutcome> {
    let decision = policy_step(&state.members, pose, forecaster.grid(), policy, step)?;

    let mut next = state.clone();
    for (i, member) in next.members.iter_mut().enumerate() {
        let mut rng = substream(cfg.seed, PROCESS_NOISE, step as u64, i as u64);
        add_process_noise(&mut member.values, cfg.noise_fraction, cfg.epsilon_spurious, &mut rng);
    }
    let forecast = forecaster.forecast(&mut next)?;

    let observation = sensor.observe(step, &decision.operator)?;
    let (innovation_norm, clipped, analysis_error) = match analysis(
        &next.concentration_matrix(),
        &next.w_i,
        &next.w_d,
        &decision.operator,
        &observation,
        cfg.r_inverse,
    ) {
        Ok(out) => {
            next.set_concentrations(&out.concentrations);
            next.w_i = out.w_i;
            next.w_d = out.w_d;
            (Some(out.innovation_norm), out.clipped, None)
        }
        Err(e) => {
            log::warn!("analysis at step {step} failed, keeping the forecast: {e}");
            (None, 0, Some(e.to_string()))
        }
    };

    let (w_i_mean, w_i_std) = next.intensity_stats();
    let diagnostics = StepDiagnostics {
        step,
        w_i_mean,
        w_i_std,
        w_d_circ_mean: circ_an(&next.w_d).mean,
        ins_resolves: forecast.resolves,
        krylov_iterations: forecast.krylov_iterations,
        direct_fallbacks: forecast.direct_fallbacks,
        degraded_members: forecast.degraded,
        observed_nodes: decision.operator.nodes().to_vec(),
        innovation_norm,
        clipped,
        heading: decision.choice.heading,
        sector: decision.choice.sector,
        fallbacks: decision.choice.fallbacks,
        analysis_error,
    };
    Ok(StepOutcome {
        state: next,
        pose: decision.pose,
        decision,
        observation,
        diagnostics,
    })
}
