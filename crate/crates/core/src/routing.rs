//! Sector-based exploration/exploitation routing of the drone.
//!
//! The domain is split into `Q` angular sectors around the drone; each sector
//! is scored by its ensemble spread plus `theta` times its mean mass, both per
//! node, and the drone flies toward the mid-angle of the best sector, turning
//! clockwise one sector at a time when the way is blocked.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::enkf::ObservationOperator;
use crate::error::{Error, Result};
use crate::geometry::{is_heading_free, traverse, DronePose, Grid};
use crate::transport::ConcentrationField;

/// Exploration weight: one value for the whole run or one per step (the
/// last entry is held past the end of the table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaSchedule {
    Constant(f64),
    Table(Vec<f64>),
}

impl ThetaSchedule {
    pub fn at(&self, step: usize) -> f64 {
        match self {
            ThetaSchedule::Constant(t) => *t,
            ThetaSchedule::Table(ts) => ts.get(step).or(ts.last()).copied().unwrap_or(0.0),
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            ThetaSchedule::Constant(t) => vec![*t],
            ThetaSchedule::Table(ts) => ts.clone(),
        }
    }
}

impl Default for ThetaSchedule {
    fn default() -> Self {
        ThetaSchedule::Constant(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub q: usize,
    pub theta: ThetaSchedule,
    /// m/s
    pub speed: f64,
    pub dt: f64,
    /// Cells crossed in one step beyond this count are not read; the ones
    /// with the longest path inside them are kept.
    pub max_observed_nodes: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            q: 8,
            theta: ThetaSchedule::default(),
            speed: 10.0,
            dt: 1.0,
            max_observed_nodes: 2,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q < 2 {
            return Err(Error::Config(format!("need at least 2 sectors, got {}", self.q)));
        }
        if self.theta.values().iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::Config("theta must be non-negative".into()));
        }
        if !(self.speed >= 0.0 && self.dt > 0.0) {
            return Err(Error::Config("speed must be non-negative and dt positive".into()));
        }
        if self.max_observed_nodes == 0 {
            return Err(Error::Config("max_observed_nodes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn step_distance(&self) -> f64 {
        self.speed * self.dt
    }
}

/// Sector of every node as seen from the drone.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorPartition {
    /// 1-based sector per node; `None` for the node under the drone.
    pub assignment: Vec<Option<usize>>,
    /// `counts[q - 1]` nodes in sector `q`.
    pub counts: Vec<usize>,
}

impl SectorPartition {
    pub fn q(&self) -> usize {
        self.counts.len()
    }

    pub fn nodes_in(&self, sector: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter(move |(_, s)| **s == Some(sector))
            .map(|(k, _)| k)
    }
}

/// Sector `q = floor(beta / (2pi/Q)) + 1` for the bearing `beta in [0, 2pi)`
/// of each node center from the drone.
pub fn partition(grid: &Grid, pose: &DronePose, q: usize) -> SectorPartition {
    let own = grid.node_at(pose.position);
    let width = TAU / q as f64;
    let mut counts = vec![0; q];
    let assignment = (0..grid.num_nodes())
        .map(|k| {
            if Some(k) == own {
                return None;
            }
            let c = grid.node_center(k);
            let beta = (c.y - pose.position.y).atan2(c.x - pose.position.x).rem_euclid(TAU);
            let s = ((beta / width).floor() as usize).min(q - 1) + 1;
            counts[s - 1] += 1;
            Some(s)
        })
        .collect();
    SectorPartition { assignment, counts }
}

/// `(1/M^q) (sqrt(tr(A^q A^q^T) / (N-1)) + theta sum mu(C^q))` per sector;
/// empty sectors get `-inf`.
pub fn enie_scores(members: &[ConcentrationField], partition: &SectorPartition, theta: f64) -> Vec<f64> {
    let n = members.len();
    let mut spread = vec![0.0; partition.q()];
    let mut mass = vec![0.0; partition.q()];
    for (k, sector) in partition.assignment.iter().enumerate() {
        let Some(s) = sector else { continue };
        let mean = members.iter().map(|c| c.values[k]).sum::<f64>() / n as f64;
        spread[s - 1] += members.iter().map(|c| (c.values[k] - mean).powi(2)).sum::<f64>();
        mass[s - 1] += mean;
    }
    let dof = (n.max(2) - 1) as f64;
    (0..partition.q())
        .map(|i| {
            let m = partition.counts[i];
            if m == 0 {
                f64::NEG_INFINITY
            } else {
                ((spread[i] / dof).sqrt() + theta * mass[i]) / m as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadingChoice {
    /// Best-scoring sector (1-based), before any fallback.
    pub sector: usize,
    /// Free heading, or `None` when every candidate is blocked.
    pub heading: Option<f64>,
    /// Clockwise sector turns taken; at most `Q` (the hold case).
    pub fallbacks: usize,
}

/// Mid-angle of the argmax sector (ties to the smallest index), turned
/// clockwise by `2pi/Q` until the step is free.
pub fn select_heading(scores: &[f64], pose: &DronePose, grid: &Grid, q: usize, step_distance: f64) -> HeadingChoice {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    let sector = best + 1;
    let width = TAU / q as f64;
    let preferred = sector as f64 * width - width / 2.0;
    for k in 0..q {
        let heading = (preferred - k as f64 * width).rem_euclid(TAU);
        if is_heading_free(grid, pose, heading, step_distance) {
            return HeadingChoice {
                sector,
                heading: Some(heading),
                fallbacks: k,
            };
        }
    }
    log::warn!(
        "drone at ({:.1}, {:.1}) is boxed in; holding position",
        pose.position.x,
        pose.position.y
    );
    HeadingChoice {
        sector,
        heading: None,
        fallbacks: q,
    }
}

/// Moves the drone and reads the cells it flew over. When more than
/// `max_nodes` cells are crossed, the ones with the longest path inside are
/// kept (in travel order). A hold or a zero-length step reads the current cell.
pub fn advance(
    pose: &DronePose,
    heading: Option<f64>,
    speed: f64,
    dt: f64,
    grid: &Grid,
    max_nodes: usize,
) -> (DronePose, ObservationOperator) {
    let here = || ObservationOperator::new(grid.node_at(pose.position).into_iter().collect());
    let Some(heading) = heading else {
        return (*pose, here());
    };
    let distance = speed * dt;
    if distance == 0.0 {
        return (pose.with_heading(heading), here());
    }
    let to = pose.position.offset(heading, distance);
    let path = traverse(grid, pose.position, to);
    debug_assert!(path.is_clear(), "advance called with a blocked heading");
    let mut visits: Vec<(usize, f64, usize)> = path
        .visits
        .iter()
        .enumerate()
        .filter(|(_, v)| v.length > 0.0)
        .map(|(order, v)| (v.node, v.length, order))
        .collect();
    if visits.len() > max_nodes {
        visits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
        visits.truncate(max_nodes);
        visits.sort_by_key(|v| v.2);
    }
    let mut moved = *pose;
    moved.position = to;
    let moved = moved.with_heading(heading);
    let operator = ObservationOperator::new(visits.into_iter().map(|v| v.0).collect());
    if operator.is_empty() {
        return (moved, ObservationOperator::new(grid.node_at(to).into_iter().collect()));
    }
    (moved, operator)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub choice: HeadingChoice,
    pub scores: Vec<f64>,
    pub pose: DronePose,
    pub operator: ObservationOperator,
}

/// partition -> scores -> heading -> move, for the forecast members at `step`.
pub fn policy_step(
    members: &[ConcentrationField],
    pose: &DronePose,
    grid: &Grid,
    cfg: &PolicyConfig,
    step: usize,
) -> Result<PolicyDecision> {
    cfg.validate()?;
    if members.is_empty() || members.iter().any(|c| c.len() != grid.num_nodes()) {
        return Err(Error::Dimension("members do not match the grid".into()));
    }
    let part = partition(grid, pose, cfg.q);
    let scores = enie_scores(members, &part, cfg.theta.at(step));
    let choice = select_heading(&scores, pose, grid, cfg.q, cfg.step_distance());
    let (pose, operator) = advance(pose, choice.heading, cfg.speed, cfg.dt, grid, cfg.max_observed_nodes);
    Ok(PolicyDecision {
        choice,
        scores,
        pose,
        operator,
    })
}
