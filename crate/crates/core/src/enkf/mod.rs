//! Ensemble transform Kalman filter over the joint state
//! `[concentrations, wind intensity, wind direction]`.

mod analysis;
mod circular;
mod forecast;
mod init;
mod noise;
mod step;

use std::sync::Arc;

use nalgebra::DMatrix;

pub use analysis::{analysis, analysis_raw, AnalysisOutcome, RInverse, RawAnalysis};
pub use circular::{circ_an, CircularAnomalies};
pub use forecast::{ForecastConfig, ForecastReport, Forecaster};
pub use init::{init_ensemble, weibull_shape_scale, EnsembleInitConfig};
pub use noise::add_process_noise;
pub use step::{enkf_step, FilterConfig, Sensor, StepDiagnostics, StepOutcome};

use crate::error::{Error, Result};
use crate::transport::ConcentrationField;
use crate::windfield::{WindField, WindParams};

/// The nodes read by the drone during one step, in travel order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ObservationOperator {
    nodes: Vec<usize>,
}

impl ObservationOperator {
    /// Keeps the first occurrence of each node.
    pub fn new(nodes: Vec<usize>) -> Self {
        let mut seen = std::collections::HashSet::new();
        Self {
            nodes: nodes.into_iter().filter(|n| seen.insert(*n)).collect(),
        }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `H c`: the observed entries of `c`.
    pub fn apply(&self, c: &[f64]) -> Vec<f64> {
        self.nodes.iter().map(|&k| c[k]).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub node_ids: Vec<usize>,
    pub values: Vec<f64>,
    pub sigma_ob: f64,
}

impl Observation {
    pub fn new(node_ids: Vec<usize>, values: Vec<f64>, sigma_ob: f64) -> Result<Self> {
        if node_ids.len() != values.len() {
            return Err(Error::Dimension("one value per observed node".into()));
        }
        if !(sigma_ob > 0.0) {
            return Err(Error::Config(format!("sigma_ob must be positive, got {sigma_ob}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Analysis("non-finite observation".into()));
        }
        let mut sorted = node_ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != node_ids.len() {
            return Err(Error::Dimension("observed nodes must be distinct".into()));
        }
        Ok(Self {
            node_ids,
            values,
            sigma_ob,
        })
    }
}

/// Ensemble members with their wind beliefs and cached wind fields.
#[derive(Debug, Clone)]
pub struct EnsembleState {
    pub members: Vec<ConcentrationField>,
    pub w_i: Vec<f64>,
    pub w_d: Vec<f64>,
    /// Parameters each member's cached wind field was solved for.
    pub last_ins: Vec<Option<WindParams>>,
    pub winds: Vec<Option<Arc<WindField>>>,
}

impl EnsembleState {
    pub fn new(members: Vec<ConcentrationField>, w_i: Vec<f64>, w_d: Vec<f64>) -> Result<Self> {
        let n = members.len();
        if n == 0 || w_i.len() != n || w_d.len() != n {
            return Err(Error::Dimension("members and wind beliefs must have the same length".into()));
        }
        let m = members[0].len();
        if members.iter().any(|c| c.len() != m) {
            return Err(Error::Dimension("members disagree on the node count".into()));
        }
        Ok(Self {
            members,
            w_i,
            w_d,
            last_ins: vec![None; n],
            winds: vec![None; n],
        })
    }

    pub fn n(&self) -> usize {
        self.members.len()
    }

    pub fn m(&self) -> usize {
        self.members[0].len()
    }

    pub fn params(&self, i: usize) -> WindParams {
        WindParams::new(self.w_i[i], self.w_d[i])
    }

    /// `N x M`, one member per row.
    pub fn concentration_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.m(), |i, j| self.members[i].values[j])
    }

    pub fn set_concentrations(&mut self, c: &DMatrix<f64>) {
        for (i, member) in self.members.iter_mut().enumerate() {
            member.values = c.row(i).iter().copied().collect();
        }
    }

    pub fn mean_concentration(&self) -> ConcentrationField {
        let n = self.n() as f64;
        let mut mean = vec![0.0; self.m()];
        for member in &self.members {
            for (acc, v) in mean.iter_mut().zip(&member.values) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n);
        ConcentrationField::new(mean)
    }

    /// Mean and sample standard deviation of the intensities.
    pub fn intensity_stats(&self) -> (f64, f64) {
        let n = self.n() as f64;
        let mean = self.w_i.iter().sum::<f64>() / n;
        let var = if self.n() > 1 {
            self.w_i.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        (mean, var.sqrt())
    }
}
