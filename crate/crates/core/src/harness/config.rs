//! TOML experiment configuration.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::enkf::{EnsembleInitConfig, FilterConfig, ForecastConfig, RInverse};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::geometry::{Point2, Units};
use crate::routing::{PolicyConfig, ThetaSchedule};
use crate::sparse::KrylovConfig;
use crate::windfield::{WindConfig, WindParams};

/// Wind and diffusion of one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub w_in: f64,
    pub w_dir: f64,
    pub epsilon: f64,
}

impl ModelParams {
    pub fn wind(&self) -> WindParams {
        WindParams::new(self.w_in, self.w_dir)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpread {
    pub n: usize,
    pub sigma_in: f64,
    pub sigma_dir: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Release {
    pub center: [f64; 2],
    pub sigma0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// GeoJSON building footprints; relative paths resolve against the
    /// config file's directory.
    pub domain: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    pub units: Units,
    pub h: f64,
    pub t_final: f64,
    pub dt: f64,
    pub seed: u64,
    pub output: PathBuf,
    pub truth: ModelParams,
    pub belief: ModelParams,
    pub ensemble: EnsembleSpread,
    pub sigma_ob: f64,
    pub tr_i: f64,
    pub tr_d: f64,
    pub q: usize,
    pub speed: f64,
    pub max_observed_nodes: usize,
    pub thetas: Vec<ThetaSchedule>,
    pub release: Release,
    pub drone_start: [f64; 2],
    pub snapshot_times: Vec<f64>,
    /// Section cut for concentration profiles; defaults to a diagonal
    /// through the release point.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<[f64; 2]>>,
    pub noise_fraction: f64,
    pub epsilon_spurious: f64,
    pub r_inverse: RInverse,
    pub execution: Execution,
    pub wind: WindConfig,
    pub krylov: KrylovConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            domain: PathBuf::from("plant.geojson"),
            bbox: None,
            units: Units::Degrees,
            h: 10.0,
            t_final: 100.0,
            dt: 1.0,
            seed: 42,
            output: PathBuf::from("out"),
            truth: ModelParams {
                w_in: 5.0,
                w_dir: PI,
                epsilon: 0.8,
            },
            belief: ModelParams {
                w_in: 2.5,
                w_dir: 1.5 * PI,
                epsilon: 0.4,
            },
            ensemble: EnsembleSpread {
                n: 10,
                sigma_in: 3.0,
                sigma_dir: PI / 2.0,
            },
            sigma_ob: 1e-3,
            tr_i: 0.1,
            tr_d: 0.05,
            q: 8,
            speed: 10.0,
            max_observed_nodes: 2,
            thetas: vec![
                ThetaSchedule::Constant(0.0),
                ThetaSchedule::Constant(0.2),
                ThetaSchedule::Constant(0.3),
            ],
            release: Release {
                center: [540.0, 330.0],
                sigma0: 20.0,
            },
            drone_start: [360.0, 360.0],
            snapshot_times: vec![0.0, 100.0],
            gamma: None,
            noise_fraction: 0.1,
            epsilon_spurious: 1e-6,
            r_inverse: RInverse::InverseVariance,
            execution: Execution::Parallel,
            wind: WindConfig::default(),
            krylov: KrylovConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and resolves `domain` relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.domain.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.domain = dir.join(&cfg.domain);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Number of assimilation steps, `T / dt`.
    pub fn steps(&self) -> Result<usize> {
        let steps = (self.t_final / self.dt).round();
        if !(self.dt > 0.0 && self.t_final >= 0.0) || (steps * self.dt - self.t_final).abs() > 1e-9 * self.t_final.max(1.0) {
            return Err(Error::Config(format!(
                "t_final = {} is not a multiple of dt = {}",
                self.t_final, self.dt
            )));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.steps()?;
        if !(self.h > 0.0) {
            return Err(Error::Config("h must be positive".into()));
        }
        if !(self.sigma_ob > 0.0) {
            return Err(Error::Config("sigma_ob must be positive".into()));
        }
        if !(self.release.sigma0 > 0.0) {
            return Err(Error::Config("release sigma0 must be positive".into()));
        }
        for p in [self.truth, self.belief] {
            if !(p.w_in >= 0.0 && p.epsilon >= 0.0 && p.w_dir.is_finite()) {
                return Err(Error::Config(format!("invalid model parameters {p:?}")));
            }
        }
        self.ensemble_init().validate()?;
        self.policy(&ThetaSchedule::Constant(0.0)).validate()?;
        for t in &self.thetas {
            self.policy(t).validate()?;
        }
        Ok(())
    }

    pub fn release_center(&self) -> Point2 {
        Point2::from(self.release.center)
    }

    pub fn drone_start(&self) -> Point2 {
        Point2::from(self.drone_start)
    }

    pub fn ensemble_init(&self) -> EnsembleInitConfig {
        EnsembleInitConfig {
            w_in_init: self.belief.w_in,
            sigma_in: self.ensemble.sigma_in,
            w_dir_init: self.belief.w_dir,
            sigma_dir: self.ensemble.sigma_dir,
            n: self.ensemble.n,
            seed: self.seed,
        }
    }

    pub fn forecast(&self, epsilon: f64) -> ForecastConfig {
        ForecastConfig {
            epsilon,
            dt: self.dt,
            tr_i: self.tr_i,
            tr_d: self.tr_d,
            krylov: self.krylov,
            execution: self.execution,
        }
    }

    pub fn filter(&self) -> FilterConfig {
        FilterConfig {
            sigma_ob: self.sigma_ob,
            noise_fraction: self.noise_fraction,
            epsilon_spurious: self.epsilon_spurious,
            r_inverse: self.r_inverse,
            seed: self.seed,
        }
    }

    pub fn policy(&self, theta: &ThetaSchedule) -> PolicyConfig {
        PolicyConfig {
            q: self.q,
            theta: theta.clone(),
            speed: self.speed,
            dt: self.dt,
            max_observed_nodes: self.max_observed_nodes,
        }
    }

    /// SHA-256 over the settings and the domain file contents. The output
    /// directory and the domain's location do not enter the hash.
    pub fn hash(&self, domain_text: &str) -> String {
        let mut canonical = self.clone();
        canonical.output = PathBuf::new();
        canonical.domain = PathBuf::new();
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&canonical).expect("config serializes"));
        hasher.update(domain_text.as_bytes());
        hex::encode(hasher.finalize())
    }
}

/// Label used in file and column names: the value for constant schedules,
/// `table<index>` otherwise.
pub fn theta_label(theta: &ThetaSchedule, index: usize) -> String {
    match theta {
        ThetaSchedule::Constant(t) => format!("{t}"),
        ThetaSchedule::Table(_) => format!("table{index}"),
    }
}
