//! Initial ensemble: Weibull intensities and wrapped-normal directions.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal, Weibull};
use serde::{Deserialize, Serialize};

use super::EnsembleState;
use crate::error::{Error, Result};
use crate::rng::{substream, ENSEMBLE_INIT};
use crate::transport::ConcentrationField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleInitConfig {
    pub w_in_init: f64,
    pub sigma_in: f64,
    pub w_dir_init: f64,
    pub sigma_dir: f64,
    pub n: usize,
    pub seed: u64,
}

impl EnsembleInitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("ensemble needs at least 2 members, got {}", self.n)));
        }
        if !(self.sigma_in >= 0.0 && self.sigma_dir >= 0.0) {
            return Err(Error::Config("ensemble spreads must be non-negative".into()));
        }
        if !(self.w_in_init >= 0.0) || !self.w_dir_init.is_finite() {
            return Err(Error::Config("initial wind belief must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn squared_cv(k: f64) -> f64 {
    (libm::lgamma(1.0 + 2.0 / k) - 2.0 * libm::lgamma(1.0 + 1.0 / k)).exp() - 1.0
}

/// Weibull `(shape k, scale lambda)` with the given mean and standard
/// deviation, by bisection on `log k` (the coefficient of variation is
/// monotone in `k`).
pub fn weibull_shape_scale(mean: f64, std: f64) -> Result<(f64, f64)> {
    let err = || Error::WeibullInversion { mean, std };
    if !(mean > 0.0 && std > 0.0) {
        return Err(err());
    }
    let target = (std / mean).powi(2);
    let (mut lo, mut hi) = (0.02_f64.ln(), 500.0_f64.ln());
    if !(squared_cv(lo.exp()) >= target && squared_cv(hi.exp()) <= target) {
        return Err(err());
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if squared_cv(mid.exp()) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    let k = (0.5 * (lo + hi)).exp();
    let lambda = mean / libm::tgamma(1.0 + 1.0 / k);
    Ok((k, lambda))
}

fn sample_intensity<R: Rng>(cfg: &EnsembleInitConfig, shape_scale: Option<(f64, f64)>, rng: &mut R) -> f64 {
    match shape_scale {
        Some((k, lambda)) => Weibull::new(lambda, k).expect("validated parameters").sample(rng),
        None => cfg.w_in_init,
    }
}

fn sample_direction<R: Rng>(cfg: &EnsembleInitConfig, rng: &mut R) -> f64 {
    let raw = if cfg.sigma_dir > 0.0 {
        Normal::new(cfg.w_dir_init, cfg.sigma_dir).expect("validated parameters").sample(rng)
    } else {
        cfg.w_dir_init
    };
    let d = raw.rem_euclid(TAU);
    if d >= TAU {
        0.0
    } else {
        d
    }
}

/// Every member starts from `c0`; wind parameters are drawn per member from
/// independent substreams, so member `i` is the same for any `n > i`.
pub fn init_ensemble(cfg: &EnsembleInitConfig, c0: &ConcentrationField) -> Result<EnsembleState> {
    cfg.validate()?;
    let shape_scale = if cfg.sigma_in > 0.0 {
        if cfg.w_in_init == 0.0 {
            return Err(Error::WeibullInversion {
                mean: cfg.w_in_init,
                std: cfg.sigma_in,
            });
        }
        Some(weibull_shape_scale(cfg.w_in_init, cfg.sigma_in)?)
    } else {
        None
    };
    let mut w_i = Vec::with_capacity(cfg.n);
    let mut w_d = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        w_i.push(sample_intensity(cfg, shape_scale, &mut substream(cfg.seed, ENSEMBLE_INIT, 0, i as u64)));
        w_d.push(sample_direction(cfg, &mut substream(cfg.seed, ENSEMBLE_INIT, 1, i as u64)));
    }
    EnsembleState::new(vec![c0.clone(); cfg.n], w_i, w_d)
}
