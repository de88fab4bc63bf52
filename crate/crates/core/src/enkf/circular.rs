//! Circular mean and anomalies of wind directions.

use std::f64::consts::{PI, TAU};

/// Resultant lengths below this are treated as directionless.
const DEGENERATE_RESULTANT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CircularAnomalies {
    /// `wd_i - mu` wrapped to `[-pi, pi)`.
    pub anomalies: Vec<f64>,
    /// Circular mean in `[0, 2pi)`.
    pub mean: f64,
    /// Mean resultant length in `[0, 1]`.
    pub resultant: f64,
    /// Set when the resultant vanishes and `mean` is arbitrary (reported as 0).
    pub degenerate: bool,
}

fn wrap_pi(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    // rem_euclid can round up to TAU for tiny negative inputs
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// `mu = atan2(mean sin, mean cos) mod 2pi` and anomalies `((wd - mu + pi) mod 2pi) - pi`.
///
/// The sums are taken relative to the first direction, which leaves the
/// mean unchanged mathematically but makes an all-equal input return that
/// value and zero anomalies exactly.
pub fn circ_an(wd: &[f64]) -> CircularAnomalies {
    let Some(&reference) = wd.first() else {
        return CircularAnomalies {
            anomalies: Vec::new(),
            mean: 0.0,
            resultant: 0.0,
            degenerate: true,
        };
    };
    let n = wd.len() as f64;
    let (s, c) = wd.iter().fold((0.0, 0.0), |(s, c), &a| {
        let d = a - reference;
        (s + d.sin(), c + d.cos())
    });
    let (s, c) = (s / n, c / n);
    let resultant = s.hypot(c);
    let degenerate = resultant < DEGENERATE_RESULTANT;
    let mean = if degenerate {
        0.0
    } else {
        let m = (reference + s.atan2(c)).rem_euclid(TAU);
        if m >= TAU {
            0.0
        } else {
            m
        }
    };
    CircularAnomalies {
        anomalies: wd.iter().map(|&a| wrap_pi(a - mean)).collect(),
        mean,
        resultant,
        degenerate,
    }
}
