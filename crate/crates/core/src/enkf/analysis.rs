//! ETKF analysis on the joint block `[concentrations, intensity, direction]`.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector, RowDVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::circular::circ_an;
use super::{Observation, ObservationOperator};
use crate::error::{Error, Result};

/// Diagonal of `R^-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RInverse {
    /// `1 / sigma_ob^2`
    #[default]
    InverseVariance,
    /// `1 / sigma_ob`
    InverseStd,
}

impl RInverse {
    pub fn weight(self, sigma_ob: f64) -> f64 {
        match self {
            RInverse::InverseVariance => 1.0 / (sigma_ob * sigma_ob),
            RInverse::InverseStd => 1.0 / sigma_ob,
        }
    }
}

/// Posterior before the non-negativity clip and direction wrap.
#[derive(Debug, Clone)]
pub struct RawAnalysis {
    /// `N x M` posterior concentrations.
    pub concentrations: DMatrix<f64>,
    pub w_i: DVector<f64>,
    /// Unwrapped: prior circular mean plus posterior anomaly.
    pub w_d: DVector<f64>,
    /// `dy = O - mean(H C)`.
    pub innovation: DVector<f64>,
    /// Eigenvalues of `Y R^-1 Y^T + (N - 1) I`.
    pub eigenvalues: DVector<f64>,
    pub direction_degenerate: bool,
}

/// Clipped and wrapped posterior.
#[derive(Debug, Clone)]
pub struct AnalysisOutcome {
    pub concentrations: DMatrix<f64>,
    pub w_i: Vec<f64>,
    pub w_d: Vec<f64>,
    pub innovation_norm: f64,
    /// Concentration entries raised to 0 by the clip.
    pub clipped: usize,
    pub direction_degenerate: bool,
}

/// Mean taken relative to the first entry, so identical entries give their
/// own value back bit-for-bit.
fn shifted_mean<I: Iterator<Item = f64> + Clone>(xs: I) -> f64 {
    let mut it = xs.clone();
    let Some(x0) = it.next() else { return 0.0 };
    let n = xs.count() as f64;
    x0 + it.map(|x| x - x0).sum::<f64>() / n
}

/// The ETKF transform and mean shift, without constraint
/// projection. `c` is `N x M` (one member per row).
pub fn analysis_raw(
    c: &DMatrix<f64>,
    w_i: &[f64],
    w_d: &[f64],
    h: &ObservationOperator,
    obs: &Observation,
    r_inverse: RInverse,
) -> Result<RawAnalysis> {
    let (n, m) = c.shape();
    if n < 2 {
        return Err(Error::Analysis(format!("ensemble of {n} cannot be analysed")));
    }
    if w_i.len() != n || w_d.len() != n {
        return Err(Error::Dimension("wind parameter vectors do not match the ensemble".into()));
    }
    if h.is_empty() {
        return Err(Error::Analysis("no observed nodes".into()));
    }
    if h.nodes() != obs.node_ids.as_slice() {
        return Err(Error::Dimension("observation does not match the operator".into()));
    }
    if h.nodes().iter().any(|&k| k >= m) {
        return Err(Error::Dimension("observed node outside the state".into()));
    }
    if c.iter().chain(w_i).chain(w_d).chain(&obs.values).any(|v| !v.is_finite()) {
        return Err(Error::Analysis("non-finite ensemble or observation".into()));
    }
    let p = h.len();
    let nm1 = (n - 1) as f64;

    // anomaly block B = [A, A^I, A^d] and its means
    let mut means = RowDVector::zeros(m + 2);
    let mut b = DMatrix::zeros(n, m + 2);
    for j in 0..m {
        let col = c.column(j);
        let mu = shifted_mean(col.iter().copied());
        means[j] = mu;
        for i in 0..n {
            b[(i, j)] = col[i] - mu;
        }
    }
    let mu_i = shifted_mean(w_i.iter().copied());
    means[m] = mu_i;
    for i in 0..n {
        b[(i, m)] = w_i[i] - mu_i;
    }
    let circ = circ_an(w_d);
    means[m + 1] = circ.mean;
    for i in 0..n {
        b[(i, m + 1)] = circ.anomalies[i];
    }

    let y = DMatrix::from_fn(n, p, |i, k| b[(i, h.nodes()[k])]);
    let rinv = DVector::from_element(p, r_inverse.weight(obs.sigma_ob));
    let dy = DVector::from_fn(p, |k, _| obs.values[k] - means[h.nodes()[k]]);

    let y_r = DMatrix::from_fn(n, p, |i, k| y[(i, k)] * rinv[k]);
    let s = &y_r * y.transpose() + DMatrix::identity(n, n) * nm1;
    let eig = SymmetricEigen::new(s);
    let d = &eig.eigenvalues;
    let v = &eig.eigenvectors;
    if d.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
        return Err(Error::Analysis(format!("transform matrix is not positive definite: {d}")));
    }
    let t = v * DMatrix::from_diagonal(&d.map(|x| nm1.sqrt() / x.sqrt())) * v.transpose();
    let pm = v * DMatrix::from_diagonal(&d.map(|x| 1.0 / x)) * v.transpose();

    // Lambda = (dy R^-1)(Y^T P), a 1 x N row
    let dy_r = dy.component_mul(&rinv);
    let lambda = dy_r.transpose() * (y.transpose() * pm);
    let shift = &lambda * &b;
    let e = &t * &b + DMatrix::from_fn(n, m + 2, |_, j| means[j] + shift[j]);

    Ok(RawAnalysis {
        concentrations: e.columns(0, m).into_owned(),
        w_i: e.column(m).into_owned(),
        w_d: e.column(m + 1).into_owned(),
        innovation: dy,
        eigenvalues: d.clone(),
        direction_degenerate: circ.degenerate,
    })
}

/// Full analysis: raw transform, then `max(0, .)` on concentrations and
/// intensities and `mod 2pi` on directions.
pub fn analysis(
    c: &DMatrix<f64>,
    w_i: &[f64],
    w_d: &[f64],
    h: &ObservationOperator,
    obs: &Observation,
    r_inverse: RInverse,
) -> Result<AnalysisOutcome> {
    let raw = analysis_raw(c, w_i, w_d, h, obs, r_inverse)?;
    let mut concentrations = raw.concentrations;
    let mut clipped = 0;
    for x in concentrations.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
            clipped += 1;
        }
    }
    let w_d = raw
        .w_d
        .iter()
        .map(|&d| {
            let r = d.rem_euclid(TAU);
            if r >= TAU {
                0.0
            } else {
                r
            }
        })
        .collect();
    Ok(AnalysisOutcome {
        concentrations,
        w_i: raw.w_i.iter().map(|&x| x.max(0.0)).collect(),
        w_d,
        innovation_norm: raw.innovation.norm(),
        clipped,
        direction_degenerate: raw.direction_degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn obs(nodes: &[usize], values: &[f64], sigma: f64) -> (ObservationOperator, Observation) {
        let h = ObservationOperator::new(nodes.to_vec());
        let o = Observation::new(nodes.to_vec(), values.to_vec(), sigma).unwrap();
        (h, o)
    }

    #[test]
    fn identical_members_are_a_fixed_point() {
        let row = [0.3, 0.0, 1.7, 2.2];
        let c = DMatrix::from_fn(5, 4, |_, j| row[j]);
        let w_i = [2.5; 5];
        let w_d = [4.71238898; 5];
        let (h, o) = obs(&[1, 2], &[9.0, -4.0], 1e-3);
        for mode in [RInverse::InverseVariance, RInverse::InverseStd] {
            let out = analysis(&c, &w_i, &w_d, &h, &o, mode).unwrap();
            assert_eq!(out.concentrations, c);
            assert_eq!(out.w_i, w_i);
            assert_eq!(out.w_d, w_d);
        }
    }

    #[test]
    fn scalar_gain() {
        // N = 10, M = 1: mean moves by k dy with k = var / (var + sigma^2)
        let mut rng = substream(4, "scalar", 0, 0);
        let vals: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..2.0)).collect();
        let c = DMatrix::from_column_slice(10, 1, &vals);
        let mean = vals.iter().sum::<f64>() / 10.0;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 9.0;
        let sigma = 1e-3;
        let (h, o) = obs(&[0], &[1.234], sigma);
        let raw = analysis_raw(&c, &[1.0; 10], &[0.5; 10], &h, &o, RInverse::InverseVariance).unwrap();
        let k = var / (var + sigma * sigma);
        let post = raw.concentrations.mean();
        assert!((post - (mean + k * (1.234 - mean))).abs() < 1e-8);
    }

    #[test]
    fn uninformative_observation_keeps_prior() {
        let mut rng = substream(5, "flat", 0, 0);
        let c = DMatrix::from_fn(4, 3, |_, _| rng.random_range(0.0..1.0));
        let (h, o) = obs(&[2], &[100.0], 1e12);
        let out = analysis(&c, &[1.0, 2.0, 3.0, 4.0], &[0.1, 0.2, 0.3, 0.4], &h, &o, RInverse::InverseVariance)
            .unwrap();
        assert!((out.concentrations - c).abs().max() < 1e-12);
    }

    #[test]
    fn anomalies_keep_zero_mean() {
        let mut rng = substream(6, "zm", 0, 0);
        let c = DMatrix::from_fn(6, 5, |_, _| rng.random_range(0.0..1.0));
        let w_i: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..5.0)).collect();
        let w_d: Vec<f64> = (0..6).map(|_| rng.random_range(4.0..5.0)).collect();
        let (h, o) = obs(&[0, 3], &[0.4, 0.9], 0.05);
        let raw = analysis_raw(&c, &w_i, &w_d, &h, &o, RInverse::InverseVariance).unwrap();
        let post_mean = raw.concentrations.row_mean();
        let centred = DMatrix::from_fn(6, 5, |i, j| raw.concentrations[(i, j)] - post_mean[j]);
        assert!(centred.row_sum().abs().max() < 1e-10);
    }

    #[test]
    fn clip_is_identity_on_nonnegative_results() {
        let c = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.2, 2.1, 0.9, 1.9]);
        let (h, o) = obs(&[0], &[1.05], 0.1);
        let raw = analysis_raw(&c, &[1.0, 1.1, 0.9], &[1.0, 1.1, 0.9], &h, &o, RInverse::InverseVariance).unwrap();
        assert!(raw.concentrations.iter().all(|&x| x >= 0.0));
        let out = analysis(&c, &[1.0, 1.1, 0.9], &[1.0, 1.1, 0.9], &h, &o, RInverse::InverseVariance).unwrap();
        assert_eq!(out.clipped, 0);
        assert_eq!(out.concentrations, raw.concentrations);
    }

    #[test]
    fn negative_posterior_is_clipped() {
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.2, 0.0]);
        let (h, o) = obs(&[0], &[5.0], 1e-3);
        let out = analysis(&c, &[1.0, 1.0], &[0.0, 0.0], &h, &o, RInverse::InverseVariance).unwrap();
        assert!(out.clipped > 0);
        assert!(out.concentrations.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn rejects_mismatched_input() {
        let c = DMatrix::zeros(3, 2);
        let (h, o) = obs(&[1], &[0.0], 1.0);
        assert!(analysis(&c, &[1.0; 2], &[0.0; 3], &h, &o, RInverse::default()).is_err());
        let (h2, _) = obs(&[0], &[0.0], 1.0);
        assert!(analysis(&c, &[1.0; 3], &[0.0; 3], &h2, &o, RInverse::default()).is_err());
        let (h3, o3) = obs(&[5], &[0.0], 1.0);
        assert!(analysis(&c, &[1.0; 3], &[0.0; 3], &h3, &o3, RInverse::default()).is_err());
        let mut bad = c.clone();
        bad[(0, 0)] = f64::NAN;
        assert!(analysis(&bad, &[1.0; 3], &[0.0; 3], &h, &o, RInverse::default()).is_err());
    }
}
