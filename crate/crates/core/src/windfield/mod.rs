//! Steady incompressible wind over the masked grid.
//!
//! Velocities live on a staggered (MAC) layout: `u` on vertical faces,
//! `v` on horizontal faces, pressure at cell centers. The outer rectangle is
//! split per edge into prescribed-velocity inflow edges and zero-traction
//! outflow edges; building faces are no-slip.

mod anderson;
mod layout;
mod residual;
mod solver;

pub use layout::{EdgeKind, FaceLayout};
pub use residual::{evaluate_residual, ResidualReport};
pub use solver::{solve_steady_ins, SolveReport, WindSolver};

use std::f64::consts::{PI, TAU};
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::geometry::Grid;

static NEXT_FIELD_ID: AtomicU64 = AtomicU64::new(1);

/// Boundary wind intensity (m/s) and direction (rad, reduced to `[0, 2pi)`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindParams {
    intensity: f64,
    direction: f64,
}

impl WindParams {
    pub fn new(intensity: f64, direction: f64) -> Self {
        Self {
            intensity: intensity.max(0.0),
            direction: direction.rem_euclid(TAU),
        }
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn direction(&self) -> f64 {
        self.direction
    }

    /// Prescribed boundary velocity. Components below `1e-12 w_in` are
    /// snapped to zero so axis-aligned winds are exactly axis-aligned.
    pub fn boundary_velocity(&self) -> (f64, f64) {
        let snap = |c: f64| {
            if c.abs() <= 1e-12 * self.intensity {
                0.0
            } else {
                c
            }
        };
        (
            snap(self.intensity * self.direction.cos()),
            snap(self.intensity * self.direction.sin()),
        )
    }
}

/// How the outer rectangle is split into velocity and traction edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Prescribed velocity where the wind points into the domain, zero
    /// traction elsewhere.
    #[default]
    InflowOutflow,
    /// Prescribed velocity on the whole outer rectangle.
    AllDirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindConfig {
    /// Kinematic (eddy) viscosity, m^2/s.
    pub nu: f64,
    /// Per-cell divergence bound relative to `w_in`.
    pub div_tol: f64,
    /// Momentum residual bound relative to the larger of the inertial and
    /// viscous force scales, `w_in^2 / h` and `nu w_in / h^2`.
    pub momentum_tol: f64,
    pub max_iterations: usize,
    /// Relaxation of the momentum predictor, in (0, 1].
    pub relaxation: f64,
    /// Pseudo-time step as a multiple of `h / w_in`.
    pub pseudo_cfl: f64,
    /// History length of the Anderson mixing on the outer iteration; 0
    /// turns it off.
    pub anderson_depth: usize,
    pub boundary: BoundaryMode,
}

impl Default for WindConfig {
    fn default() -> Self {
        Self {
            nu: 1.0,
            div_tol: 1e-6,
            momentum_tol: 1e-4,
            max_iterations: 5000,
            relaxation: 1.0,
            pseudo_cfl: 4.0,
            anderson_depth: 5,
            boundary: BoundaryMode::InflowOutflow,
        }
    }
}

/// A converged (or accepted) wind solution on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WindField {
    id: u64,
    nx: usize,
    ny: usize,
    h: f64,
    /// `(nx + 1) * ny` vertical-face velocities, index `j * (nx + 1) + i`.
    pub u: Vec<f64>,
    /// `nx * (ny + 1)` horizontal-face velocities, index `j * nx + i`.
    pub v: Vec<f64>,
    /// Cell pressures (kinematic, m^2/s^2); zero in solid cells.
    pub p: Vec<f64>,
    pub params: WindParams,
}

impl WindField {
    pub(crate) fn from_parts(
        grid: &Grid,
        u: Vec<f64>,
        v: Vec<f64>,
        p: Vec<f64>,
        params: WindParams,
    ) -> Self {
        Self {
            id: NEXT_FIELD_ID.fetch_add(1, Ordering::Relaxed),
            nx: grid.nx(),
            ny: grid.ny(),
            h: grid.h(),
            u,
            v,
            p,
            params,
        }
    }

    /// Zero velocity and pressure.
    pub fn zero(grid: &Grid, params: WindParams) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        Self::from_parts(
            grid,
            vec![0.0; (nx + 1) * ny],
            vec![0.0; nx * (ny + 1)],
            vec![0.0; nx * ny],
            params,
        )
    }

    /// Process-unique identity, used to key cached transport operators.
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn matches(&self, grid: &Grid) -> bool {
        self.nx == grid.nx() && self.ny == grid.ny() && self.h == grid.h()
    }

    pub fn u_face(&self, i: usize, j: usize) -> f64 {
        self.u[j * (self.nx + 1) + i]
    }

    pub fn v_face(&self, i: usize, j: usize) -> f64 {
        self.v[j * self.nx + i]
    }

    pub fn pressure(&self, i: usize, j: usize) -> f64 {
        self.p[j * self.nx + i]
    }

    /// Cell-centered velocity from the averaged face values.
    pub fn cell_velocity(&self, i: usize, j: usize) -> (f64, f64) {
        (
            0.5 * (self.u_face(i, j) + self.u_face(i + 1, j)),
            0.5 * (self.v_face(i, j) + self.v_face(i, j + 1)),
        )
    }

    pub fn max_speed(&self) -> f64 {
        self.u
            .iter()
            .chain(&self.v)
            .fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Writes `cell_x_index,cell_y_index,u,v,p` for every fluid cell.
    pub fn write_csv<W: Write>(&self, grid: &Grid, mut out: W) -> std::io::Result<()> {
        writeln!(out, "cell_x_index,cell_y_index,u,v,p")?;
        for &(i, j) in grid.cells() {
            let (cu, cv) = self.cell_velocity(i, j);
            writeln!(out, "{i},{j},{cu},{cv},{}", self.pressure(i, j))?;
        }
        Ok(())
    }
}

/// Wraps an angle difference to `[-pi, pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

/// Re-solve gate: true iff the intensity moved by at least `tr_i |I|` or the
/// (wrapped) direction by at least `tr_d |d|` since the last solve.
pub fn needs_recompute(current: WindParams, last_solved: WindParams, tr_i: f64, tr_d: f64) -> bool {
    let d_int = (current.intensity - last_solved.intensity).abs();
    let d_dir = wrap_angle(current.direction - last_solved.direction).abs();
    (d_int > 0.0 && d_int >= tr_i * current.intensity.abs())
        || (d_dir > 0.0 && d_dir >= tr_d * current.direction.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_are_reduced() {
        let p = WindParams::new(-1.0, -PI / 2.0);
        assert_eq!(p.intensity(), 0.0);
        assert!((p.direction() - 1.5 * PI).abs() < 1e-15);
        let (u, v) = WindParams::new(5.0, PI).boundary_velocity();
        assert_eq!((u, v), (-5.0, 0.0));
    }

    #[test]
    fn recompute_gate() {
        let a = WindParams::new(2.5, 3.0);
        assert!(!needs_recompute(a, a, 0.1, 0.05));
        // 2.5 -> 2.8: |0.3| >= 0.1 * 2.8
        assert!(needs_recompute(WindParams::new(2.8, 3.0), a, 0.1, 0.05));
        // 4% intensity, 3% direction
        let cur = WindParams::new(2.6, 3.0);
        let last = WindParams::new(2.6 - 0.04 * 2.6, 3.0 - 0.03 * 3.0);
        assert!(!needs_recompute(cur, last, 0.1, 0.05));
        // direction change measured across the wrap
        let cur = WindParams::new(1.0, 6.2);
        let last = WindParams::new(1.0, 0.1);
        assert!(needs_recompute(cur, last, 0.1, 0.01));
        assert!(!needs_recompute(cur, last, 0.1, 0.05));
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert!((wrap_angle(TAU - 0.1) + 0.1).abs() < 1e-12);
        assert!((wrap_angle(-TAU + 0.1) - 0.1).abs() < 1e-12);
    }
}

