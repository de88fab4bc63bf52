//! Direct stencil evaluation of the steady momentum and continuity residuals.
//! Kept separate from the matrix assembly in the solver so the two can be
//! checked against each other.

use super::layout::{edge_kinds, EdgeKind, EAST, NORTH, SOUTH, WEST};
use super::{WindConfig, WindField};
use crate::geometry::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ResidualReport {
    /// Max-norm of the steady momentum residual over solved faces (m/s^2).
    pub momentum_inf: f64,
    /// Root-mean-square momentum residual.
    pub momentum_rms: f64,
    /// Max over fluid cells of `|u_e - u_w + v_n - v_s|` (m/s).
    pub divergence_inf: f64,
    /// Max normal velocity on faces touching a solid cell.
    pub wall_normal_inf: f64,
    /// Max deviation from the prescribed value on inflow boundary faces.
    pub inflow_error_inf: f64,
}

struct Sampler<'a> {
    grid: &'a Grid,
    f: &'a WindField,
    edges: [EdgeKind; 4],
    wx: f64,
    wy: f64,
}

impl Sampler<'_> {
    fn fluid(&self, i: isize, j: isize) -> bool {
        self.grid.is_fluid_at(i, j)
    }

    /// `u` at face `(i, j)` seen from the face `(i, j0)` with value `center`
    /// along the tangential (y) direction.
    fn u_tangential(&self, i: usize, j: isize, center: f64) -> f64 {
        let ny = self.grid.ny() as isize;
        if j < 0 || j >= ny {
            let e = if j < 0 { SOUTH } else { NORTH };
            return match self.edges[e] {
                EdgeKind::Inflow => 2.0 * self.wx - center,
                EdgeKind::Outflow => center,
            };
        }
        let (l, r) = (self.fluid(i as isize - 1, j), self.fluid(i as isize, j));
        if !l && !r {
            -center
        } else {
            self.f.u_face(i, j as usize)
        }
    }

    fn v_tangential(&self, i: isize, j: usize, center: f64) -> f64 {
        let nx = self.grid.nx() as isize;
        if i < 0 || i >= nx {
            let e = if i < 0 { WEST } else { EAST };
            return match self.edges[e] {
                EdgeKind::Inflow => 2.0 * self.wy - center,
                EdgeKind::Outflow => center,
            };
        }
        let (b, a) = (self.fluid(i, j as isize - 1), self.fluid(i, j as isize));
        if !b && !a {
            -center
        } else {
            self.f.v_face(i as usize, j)
        }
    }

    fn p_or_boundary(&self, i: isize, j: isize) -> Option<f64> {
        if i < 0 || j < 0 || i >= self.grid.nx() as isize || j >= self.grid.ny() as isize {
            None
        } else {
            Some(self.f.pressure(i as usize, j as usize))
        }
    }
}

fn upwind_derivative(a: f64, minus: f64, center: f64, plus: f64, h: f64) -> f64 {
    if a > 0.0 {
        a * (center - minus) / h
    } else {
        a * (plus - center) / h
    }
}

/// Evaluates the discrete steady residuals of `field` on `grid`.
pub fn evaluate_residual(grid: &Grid, field: &WindField, cfg: &WindConfig) -> ResidualReport {
    let (nx, ny, h, nu) = (grid.nx(), grid.ny(), grid.h(), cfg.nu);
    let (wx, wy) = field.params.boundary_velocity();
    let s = Sampler {
        grid,
        f: field,
        edges: edge_kinds(field.params, cfg.boundary),
        wx,
        wy,
    };
    let mut rep = ResidualReport::default();
    let mut sum_sq = 0.0;
    let mut count = 0usize;

    // x-momentum
    for j in 0..ny {
        for i in 0..=nx {
            let (ii, jj) = (i as isize, j as isize);
            let left = s.fluid(ii - 1, jj);
            let right = s.fluid(ii, jj);
            let on_edge = i == 0 || i == nx;
            let val = field.u_face(i, j);
            if !left && !right {
                continue;
            }
            if on_edge {
                let e = if i == 0 { WEST } else { EAST };
                if s.edges[e] == EdgeKind::Inflow {
                    rep.inflow_error_inf = rep.inflow_error_inf.max((val - wx).abs());
                    continue;
                }
            } else if !(left && right) {
                rep.wall_normal_inf = rep.wall_normal_inf.max(val.abs());
                continue;
            }
            let w = if i > 0 { field.u_face(i - 1, j) } else { val };
            let e = if i < nx { field.u_face(i + 1, j) } else { val };
            let so = s.u_tangential(i, jj - 1, val);
            let no = s.u_tangential(i, jj + 1, val);
            let mut vsum = 0.0;
            let mut vn = 0.0;
            for ci in [ii - 1, ii] {
                if ci >= 0 && ci < nx as isize {
                    vsum += field.v_face(ci as usize, j) + field.v_face(ci as usize, j + 1);
                    vn += 2.0;
                }
            }
            let va = vsum / vn;
            let conv = upwind_derivative(val, w, val, e, h) + upwind_derivative(va, so, val, no, h);
            let diff = nu * (w + e + so + no - 4.0 * val) / (h * h);
            let pl = s.p_or_boundary(ii - 1, jj);
            let pr = s.p_or_boundary(ii, jj);
            let grad = match (pl, pr) {
                (Some(a), Some(b)) => (b - a) / h,
                (None, Some(b)) => b / (0.5 * h),
                (Some(a), None) => -a / (0.5 * h),
                (None, None) => unreachable!(),
            };
            let r = conv - diff + grad;
            rep.momentum_inf = rep.momentum_inf.max(r.abs());
            sum_sq += r * r;
            count += 1;
        }
    }

    // y-momentum
    for j in 0..=ny {
        for i in 0..nx {
            let (ii, jj) = (i as isize, j as isize);
            let below = s.fluid(ii, jj - 1);
            let above = s.fluid(ii, jj);
            let on_edge = j == 0 || j == ny;
            let val = field.v_face(i, j);
            if !below && !above {
                continue;
            }
            if on_edge {
                let e = if j == 0 { SOUTH } else { NORTH };
                if s.edges[e] == EdgeKind::Inflow {
                    rep.inflow_error_inf = rep.inflow_error_inf.max((val - wy).abs());
                    continue;
                }
            } else if !(below && above) {
                rep.wall_normal_inf = rep.wall_normal_inf.max(val.abs());
                continue;
            }
            let so = if j > 0 { field.v_face(i, j - 1) } else { val };
            let no = if j < ny { field.v_face(i, j + 1) } else { val };
            let w = s.v_tangential(ii - 1, j, val);
            let e = s.v_tangential(ii + 1, j, val);
            let mut usum = 0.0;
            let mut un = 0.0;
            for cj in [jj - 1, jj] {
                if cj >= 0 && cj < ny as isize {
                    usum += field.u_face(i, cj as usize) + field.u_face(i + 1, cj as usize);
                    un += 2.0;
                }
            }
            let ua = usum / un;
            let conv = upwind_derivative(ua, w, val, e, h) + upwind_derivative(val, so, val, no, h);
            let diff = nu * (w + e + so + no - 4.0 * val) / (h * h);
            let pb = s.p_or_boundary(ii, jj - 1);
            let pa = s.p_or_boundary(ii, jj);
            let grad = match (pb, pa) {
                (Some(a), Some(b)) => (b - a) / h,
                (None, Some(b)) => b / (0.5 * h),
                (Some(a), None) => -a / (0.5 * h),
                (None, None) => unreachable!(),
            };
            let r = conv - diff + grad;
            rep.momentum_inf = rep.momentum_inf.max(r.abs());
            sum_sq += r * r;
            count += 1;
        }
    }

    for &(i, j) in grid.cells() {
        let div = field.u_face(i + 1, j) - field.u_face(i, j) + field.v_face(i, j + 1)
            - field.v_face(i, j);
        rep.divergence_inf = rep.divergence_inf.max(div.abs());
    }
    rep.momentum_rms = if count > 0 {
        (sum_sq / count as f64).sqrt()
    } else {
        0.0
    };
    rep
}
