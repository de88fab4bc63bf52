use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use super::anderson::Anderson;
use super::layout::{Edges, EdgeKind, Face, FaceLayout, EAST, NORTH, SOUTH, WEST};
use super::residual::evaluate_residual;
use super::{WindConfig, WindField, WindParams};
use crate::error::{Error, Result};
use crate::geometry::Grid;
use crate::sparse::{solve_with_fallback, BandedLu, Ilu0, KrylovConfig, TripletBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveReport {
    pub iterations: usize,
    /// Max-norm momentum residual relative to `max(w_in^2 / h, nu w_in / h^2)`.
    pub momentum_residual: f64,
    /// Max-norm per-cell divergence relative to `w_in`.
    pub divergence: f64,
    pub converged: bool,
}

/// Factorized pressure-correction operator for one edge split.
struct Projection {
    lu: BandedLu,
    pinned: Vec<bool>,
}

/// Steady wind solver bound to one grid. Pressure-correction factorizations
/// are cached per inflow/outflow edge split and shared between threads.
pub struct WindSolver<'g> {
    grid: &'g Grid,
    cfg: WindConfig,
    projections: RwLock<HashMap<Edges, Arc<Projection>>>,
}

/// Iterations without a new best residual before the mixing history is
/// dropped.
const STALL_ITERATIONS: usize = 100;

/// Coefficient target of one stencil neighbor.
enum Nb {
    Unknown(usize),
    Known(f64),
    /// Ghost value `constant + self_coef * center`.
    Ghost { self_coef: f64, constant: f64 },
}

/// Convenience wrapper: one-shot solve that fails if the iteration does not
/// reach the configured tolerances.
pub fn solve_steady_ins(
    grid: &Grid,
    params: WindParams,
    cfg: &WindConfig,
    guess: Option<&WindField>,
) -> Result<WindField> {
    let solver = WindSolver::new(grid, *cfg)?;
    solver.solve(params, guess)
}

impl<'g> WindSolver<'g> {
    pub fn new(grid: &'g Grid, cfg: WindConfig) -> Result<Self> {
        if !(cfg.nu > 0.0) {
            return Err(Error::Config(format!("viscosity must be positive, got {}", cfg.nu)));
        }
        if !(cfg.relaxation > 0.0 && cfg.relaxation <= 1.0) {
            return Err(Error::Config("relaxation must lie in (0, 1]".into()));
        }
        Ok(Self {
            grid,
            cfg,
            projections: RwLock::new(HashMap::new()),
        })
    }

    pub fn grid(&self) -> &Grid {
        self.grid
    }

    pub fn config(&self) -> &WindConfig {
        &self.cfg
    }

    /// Solves and requires convergence.
    pub fn solve(&self, params: WindParams, guess: Option<&WindField>) -> Result<WindField> {
        let (field, report) = self.solve_with_report(params, guess)?;
        if report.converged {
            Ok(field)
        } else {
            Err(Error::WindNotConverged {
                iterations: report.iterations,
                residual: report.momentum_residual,
            })
        }
    }

    /// Marches the pseudo-time projection iteration to steady state and
    /// returns the last iterate with its convergence report.
    pub fn solve_with_report(
        &self,
        params: WindParams,
        guess: Option<&WindField>,
    ) -> Result<(WindField, SolveReport)> {
        let grid = self.grid;
        if let Some(g) = guess {
            if !g.matches(grid) {
                return Err(Error::Dimension("wind guess was solved on another grid".into()));
            }
        }
        let w_in = params.intensity();
        if w_in == 0.0 {
            let report = SolveReport {
                converged: true,
                ..Default::default()
            };
            return Ok((WindField::zero(grid, params), report));
        }

        let layout = FaceLayout::new(grid, params, self.cfg.boundary);
        let projection = self.projection(&layout)?;
        let (mut u, mut v, mut p) = initial_state(grid, &layout, guess);
        let h = grid.h();
        let dt = self.cfg.pseudo_cfl * h / w_in;
        let alpha = self.cfg.relaxation;
        let momentum_scale = (w_in * w_in / h).max(self.cfg.nu * w_in / (h * h));
        let krylov = KrylovConfig {
            rtol: 1e-6,
            max_iterations: 400,
        };

        // make the start divergence-free
        project(grid, &layout, &projection, &mut u, &mut v, &mut p, dt);

        let mut report = SolveReport::default();
        let mut mixer = Anderson::new(self.cfg.anderson_depth);
        let p_scale = 1.0 / w_in;
        let mut best = (f64::INFINITY, 0, u.clone(), v.clone(), p.clone());
        let mut failed_from_best = false;
        for it in 1..=self.cfg.max_iterations {
            let x = pack(&u, &v, &p, &layout, p_scale);
            let (a_u, b_u) = self.assemble_u(&layout, &u, &v, &p, dt);
            let (a_v, b_v) = self.assemble_v(&layout, &u, &v, &p, dt);
            let mut u_new = gather(&u, &layout.u_unknown, layout.n_u);
            let mut v_new = gather(&v, &layout.v_unknown, layout.n_v);
            // the outer iteration absorbs the inexact inner solves
            let solved = solve_with_fallback(&a_u, Ilu0::new(&a_u).ok().as_ref(), &b_u, &mut u_new, krylov)
                .and_then(|_| solve_with_fallback(&a_v, Ilu0::new(&a_v).ok().as_ref(), &b_v, &mut v_new, krylov));
            if let Err(e) = solved {
                if failed_from_best || best.0.is_infinite() {
                    return Err(e);
                }
                log::debug!("wind iteration {it}: {e}; restarting from the best iterate");
                failed_from_best = true;
                (u, v, p) = (best.2.clone(), best.3.clone(), best.4.clone());
                mixer.reset();
                continue;
            }
            relax_scatter(&mut u, &layout.u_unknown, &u_new, alpha);
            relax_scatter(&mut v, &layout.v_unknown, &v_new, alpha);
            project(grid, &layout, &projection, &mut u, &mut v, &mut p, dt);

            let field = WindField::from_parts(grid, u.clone(), v.clone(), p.clone(), params);
            let res = evaluate_residual(grid, &field, &self.cfg);
            report = SolveReport {
                iterations: it,
                momentum_residual: res.momentum_inf / momentum_scale,
                divergence: res.divergence_inf / w_in,
                converged: false,
            };
            log::trace!("wind iteration {it}: momentum {:.3e} divergence {:.3e}", report.momentum_residual, report.divergence);
            if report.momentum_residual <= self.cfg.momentum_tol
                && report.divergence <= self.cfg.div_tol
            {
                report.converged = true;
                return Ok((field, report));
            }
            if report.momentum_residual < best.0 {
                best = (report.momentum_residual, it, u.clone(), v.clone(), p.clone());
                failed_from_best = false;
            } else if !report.momentum_residual.is_finite() || report.momentum_residual > 1e3 * best.0 {
                // the mixed iterate blew up
                (u, v, p) = (best.2.clone(), best.3.clone(), best.4.clone());
                mixer.reset();
                continue;
            } else if it - best.1 >= STALL_ITERATIONS && it % STALL_ITERATIONS == 0 {
                mixer.reset();
            }
            let g = pack(&u, &v, &p, &layout, p_scale);
            let next = mixer.next(&x, g);
            unpack(&next, &mut u, &mut v, &mut p, &layout, p_scale);
        }
        if report.iterations > 0 && best.0 < report.momentum_residual {
            let (_, it, u_b, v_b, p_b) = best;
            let field = WindField::from_parts(grid, u_b, v_b, p_b, params);
            let res = evaluate_residual(grid, &field, &self.cfg);
            report = SolveReport {
                iterations: self.cfg.max_iterations,
                momentum_residual: res.momentum_inf / momentum_scale,
                divergence: res.divergence_inf / w_in,
                converged: false,
            };
            log::warn!(
                "wind solve for ({:.3} m/s, {:.3} rad) stopped; best residual {:.3e} at iteration {it}",
                w_in,
                params.direction(),
                report.momentum_residual
            );
            return Ok((field, report));
        }
        log::warn!(
            "wind solve for ({:.3} m/s, {:.3} rad) stopped at residual {:.3e}",
            w_in,
            params.direction(),
            report.momentum_residual
        );
        Ok((WindField::from_parts(grid, u, v, p, params), report))
    }

    fn projection(&self, layout: &FaceLayout) -> Result<Arc<Projection>> {
        if let Some(p) = self.projections.read().unwrap().get(&layout.edges) {
            return Ok(Arc::clone(p));
        }
        let built = Arc::new(build_projection(self.grid, layout)?);
        let mut cache = self.projections.write().unwrap();
        Ok(Arc::clone(cache.entry(layout.edges).or_insert(built)))
    }

    fn tangential_u(&self, layout: &FaceLayout, i: usize, j: isize) -> Nb {
        let grid = self.grid;
        let (nx, ny) = (grid.nx(), grid.ny());
        if j < 0 || j >= ny as isize {
            let edge = if j < 0 { SOUTH } else { NORTH };
            return match layout.edges[edge] {
                EdgeKind::Inflow => Nb::Ghost {
                    self_coef: -1.0,
                    constant: 2.0 * layout.boundary_velocity.0,
                },
                EdgeKind::Outflow => Nb::Ghost {
                    self_coef: 1.0,
                    constant: 0.0,
                },
            };
        }
        let j = j as usize;
        let left_solid = i == 0 || !grid.is_fluid(i - 1, j);
        let right_solid = i == nx || !grid.is_fluid(i, j);
        if left_solid && right_solid {
            return Nb::Ghost {
                self_coef: -1.0,
                constant: 0.0,
            };
        }
        face_nb(layout.u_faces[layout.u_index(i, j)], layout.u_unknown[layout.u_index(i, j)])
    }

    fn tangential_v(&self, layout: &FaceLayout, i: isize, j: usize) -> Nb {
        let grid = self.grid;
        let (nx, ny) = (grid.nx(), grid.ny());
        if i < 0 || i >= nx as isize {
            let edge = if i < 0 { WEST } else { EAST };
            return match layout.edges[edge] {
                EdgeKind::Inflow => Nb::Ghost {
                    self_coef: -1.0,
                    constant: 2.0 * layout.boundary_velocity.1,
                },
                EdgeKind::Outflow => Nb::Ghost {
                    self_coef: 1.0,
                    constant: 0.0,
                },
            };
        }
        let i = i as usize;
        let below_solid = j == 0 || !grid.is_fluid(i, j - 1);
        let above_solid = j == ny || !grid.is_fluid(i, j);
        if below_solid && above_solid {
            return Nb::Ghost {
                self_coef: -1.0,
                constant: 0.0,
            };
        }
        face_nb(layout.v_faces[layout.v_index(i, j)], layout.v_unknown[layout.v_index(i, j)])
    }

    fn assemble_u(
        &self,
        layout: &FaceLayout,
        u: &[f64],
        v: &[f64],
        p: &[f64],
        dt: f64,
    ) -> (crate::sparse::CsrMatrix, Vec<f64>) {
        let grid = self.grid;
        let (nx, ny, h, nu) = (grid.nx(), grid.ny(), grid.h(), self.cfg.nu);
        let mut a = TripletBuilder::new(layout.n_u);
        let mut b = vec![0.0; layout.n_u];
        for j in 0..ny {
            for i in 0..=nx {
                let f = layout.u_index(i, j);
                let row = layout.u_unknown[f];
                if row == usize::MAX {
                    continue;
                }
                let up = u[f];
                let ua = up;
                let va = {
                    let mut s = 0.0;
                    let mut n = 0.0;
                    for ci in [i.wrapping_sub(1), i] {
                        if ci < nx {
                            s += v[layout.v_index(ci, j)] + v[layout.v_index(ci, j + 1)];
                            n += 2.0;
                        }
                    }
                    s / n
                };
                let normal = |ii: isize| -> Nb {
                    if ii < 0 || ii > nx as isize {
                        Nb::Ghost {
                            self_coef: 1.0,
                            constant: 0.0,
                        }
                    } else {
                        let g = layout.u_index(ii as usize, j);
                        face_nb(layout.u_faces[g], layout.u_unknown[g])
                    }
                };
                let west = normal(i as isize - 1);
                let east = normal(i as isize + 1);
                let south = self.tangential_u(layout, i, j as isize - 1);
                let north = self.tangential_u(layout, i, j as isize + 1);

                let mut diag = 1.0 / dt + 4.0 * nu / (h * h);
                let mut rhs = up / dt - pressure_gradient_u(grid, p, i, j);
                let mut nbs: Vec<(Nb, f64)> = Vec::with_capacity(4);
                let (cw, ce) = upwind(ua, h);
                let (cs, cn) = upwind(va, h);
                diag += ua.abs() / h + va.abs() / h;
                let dcoef = -nu / (h * h);
                nbs.push((west, cw + dcoef));
                nbs.push((east, ce + dcoef));
                nbs.push((south, cs + dcoef));
                nbs.push((north, cn + dcoef));
                for (nb, c) in nbs {
                    apply_nb(&mut a, &mut diag, &mut rhs, row, nb, c);
                }
                a.add(row, row, diag);
                b[row] = rhs;
            }
        }
        (a.build(), b)
    }

    fn assemble_v(
        &self,
        layout: &FaceLayout,
        u: &[f64],
        v: &[f64],
        p: &[f64],
        dt: f64,
    ) -> (crate::sparse::CsrMatrix, Vec<f64>) {
        let grid = self.grid;
        let (nx, ny, h, nu) = (grid.nx(), grid.ny(), grid.h(), self.cfg.nu);
        let mut a = TripletBuilder::new(layout.n_v);
        let mut b = vec![0.0; layout.n_v];
        for j in 0..=ny {
            for i in 0..nx {
                let f = layout.v_index(i, j);
                let row = layout.v_unknown[f];
                if row == usize::MAX {
                    continue;
                }
                let vp = v[f];
                let va = vp;
                let ua = {
                    let mut s = 0.0;
                    let mut n = 0.0;
                    for cj in [j.wrapping_sub(1), j] {
                        if cj < ny {
                            s += u[layout.u_index(i, cj)] + u[layout.u_index(i + 1, cj)];
                            n += 2.0;
                        }
                    }
                    s / n
                };
                let normal = |jj: isize| -> Nb {
                    if jj < 0 || jj > ny as isize {
                        Nb::Ghost {
                            self_coef: 1.0,
                            constant: 0.0,
                        }
                    } else {
                        let g = layout.v_index(i, jj as usize);
                        face_nb(layout.v_faces[g], layout.v_unknown[g])
                    }
                };
                let south = normal(j as isize - 1);
                let north = normal(j as isize + 1);
                let west = self.tangential_v(layout, i as isize - 1, j);
                let east = self.tangential_v(layout, i as isize + 1, j);

                let mut diag = 1.0 / dt + 4.0 * nu / (h * h);
                let mut rhs = vp / dt - pressure_gradient_v(grid, p, i, j);
                let (cw, ce) = upwind(ua, h);
                let (cs, cn) = upwind(va, h);
                diag += ua.abs() / h + va.abs() / h;
                let dcoef = -nu / (h * h);
                for (nb, c) in [
                    (west, cw + dcoef),
                    (east, ce + dcoef),
                    (south, cs + dcoef),
                    (north, cn + dcoef),
                ] {
                    apply_nb(&mut a, &mut diag, &mut rhs, row, nb, c);
                }
                a.add(row, row, diag);
                b[row] = rhs;
            }
        }
        (a.build(), b)
    }
}

/// Upwind coefficients `(lower, upper)` for advection speed `a`; the diagonal
/// part `|a| / h` is added by the caller.
fn upwind(a: f64, h: f64) -> (f64, f64) {
    if a > 0.0 {
        (-a / h, 0.0)
    } else {
        (0.0, a / h)
    }
}

fn face_nb(face: Face, unknown: usize) -> Nb {
    match face {
        Face::Unknown => Nb::Unknown(unknown),
        Face::Fixed(v) => Nb::Known(v),
    }
}

fn apply_nb(a: &mut TripletBuilder, diag: &mut f64, rhs: &mut f64, row: usize, nb: Nb, c: f64) {
    if c == 0.0 {
        return;
    }
    match nb {
        Nb::Unknown(k) => a.add(row, k, c),
        Nb::Known(val) => *rhs -= c * val,
        Nb::Ghost {
            self_coef,
            constant,
        } => {
            *diag += c * self_coef;
            *rhs -= c * constant;
        }
    }
}

/// `dp/dx` at an unknown `u` face; outflow boundary pressure is zero at the face.
pub(super) fn pressure_gradient_u(grid: &Grid, p: &[f64], i: usize, j: usize) -> f64 {
    let (nx, h) = (grid.nx(), grid.h());
    if i == 0 {
        p[j * nx] / (0.5 * h)
    } else if i == nx {
        -p[j * nx + nx - 1] / (0.5 * h)
    } else {
        (p[j * nx + i] - p[j * nx + i - 1]) / h
    }
}

pub(super) fn pressure_gradient_v(grid: &Grid, p: &[f64], i: usize, j: usize) -> f64 {
    let (nx, ny, h) = (grid.nx(), grid.ny(), grid.h());
    if j == 0 {
        p[i] / (0.5 * h)
    } else if j == ny {
        -p[(ny - 1) * nx + i] / (0.5 * h)
    } else {
        (p[j * nx + i] - p[(j - 1) * nx + i]) / h
    }
}

fn initial_state(
    grid: &Grid,
    layout: &FaceLayout,
    guess: Option<&WindField>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (wx, wy) = layout.boundary_velocity;
    let fill = |faces: &[Face], prior: Option<&[f64]>, free: f64| -> Vec<f64> {
        faces
            .iter()
            .enumerate()
            .map(|(k, f)| match f {
                Face::Fixed(val) => *val,
                Face::Unknown => prior.map_or(free, |g| g[k]),
            })
            .collect()
    };
    let u = fill(&layout.u_faces, guess.map(|g| g.u.as_slice()), wx);
    let v = fill(&layout.v_faces, guess.map(|g| g.v.as_slice()), wy);
    let p = match guess {
        Some(g) => g.p.clone(),
        None => vec![0.0; grid.nx() * grid.ny()],
    };
    (u, v, p)
}

fn gather(x: &[f64], unknown: &[usize], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (f, &k) in unknown.iter().enumerate() {
        if k != usize::MAX {
            out[k] = x[f];
        }
    }
    out
}

/// Unknown velocities and scaled pressure as one vector.
fn pack(u: &[f64], v: &[f64], p: &[f64], layout: &FaceLayout, p_scale: f64) -> Vec<f64> {
    let mut x = gather(u, &layout.u_unknown, layout.n_u);
    x.extend(gather(v, &layout.v_unknown, layout.n_v));
    x.extend(p.iter().map(|q| q * p_scale));
    x
}

fn unpack(x: &[f64], u: &mut [f64], v: &mut [f64], p: &mut [f64], layout: &FaceLayout, p_scale: f64) {
    let (xu, rest) = x.split_at(layout.n_u);
    let (xv, xp) = rest.split_at(layout.n_v);
    for (faces, unknown, vals) in [(u, &layout.u_unknown, xu), (v, &layout.v_unknown, xv)] {
        for (f, &k) in unknown.iter().enumerate() {
            if k != usize::MAX {
                faces[f] = vals[k];
            }
        }
    }
    for (q, xq) in p.iter_mut().zip(xp) {
        *q = xq / p_scale;
    }
}

fn relax_scatter(x: &mut [f64], unknown: &[usize], solved: &[f64], alpha: f64) {
    for (f, &k) in unknown.iter().enumerate() {
        if k != usize::MAX {
            x[f] += alpha * (solved[k] - x[f]);
        }
    }
}

/// Builds `-h^2 D G` over fluid cells, with one pinned cell per connected
/// component that has no zero-pressure outflow face.
fn build_projection(grid: &Grid, layout: &FaceLayout) -> Result<Projection> {
    let m = grid.num_nodes();
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut diag = vec![0.0; m];
    let mut offdiag: Vec<(usize, usize)> = Vec::new();
    let mut anchored = vec![false; m];

    for (node, &(i, j)) in grid.cells().iter().enumerate() {
        let faces = [
            (layout.u_index(i, j), true, i == 0),
            (layout.u_index(i + 1, j), true, i + 1 == nx),
            (layout.v_index(i, j), false, j == 0),
            (layout.v_index(i, j + 1), false, j + 1 == ny),
        ];
        let neighbors = [
            (i > 0).then(|| grid.node(i - 1, j)).flatten(),
            (i + 1 < nx).then(|| grid.node(i + 1, j)).flatten(),
            (j > 0).then(|| grid.node(i, j - 1)).flatten(),
            (j + 1 < ny).then(|| grid.node(i, j + 1)).flatten(),
        ];
        for ((f, is_u, on_edge), nb) in faces.into_iter().zip(neighbors) {
            let face = if is_u { layout.u_faces[f] } else { layout.v_faces[f] };
            if face != Face::Unknown {
                continue;
            }
            if on_edge {
                diag[node] += 2.0;
                anchored[node] = true;
            } else {
                diag[node] += 1.0;
                offdiag.push((node, nb.expect("unknown interior face joins two fluid cells")));
            }
        }
    }

    // connected components over unknown faces
    let mut adjacency = vec![Vec::new(); m];
    for &(a, b) in &offdiag {
        adjacency[a].push(b);
    }
    let mut pinned = vec![false; m];
    let mut seen = vec![false; m];
    for start in 0..m {
        if seen[start] {
            continue;
        }
        let mut stack = vec![start];
        let mut members = Vec::new();
        seen[start] = true;
        while let Some(c) = stack.pop() {
            members.push(c);
            for &nb in &adjacency[c] {
                if !seen[nb] {
                    seen[nb] = true;
                    stack.push(nb);
                }
            }
        }
        if !members.iter().any(|&c| anchored[c]) {
            let reference = *members.iter().min().unwrap();
            pinned[reference] = true;
        }
    }

    let mut builder = TripletBuilder::new(m);
    for c in 0..m {
        builder.add(c, c, if pinned[c] { 1.0 } else { diag[c] });
    }
    for (a, b) in offdiag {
        if !pinned[a] && !pinned[b] {
            builder.add(a, b, -1.0);
        }
    }
    let lu = BandedLu::factor(&builder.build())?;
    Ok(Projection { lu, pinned })
}

/// Removes the divergence of `(u, v)` on unknown faces and accumulates the
/// pressure correction.
fn project(
    grid: &Grid,
    layout: &FaceLayout,
    projection: &Projection,
    u: &mut [f64],
    v: &mut [f64],
    p: &mut [f64],
    dt: f64,
) {
    let h = grid.h();
    let nx = grid.nx();
    let mut rhs: Vec<f64> = grid
        .cells()
        .iter()
        .map(|&(i, j)| {
            let div = u[layout.u_index(i + 1, j)] - u[layout.u_index(i, j)]
                + v[layout.v_index(i, j + 1)]
                - v[layout.v_index(i, j)];
            // -h^2 (D u) / dt with D u = div / h
            -h * div / dt
        })
        .collect();
    for (r, &pin) in rhs.iter_mut().zip(&projection.pinned) {
        if pin {
            *r = 0.0;
        }
    }
    projection.lu.solve_in_place(&mut rhs);
    let mut phi = vec![0.0; nx * grid.ny()];
    for (node, &(i, j)) in grid.cells().iter().enumerate() {
        phi[j * nx + i] = rhs[node];
    }
    for j in 0..grid.ny() {
        for i in 0..=nx {
            let f = layout.u_index(i, j);
            if layout.u_faces[f] == Face::Unknown {
                u[f] -= dt * pressure_gradient_u(grid, &phi, i, j);
            }
        }
    }
    for j in 0..=grid.ny() {
        for i in 0..nx {
            let f = layout.v_index(i, j);
            if layout.v_faces[f] == Face::Unknown {
                v[f] -= dt * pressure_gradient_v(grid, &phi, i, j);
            }
        }
    }
    for (pk, phik) in p.iter_mut().zip(&phi) {
        *pk += phik;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, DomainSpec, Point2, Polygon};
    use crate::windfield::{evaluate_residual, BoundaryMode};
    use std::f64::consts::PI;

    fn grid(side: f64, h: f64, building: Option<(f64, f64)>) -> Grid {
        let bbox = BBox::new(Point2::new(0.0, 0.0), Point2::new(side, side));
        let buildings = building
            .map(|(lo, hi)| vec![Polygon::rectangle(Point2::new(lo, lo), Point2::new(hi, hi)).unwrap()])
            .unwrap_or_default();
        Grid::rasterize(&DomainSpec::new(bbox, buildings).unwrap(), h).unwrap()
    }

    fn dirichlet() -> WindConfig {
        WindConfig {
            boundary: BoundaryMode::AllDirichlet,
            ..WindConfig::default()
        }
    }

    #[test]
    fn uniform_flow_is_exact() {
        let g = grid(100.0, 10.0, None);
        let f = solve_steady_ins(&g, WindParams::new(5.0, PI), &dirichlet(), None).unwrap();
        assert!(f.u.iter().all(|&u| (u + 5.0).abs() < 1e-6));
        assert!(f.v.iter().all(|&v| v.abs() < 1e-6));
        let p0 = f.p[0];
        assert!(f.p.iter().all(|&p| (p - p0).abs() < 1e-6));
    }

    #[test]
    fn doubling_intensity_doubles_uniform_flow() {
        let g = grid(100.0, 10.0, None);
        let cfg = dirichlet();
        let a = solve_steady_ins(&g, WindParams::new(2.0, 0.7), &cfg, None).unwrap();
        let b = solve_steady_ins(&g, WindParams::new(4.0, 0.7), &cfg, None).unwrap();
        for (x, y) in a.u.iter().chain(&a.v).zip(b.u.iter().chain(&b.v)) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn calm_gives_zero_field() {
        let g = grid(100.0, 10.0, Some((40.0, 60.0)));
        let f = solve_steady_ins(&g, WindParams::new(0.0, 1.0), &WindConfig::default(), None).unwrap();
        assert!(f.u.iter().chain(&f.v).chain(&f.p).all(|&x| x == 0.0));
    }

    #[test]
    fn building_wake_satisfies_independent_residuals() {
        let g = grid(200.0, 10.0, Some((80.0, 120.0)));
        let cfg = WindConfig::default();
        let solver = WindSolver::new(&g, cfg).unwrap();
        let (f, rep) = solver.solve_with_report(WindParams::new(5.0, PI), None).unwrap();
        assert!(rep.converged);
        let res = evaluate_residual(&g, &f, &cfg);
        assert!(res.divergence_inf <= 1e-6 * 5.0);
        assert_eq!(res.wall_normal_inf, 0.0);
        assert_eq!(res.inflow_error_inf, 0.0);
        assert!(res.momentum_inf <= cfg.momentum_tol * 25.0 / 10.0);
        // slowed air downstream (west) of the building
        let (wake_u, _) = f.cell_velocity(6, 10);
        assert!(wake_u > -2.5, "no wake: u = {wake_u}");
        // and deflected flow around it
        assert!(f.max_speed() > 5.0);
    }

    #[test]
    fn quarter_turn_rotates_the_solution() {
        let g = grid(200.0, 10.0, Some((80.0, 120.0)));
        let n = g.nx();
        let cfg = WindConfig {
            momentum_tol: 1e-5,
            ..WindConfig::default()
        };
        let solver = WindSolver::new(&g, cfg).unwrap();
        let a = solver.solve(WindParams::new(5.0, PI), None).unwrap();
        let b = solver.solve(WindParams::new(5.0, 1.5 * PI), None).unwrap();
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for i in 0..=n {
                // x-face (i, j) maps to y-face (n-1-j, i), value u -> v
                worst = worst.max((b.v_face(n - 1 - j, i) - a.u_face(i, j)).abs());
                // y-face (j, i) maps to x-face (n-i, j), value v -> -u
                worst = worst.max((b.u_face(n - i, j) + a.v_face(j, i)).abs());
            }
        }
        assert!(worst < 1e-4, "rotation mismatch {worst}");
    }

    #[test]
    fn warm_start_meets_the_same_tolerance() {
        let g = grid(200.0, 10.0, Some((80.0, 120.0)));
        let cfg = WindConfig::default();
        let solver = WindSolver::new(&g, cfg).unwrap();
        let cold = solver.solve(WindParams::new(5.0, PI), None).unwrap();
        let target = WindParams::new(5.6, PI + 0.2);
        let (warm, rep) = solver.solve_with_report(target, Some(&cold)).unwrap();
        assert!(rep.converged);
        assert!(rep.momentum_residual <= cfg.momentum_tol);
        let res = evaluate_residual(&g, &warm, &cfg);
        assert!(res.divergence_inf <= cfg.div_tol * 5.6);
        let other = grid(100.0, 10.0, None);
        assert!(WindSolver::new(&other, cfg).unwrap().solve(target, Some(&cold)).is_err());
    }

    #[test]
    fn pressure_gauge_is_pinned_and_irrelevant() {
        let g = grid(200.0, 10.0, Some((80.0, 120.0)));
        let cfg = WindConfig {
            boundary: BoundaryMode::AllDirichlet,
            ..WindConfig::default()
        };
        let f = solve_steady_ins(&g, WindParams::new(3.0, 0.4), &cfg, None).unwrap();
        let (i0, j0) = g.cell(0);
        assert_eq!(f.pressure(i0, j0), 0.0);
        let base = evaluate_residual(&g, &f, &cfg);
        let mut shifted = f.clone();
        for &(i, j) in g.cells() {
            shifted.p[j * g.nx() + i] += 17.0;
        }
        let moved = evaluate_residual(&g, &shifted, &cfg);
        assert!((moved.momentum_inf - base.momentum_inf).abs() < 1e-9);
        assert_eq!(moved.divergence_inf, base.divergence_inf);
    }

    #[test]
    fn csv_export_lists_fluid_cells() {
        let g = grid(100.0, 10.0, Some((40.0, 60.0)));
        let f = solve_steady_ins(&g, WindParams::new(1.0, 0.0), &WindConfig::default(), None).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("cell_x_index,cell_y_index,u,v,p"));
        assert_eq!(lines.count(), g.num_nodes());
    }

    #[test]
    fn rejects_bad_config() {
        let g = grid(100.0, 10.0, None);
        let bad = WindConfig {
            nu: 0.0,
            ..WindConfig::default()
        };
        assert!(WindSolver::new(&g, bad).is_err());
    }
}
