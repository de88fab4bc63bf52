//! Implicit upwind finite-volume advection-diffusion on the fluid cells.
//!
//! One backward-Euler step solves `A c_t = L c_{t-1}` with `L = I` and `A`
//! collecting the advective and diffusive face fluxes. Outer faces with
//! inward wind carry clean air (`c = 0`); every other boundary, walls
//! included, has zero diffusive flux.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::geometry::{Grid, Point2};
use crate::sparse::{solve_with_fallback, CsrMatrix, Ilu0, KrylovConfig, SolveStats, TripletBuilder};
use crate::windfield::WindField;

/// Node-indexed concentration vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConcentrationField {
    pub values: Vec<f64>,
}

impl ConcentrationField {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(m: usize) -> Self {
        Self::new(vec![0.0; m])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `sum(c) h^2`.
    pub fn mass(&self, grid: &Grid) -> f64 {
        self.values.iter().sum::<f64>() * grid.h() * grid.h()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Writes `cell_x_index,cell_y_index,concentration` rows.
    pub fn write_csv<W: Write>(&self, grid: &Grid, mut out: W) -> std::io::Result<()> {
        writeln!(out, "cell_x_index,cell_y_index,concentration")?;
        for (node, &(i, j)) in grid.cells().iter().enumerate() {
            writeln!(out, "{i},{j},{}", self.values[node])?;
        }
        Ok(())
    }
}

/// Gaussian bell with unit peak: `exp(-|x - center|^2 / (2 sigma0^2))` at
/// every fluid cell center.
pub fn gaussian_initial_condition(grid: &Grid, center: Point2, sigma0: f64) -> Result<ConcentrationField> {
    if !(sigma0 > 0.0) {
        return Err(Error::Config(format!("sigma0 must be positive, got {sigma0}")));
    }
    if !grid.is_free_point(center) {
        return Err(Error::NotInFluid {
            x: center.x,
            y: center.y,
        });
    }
    let two_s2 = 2.0 * sigma0 * sigma0;
    let values = (0..grid.num_nodes())
        .map(|k| {
            let p = grid.node_center(k);
            let d2 = (p.x - center.x).powi(2) + (p.y - center.y).powi(2);
            (-d2 / two_s2).exp()
        })
        .collect();
    Ok(ConcentrationField::new(values))
}

/// Assembled backward-Euler operators for one wind field.
#[derive(Debug, Clone)]
pub struct TransportOperators {
    pub a: CsrMatrix,
    pub l: CsrMatrix,
    pub dt: f64,
    pub epsilon: f64,
    /// Identity of the wind field the operators were built from.
    pub wind_id: u64,
    /// Per node, `dt/h^2` times the outflow plus clean-inflow diffusive
    /// coefficient; `sum(c_t) - sum(c_{t-1}) = -sum(boundary_loss * c_t)`.
    pub boundary_loss: Vec<f64>,
    precond: Option<Ilu0>,
}

impl TransportOperators {
    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    /// `(identity, identity)` operators, mostly for tests.
    pub fn identity(m: usize, dt: f64) -> Self {
        let a = CsrMatrix::identity(m);
        let precond = Ilu0::new(&a).ok();
        Self {
            l: a.clone(),
            a,
            dt,
            epsilon: 0.0,
            wind_id: 0,
            boundary_loss: vec![0.0; m],
            precond,
        }
    }
}

/// Assembles `A` and `L` for `wind`, diffusion `epsilon` and step `dt`.
pub fn assemble(grid: &Grid, wind: &WindField, epsilon: f64, dt: f64) -> Result<TransportOperators> {
    if !(dt > 0.0) || !(epsilon >= 0.0) {
        return Err(Error::Config(format!(
            "need dt > 0 and epsilon >= 0 (dt = {dt}, epsilon = {epsilon})"
        )));
    }
    if !wind.matches(grid) {
        return Err(Error::Dimension("wind field was solved on another grid".into()));
    }
    let m = grid.num_nodes();
    let (nx, ny, h) = (grid.nx(), grid.ny(), grid.h());
    let k = dt / (h * h);
    let mut a = TripletBuilder::new(m);
    let mut boundary_loss = vec![0.0; m];

    for (node, &(i, j)) in grid.cells().iter().enumerate() {
        let mut diag = 1.0;
        // (outward normal velocity, neighbor cell or None on the outer edge)
        let faces = [
            (wind.u_face(i + 1, j), (i + 1 < nx).then(|| (i + 1, j))),
            (-wind.u_face(i, j), (i > 0).then(|| (i - 1, j))),
            (wind.v_face(i, j + 1), (j + 1 < ny).then(|| (i, j + 1))),
            (-wind.v_face(i, j), (j > 0).then(|| (i, j - 1))),
        ];
        for (un, nb) in faces {
            let flux = un * h;
            match nb {
                Some((ni, nj)) => {
                    let Some(other) = grid.node(ni, nj) else {
                        // wall: no-penetration and zero diffusive flux
                        continue;
                    };
                    if flux > 0.0 {
                        diag += k * flux;
                    } else if flux < 0.0 {
                        a.add(node, other, k * flux);
                    }
                    if epsilon > 0.0 {
                        diag += k * epsilon;
                        a.add(node, other, -k * epsilon);
                    }
                }
                None => {
                    if flux > 0.0 {
                        diag += k * flux;
                        boundary_loss[node] += k * flux;
                    } else if flux < 0.0 {
                        // clean inflow, c_D = 0 half a cell away
                        diag += 2.0 * k * epsilon;
                        boundary_loss[node] += 2.0 * k * epsilon;
                    }
                }
            }
        }
        a.add(node, node, diag);
    }
    let a = a.build();
    let precond = Ilu0::new(&a).ok();
    Ok(TransportOperators {
        a,
        l: CsrMatrix::identity(m),
        dt,
        epsilon,
        wind_id: wind.id(),
        boundary_loss,
        precond,
    })
}

/// One implicit step from `c_prev`, warm-started from `warm` (default `c_prev`).
pub fn step(
    ops: &TransportOperators,
    c_prev: &ConcentrationField,
    warm: Option<&ConcentrationField>,
    krylov: KrylovConfig,
) -> Result<(ConcentrationField, SolveStats)> {
    if c_prev.len() != ops.dim() {
        return Err(Error::Dimension(format!(
            "concentration has {} nodes, operators {}",
            c_prev.len(),
            ops.dim()
        )));
    }
    let b = ops.l.mul_vec(&c_prev.values);
    let mut x = match warm {
        Some(w) if w.len() == ops.dim() => w.values.clone(),
        _ => c_prev.values.clone(),
    };
    let stats = solve_with_fallback(&ops.a, ops.precond.as_ref(), &b, &mut x, krylov)?;
    Ok((ConcentrationField::new(x), stats))
}

type CacheKey = (u64, u64, u64);

/// Operators keyed by wind-field identity, diffusion and time step.
/// Concurrent lookups share a read lock; insertion takes the write lock.
#[derive(Debug, Default)]
pub struct OperatorCache {
    map: RwLock<HashMap<CacheKey, Arc<TransportOperators>>>,
}

impl OperatorCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_assemble(
        &self,
        grid: &Grid,
        wind: &WindField,
        epsilon: f64,
        dt: f64,
    ) -> Result<Arc<TransportOperators>> {
        let key = (wind.id(), epsilon.to_bits(), dt.to_bits());
        if let Some(ops) = self.map.read().unwrap().get(&key) {
            return Ok(Arc::clone(ops));
        }
        let ops = Arc::new(assemble(grid, wind, epsilon, dt)?);
        let mut map = self.map.write().unwrap();
        Ok(Arc::clone(map.entry(key).or_insert(ops)))
    }

    /// Drops entries whose wind field is not in `live`.
    pub fn retain_winds(&self, live: &[u64]) {
        self.map.write().unwrap().retain(|k, _| live.contains(&k.0));
    }

    pub fn len(&self) -> usize {
        self.map.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The transition map: advance `c` one step under `wind`, reusing cached
/// operators.
pub fn transition(
    grid: &Grid,
    cache: &OperatorCache,
    c: &ConcentrationField,
    wind: &WindField,
    epsilon: f64,
    dt: f64,
    krylov: KrylovConfig,
) -> Result<(ConcentrationField, SolveStats)> {
    let ops = cache.get_or_assemble(grid, wind, epsilon, dt)?;
    step(&ops, c, None, krylov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, CellKind, DomainSpec, Polygon};
    use crate::windfield::WindParams;
    use proptest::prelude::*;

    fn open_grid(side: f64, h: f64) -> Grid {
        let d = DomainSpec::new(BBox::new(Point2::new(0.0, 0.0), Point2::new(side, side)), vec![]).unwrap();
        Grid::rasterize(&d, h).unwrap()
    }

    fn uniform_wind(grid: &Grid, wx: f64, wy: f64) -> WindField {
        let mut w = WindField::zero(grid, WindParams::new(wx.hypot(wy), wy.atan2(wx)));
        w.u.iter_mut().for_each(|x| *x = wx);
        w.v.iter_mut().for_each(|x| *x = wy);
        w
    }

    fn tight() -> KrylovConfig {
        KrylovConfig {
            rtol: 1e-12,
            max_iterations: 1000,
        }
    }

    #[test]
    fn gaussian_values() {
        let g = open_grid(100.0, 10.0);
        let c = gaussian_initial_condition(&g, Point2::new(45.0, 45.0), 10.0).unwrap();
        assert_eq!(c.values[g.node(4, 4).unwrap()], 1.0);
        assert!((c.values[g.node(5, 4).unwrap()] - (-0.5f64).exp()).abs() < 1e-15);
        assert!(c.max() <= 1.0);
    }

    #[test]
    fn gaussian_integral_matches_closed_form() {
        // sum c h^2 -> 2 pi sigma^2 when sigma >> h and the bell is interior
        let g = open_grid(400.0, 2.0);
        let sigma = 20.0;
        let c = gaussian_initial_condition(&g, Point2::new(200.0, 200.0), sigma).unwrap();
        let exact = 2.0 * std::f64::consts::PI * sigma * sigma;
        assert!((c.mass(&g) - exact).abs() / exact < 1e-6);
    }

    #[test]
    fn gaussian_rejects_bad_input() {
        let d = DomainSpec::new(
            BBox::new(Point2::new(0.0, 0.0), Point2::new(100.0, 100.0)),
            vec![Polygon::rectangle(Point2::new(40.0, 40.0), Point2::new(60.0, 60.0)).unwrap()],
        )
        .unwrap();
        let g = Grid::rasterize(&d, 10.0).unwrap();
        assert!(gaussian_initial_condition(&g, Point2::new(50.0, 50.0), 5.0).is_err());
        assert!(gaussian_initial_condition(&g, Point2::new(5.0, 5.0), 0.0).is_err());
    }

    #[test]
    fn zero_wind_zero_diffusion_is_identity() {
        let g = open_grid(50.0, 10.0);
        let w = WindField::zero(&g, WindParams::new(0.0, 0.0));
        let ops = assemble(&g, &w, 0.0, 1.0).unwrap();
        assert!(ops.a.bit_identical(&CsrMatrix::identity(g.num_nodes())));
        assert!(ops.l.bit_identical(&CsrMatrix::identity(g.num_nodes())));
    }

    #[test]
    fn identity_step_is_noop() {
        let ops = TransportOperators::identity(4, 1.0);
        let c = ConcentrationField::new(vec![0.1, 0.2, 0.3, 0.4]);
        let (next, _) = step(&ops, &c, None, KrylovConfig::default()).unwrap();
        assert_eq!(next, c);
    }

    #[test]
    fn uniform_state_in_enclosure_is_steady() {
        // fluid pocket fully surrounded by solid cells
        let n = 6;
        let mask = (0..n * n)
            .map(|k| {
                let (i, j) = (k % n, k / n);
                if (1..5).contains(&i) && (1..5).contains(&j) {
                    CellKind::Fluid
                } else {
                    CellKind::Solid
                }
            })
            .collect();
        let g = Grid::from_mask(n, n, 10.0, Point2::new(0.0, 0.0), mask).unwrap();
        let w = WindField::zero(&g, WindParams::new(0.0, 0.0));
        let ops = assemble(&g, &w, 0.8, 1.0).unwrap();
        let c = ConcentrationField::new(vec![0.7; g.num_nodes()]);
        let (next, _) = step(&ops, &c, None, tight()).unwrap();
        for v in next.values {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn high_peclet_rows_form_an_m_matrix() {
        let g = open_grid(100.0, 10.0);
        let w = uniform_wind(&g, 5.0, 0.0);
        // cell Peclet number 5 * 10 / 0.8 = 62.5
        let ops = assemble(&g, &w, 0.8, 1.0).unwrap();
        for r in 0..ops.dim() {
            let mut diag = 0.0;
            let mut off = 0.0;
            for (c, v) in ops.a.row(r) {
                if c == r {
                    diag = v;
                } else {
                    assert!(v <= 0.0, "positive off-diagonal in row {r}");
                    off += v.abs();
                }
            }
            assert!(diag >= off + 1.0 - 1e-12);
        }
    }

    #[test]
    fn closed_diffusion_conserves_mass() {
        let g = open_grid(200.0, 5.0);
        let w = WindField::zero(&g, WindParams::new(0.0, 0.0));
        let ops = assemble(&g, &w, 0.8, 1.0).unwrap();
        for s in ops.a.column_sums() {
            assert!((s - 1.0).abs() < 1e-14);
        }
        let mut c = gaussian_initial_condition(&g, Point2::new(60.0, 130.0), 15.0).unwrap();
        for _ in 0..10 {
            let m0 = c.mass(&g);
            let (next, _) = step(&ops, &c, None, KrylovConfig::default()).unwrap();
            assert!((next.mass(&g) - m0).abs() / m0 < 1e-10);
            c = next;
        }
    }

    #[test]
    fn operators_are_deterministic() {
        let g = open_grid(100.0, 10.0);
        let w = uniform_wind(&g, 2.0, -1.0);
        let a1 = assemble(&g, &w, 0.4, 1.0).unwrap();
        let a2 = assemble(&g, &w, 0.4, 1.0).unwrap();
        assert!(a1.a.bit_identical(&a2.a));
    }

    #[test]
    fn cache_reuses_and_evicts() {
        let g = open_grid(100.0, 10.0);
        let w1 = uniform_wind(&g, 2.0, 0.0);
        let w2 = uniform_wind(&g, 0.0, 2.0);
        let cache = OperatorCache::new();
        let a = cache.get_or_assemble(&g, &w1, 0.4, 1.0).unwrap();
        let b = cache.get_or_assemble(&g, &w1, 0.4, 1.0).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        cache.get_or_assemble(&g, &w2, 0.4, 1.0).unwrap();
        assert_eq!(cache.len(), 2);
        cache.retain_winds(&[w2.id()]);
        assert_eq!(cache.len(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn max_principle_and_mass_balance(wx in -5.0..5.0f64, wy in -5.0..5.0f64,
                                          eps in 0.0..2.0f64, cx in 20.0..80.0f64, cy in 20.0..80.0f64) {
            let g = open_grid(100.0, 5.0);
            let w = uniform_wind(&g, wx, wy);
            let ops = assemble(&g, &w, eps, 1.0).unwrap();
            let c0 = gaussian_initial_condition(&g, Point2::new(cx, cy), 8.0).unwrap();
            let (c1, _) = step(&ops, &c0, None, tight()).unwrap();
            prop_assert!(c1.max() <= c0.max() + 1e-12);
            prop_assert!(c1.min() >= -1e-12);
            let lost: f64 = c1.values.iter().zip(&ops.boundary_loss).map(|(c, l)| c * l).sum();
            let s0: f64 = c0.values.iter().sum();
            let s1: f64 = c1.values.iter().sum();
            prop_assert!(((s1 - s0) + lost).abs() <= 1e-8 * s0);
        }

        #[test]
        fn transition_is_linear(alpha in -3.0..3.0f64, seed in 0u64..1000) {
            let g = open_grid(100.0, 10.0);
            let w = uniform_wind(&g, 1.5, 0.5);
            let cache = OperatorCache::new();
            let m = g.num_nodes();
            let c1: Vec<f64> = (0..m).map(|k| (((k as u64 * 31 + seed) % 17) as f64) / 17.0).collect();
            let c2: Vec<f64> = (0..m).map(|k| (((k as u64 * 7 + seed) % 13) as f64) / 13.0).collect();
            let g1 = transition(&g, &cache, &ConcentrationField::new(c1.clone()), &w, 0.8, 1.0, tight()).unwrap().0;
            let g2 = transition(&g, &cache, &ConcentrationField::new(c2.clone()), &w, 0.8, 1.0, tight()).unwrap().0;
            let sum: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| alpha * a + b).collect();
            let gs = transition(&g, &cache, &ConcentrationField::new(sum), &w, 0.8, 1.0, tight()).unwrap().0;
            for k in 0..m {
                prop_assert!((gs.values[k] - (alpha * g1.values[k] + g2.values[k])).abs() < 1e-9);
            }
            let zero = transition(&g, &cache, &ConcentrationField::zeros(m), &w, 0.8, 1.0, tight()).unwrap().0;
            prop_assert!(zero.values.iter().all(|&v| v == 0.0));
        }
    }
}
