//! Forecast stage: re-solve wind where the belief drifted, then one
//! transport step per member.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::EnsembleState;
use crate::error::Result;
use crate::exec::Execution;
use crate::geometry::Grid;
use crate::sparse::KrylovConfig;
use crate::transport::{step, ConcentrationField, OperatorCache};
use crate::windfield::{needs_recompute, WindConfig, WindField, WindParams, WindSolver};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastConfig {
    /// Diffusion coefficient of the model, m^2/s.
    pub epsilon: f64,
    pub dt: f64,
    pub tr_i: f64,
    pub tr_d: f64,
    pub krylov: KrylovConfig,
    pub execution: Execution,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForecastReport {
    pub resolves: usize,
    pub krylov_iterations: usize,
    pub direct_fallbacks: usize,
    /// Members that kept a stale or unconverged wind field.
    pub degraded: Vec<usize>,
}

struct MemberResult {
    concentration: ConcentrationField,
    solved: Option<(Arc<WindField>, WindParams)>,
    degraded: bool,
    krylov_iterations: usize,
    direct_fallback: bool,
}

/// Wind solver, operator cache and settings shared by every forecast of a run.
pub struct Forecaster<'g> {
    grid: &'g Grid,
    solver: WindSolver<'g>,
    cache: OperatorCache,
    cfg: ForecastConfig,
}

impl<'g> Forecaster<'g> {
    pub fn new(grid: &'g Grid, wind: WindConfig, cfg: ForecastConfig) -> Result<Self> {
        Ok(Self {
            grid,
            solver: WindSolver::new(grid, wind)?,
            cache: OperatorCache::new(),
            cfg,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.grid
    }

    pub fn config(&self) -> &ForecastConfig {
        &self.cfg
    }

    fn wind_for(
        &self,
        params: WindParams,
        cached: Option<&Arc<WindField>>,
        last: Option<WindParams>,
    ) -> Result<(Arc<WindField>, Option<(Arc<WindField>, WindParams)>, bool)> {
        if let (Some(field), Some(last)) = (cached, last) {
            if !needs_recompute(params, last, self.cfg.tr_i, self.cfg.tr_d) {
                return Ok((Arc::clone(field), None, false));
            }
        }
        match self.solver.solve_with_report(params, cached.map(|f| f.as_ref())) {
            Ok((field, report)) if report.converged => {
                let field = Arc::new(field);
                Ok((Arc::clone(&field), Some((field, params)), false))
            }
            Ok((field, report)) => {
                log::warn!(
                    "wind solve for ({:.3}, {:.3}) did not converge (residual {:.2e})",
                    params.intensity(),
                    params.direction(),
                    report.momentum_residual
                );
                match cached {
                    Some(old) => Ok((Arc::clone(old), None, true)),
                    None => {
                        let field = Arc::new(field);
                        Ok((Arc::clone(&field), Some((field, params)), true))
                    }
                }
            }
            Err(e) => match cached {
                Some(old) => {
                    log::warn!("wind solve failed ({e}); keeping the previous field");
                    Ok((Arc::clone(old), None, true))
                }
                None => Err(e),
            },
        }
    }

    fn advance_member(&self, state: &EnsembleState, i: usize) -> Result<MemberResult> {
        let (wind, solved, degraded) =
            self.wind_for(state.params(i), state.winds[i].as_ref(), state.last_ins[i])?;
        let ops = self
            .cache
            .get_or_assemble(self.grid, &wind, self.cfg.epsilon, self.cfg.dt)?;
        let (concentration, stats) = step(&ops, &state.members[i], None, self.cfg.krylov)?;
        Ok(MemberResult {
            concentration,
            solved,
            degraded,
            krylov_iterations: stats.iterations,
            direct_fallback: stats.direct_fallback,
        })
    }

    /// Advances every member one step in place. Wind beliefs are left alone;
    /// only the cached fields and `last_ins` change when a re-solve happens.
    pub fn forecast(&self, state: &mut EnsembleState) -> Result<ForecastReport> {
        let results = self
            .cfg
            .execution
            .map_indexed(state.n(), |i| self.advance_member(state, i));
        let mut report = ForecastReport::default();
        for (i, result) in results.into_iter().enumerate() {
            let r = result?;
            state.members[i] = r.concentration;
            if let Some((field, params)) = r.solved {
                state.winds[i] = Some(field);
                state.last_ins[i] = Some(params);
                report.resolves += 1;
            }
            if r.degraded {
                report.degraded.push(i);
            }
            report.krylov_iterations += r.krylov_iterations;
            report.direct_fallbacks += usize::from(r.direct_fallback);
        }
        let live: Vec<u64> = state.winds.iter().flatten().map(|w| w.id()).collect();
        self.cache.retain_winds(&live);
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, DomainSpec, Point2, Polygon};
    use crate::transport::gaussian_initial_condition;

    fn grid() -> Grid {
        let d = DomainSpec::new(
            BBox::new(Point2::new(0.0, 0.0), Point2::new(200.0, 200.0)),
            vec![Polygon::rectangle(Point2::new(80.0, 80.0), Point2::new(120.0, 120.0)).unwrap()],
        )
        .unwrap();
        Grid::rasterize(&d, 10.0).unwrap()
    }

    fn cfg(execution: Execution) -> ForecastConfig {
        ForecastConfig {
            epsilon: 0.4,
            dt: 1.0,
            tr_i: 0.1,
            tr_d: 0.05,
            krylov: KrylovConfig::default(),
            execution,
        }
    }

    fn state(g: &Grid, w_i: Vec<f64>, w_d: Vec<f64>) -> EnsembleState {
        let c0 = gaussian_initial_condition(g, Point2::new(150.0, 100.0), 20.0).unwrap();
        EnsembleState::new(vec![c0; w_i.len()], w_i, w_d).unwrap()
    }

    #[test]
    fn zero_concentration_stays_zero() {
        let g = grid();
        let f = Forecaster::new(&g, WindConfig::default(), cfg(Execution::Sequential)).unwrap();
        let mut s = state(&g, vec![3.0, 4.0], vec![3.0, 3.3]);
        for c in &mut s.members {
            c.values.iter_mut().for_each(|v| *v = 0.0);
        }
        f.forecast(&mut s).unwrap();
        assert!(s.members.iter().all(|c| c.values.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn gating_skips_unchanged_wind() {
        let g = grid();
        let f = Forecaster::new(&g, WindConfig::default(), cfg(Execution::Sequential)).unwrap();
        let mut s = state(&g, vec![3.0, 3.0], vec![3.0, 3.0]);
        let r1 = f.forecast(&mut s).unwrap();
        assert_eq!(r1.resolves, 2);
        // identical members give identical rows
        assert_eq!(s.members[0], s.members[1]);
        let r2 = f.forecast(&mut s).unwrap();
        assert_eq!(r2.resolves, 0);
        // a small nudge stays inside the thresholds
        s.w_i[0] = 3.1;
        s.w_d[1] = 3.05;
        assert_eq!(f.forecast(&mut s).unwrap().resolves, 0);
        s.w_i[0] = 3.6;
        assert_eq!(f.forecast(&mut s).unwrap().resolves, 1);
        assert_eq!(s.last_ins[0], Some(WindParams::new(3.6, 3.0)));
        assert_eq!(s.w_i, vec![3.6, 3.0]);
    }

    #[test]
    fn execution_modes_agree() {
        let g = grid();
        let mut a = state(&g, vec![2.0, 4.0, 5.0], vec![3.0, 3.5, 4.0]);
        let mut b = a.clone();
        let fa = Forecaster::new(&g, WindConfig::default(), cfg(Execution::Sequential)).unwrap();
        let fb = Forecaster::new(&g, WindConfig::default(), cfg(Execution::Parallel)).unwrap();
        for _ in 0..3 {
            fa.forecast(&mut a).unwrap();
            fb.forecast(&mut b).unwrap();
        }
        assert_eq!(a.members, b.members);
    }
}
