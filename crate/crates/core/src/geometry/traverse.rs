use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{Grid, Point2};
use crate::error::{Error, Result};

/// Position, speed and heading of the mobile observer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DronePose {
    pub position: Point2,
    pub speed: f64,
    heading: f64,
}

impl DronePose {
    pub fn new(grid: &Grid, position: Point2, speed: f64, heading: f64) -> Result<Self> {
        if !grid.is_free_point(position) {
            return Err(Error::NotInFluid {
                x: position.x,
                y: position.y,
            });
        }
        Ok(Self {
            position,
            speed,
            heading: heading.rem_euclid(TAU),
        })
    }

    /// Heading in `[0, 2pi)`.
    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn with_heading(mut self, heading: f64) -> Self {
        self.heading = heading.rem_euclid(TAU);
        self
    }
}

/// One cell crossed by a segment and the segment length inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellVisit {
    pub node: usize,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Obstruction {
    /// The segment enters a solid cell.
    Solid { cell: (usize, usize) },
    /// The segment leaves the gridded domain.
    OutOfBounds,
}

/// Fluid cells crossed by a segment, in travel order. When an obstruction is
/// hit, `visits` stops at the last free cell before it.
#[derive(Debug, Clone, PartialEq)]
pub struct Traversal {
    pub visits: Vec<CellVisit>,
    pub obstruction: Option<Obstruction>,
}

impl Traversal {
    pub fn nodes(&self) -> Vec<usize> {
        self.visits.iter().map(|v| v.node).collect()
    }

    pub fn last_free(&self) -> Option<usize> {
        self.visits.last().map(|v| v.node)
    }

    pub fn is_clear(&self) -> bool {
        self.obstruction.is_none()
    }
}

/// Starting cell index along one axis. A point on a grid line belongs to the
/// cell the segment moves into.
fn start_index(g: f64, d: f64, n: usize) -> Option<isize> {
    let mut c = g.floor();
    if g == c && d < 0.0 {
        c -= 1.0;
    }
    if d == 0.0 && c == n as f64 && g == n as f64 {
        c -= 1.0;
    }
    if c < 0.0 || c >= n as f64 {
        return None;
    }
    Some(c as isize)
}

/// Grid-coordinate step setup for one axis: (step, t at first crossing, t between crossings).
fn axis_setup(g: f64, d: f64, cell: isize) -> (isize, f64, f64) {
    if d > 0.0 {
        (1, ((cell + 1) as f64 - g) / d, 1.0 / d)
    } else if d < 0.0 {
        (-1, (cell as f64 - g) / d, -1.0 / d)
    } else {
        (0, f64::INFINITY, f64::INFINITY)
    }
}

/// Walks the cells crossed by the segment `from -> to` (Amanatides-Woo).
/// When the segment passes exactly through a cell corner the x step is taken
/// first, so the corner cell appears with zero length.
pub fn traverse(grid: &Grid, from: Point2, to: Point2) -> Traversal {
    let h = grid.h();
    let o = grid.origin();
    let (gx, gy) = ((from.x - o.x) / h, (from.y - o.y) / h);
    let (dx, dy) = ((to.x - from.x) / h, (to.y - from.y) / h);
    let seg_len = from.distance(to);

    let mut visits = Vec::new();
    let (Some(mut i), Some(mut j)) = (start_index(gx, dx, grid.nx()), start_index(gy, dy, grid.ny()))
    else {
        return Traversal {
            visits,
            obstruction: Some(Obstruction::OutOfBounds),
        };
    };
    let (step_x, mut t_max_x, t_delta_x) = axis_setup(gx, dx, i);
    let (step_y, mut t_max_y, t_delta_y) = axis_setup(gy, dy, j);
    let mut t = 0.0_f64;

    loop {
        if !grid.is_fluid_at(i, j) {
            let obstruction = if i < 0 || j < 0 || i >= grid.nx() as isize || j >= grid.ny() as isize {
                Obstruction::OutOfBounds
            } else {
                Obstruction::Solid {
                    cell: (i as usize, j as usize),
                }
            };
            return Traversal {
                visits,
                obstruction: Some(obstruction),
            };
        }
        let node = grid.node(i as usize, j as usize).expect("fluid cell has a node");
        let t_exit = t_max_x.min(t_max_y).min(1.0);
        visits.push(CellVisit {
            node,
            length: (t_exit - t).max(0.0) * seg_len,
        });
        if t_exit >= 1.0 {
            break;
        }
        t = t_exit;
        if t_max_x <= t_max_y {
            i += step_x;
            t_max_x += t_delta_x;
        } else {
            j += step_y;
            t_max_y += t_delta_y;
        }
    }
    Traversal {
        visits,
        obstruction: None,
    }
}

/// True iff moving `distance` along `heading` from the pose stays in fluid
/// cells inside the bbox.
pub fn is_heading_free(grid: &Grid, pose: &DronePose, heading: f64, distance: f64) -> bool {
    let to = pose.position.offset(heading, distance);
    traverse(grid, pose.position, to).is_clear()
}
