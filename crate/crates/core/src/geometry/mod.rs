//! Building footprints, the obstacle-masked grid and spatial queries on it.

mod domain;
mod grid;
mod traverse;

pub use domain::{load_domain, BBox, DomainSpec, Polygon, Units};
pub use grid::{CellKind, Grid};
pub use traverse::{is_heading_free, traverse, CellVisit, DronePose, Obstruction, Traversal};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Point reached by moving `distance` along `heading` (radians, CCW from +x).
    pub fn offset(self, heading: f64, distance: f64) -> Point2 {
        Point2::new(
            self.x + distance * heading.cos(),
            self.y + distance * heading.sin(),
        )
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(p: [f64; 2]) -> Self {
        Point2::new(p[0], p[1])
    }
}
