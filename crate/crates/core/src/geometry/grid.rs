use serde::{Deserialize, Serialize};

use super::{BBox, DomainSpec, Point2};
use crate::error::{Error, Result};

/// Largest admissible fraction of solid cells.
const MAX_COVERAGE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Fluid,
    Solid,
}

/// Uniform square-cell grid over the bbox with building cells masked out.
///
/// Cells are indexed `(i, j)` with `i` along x; fluid cells are numbered
/// row-major (`j` outer), so the node ordering has bandwidth at most `nx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    nx: usize,
    ny: usize,
    h: f64,
    origin: Point2,
    mask: Vec<CellKind>,
    node_of_cell: Vec<Option<usize>>,
    cell_of_node: Vec<(usize, usize)>,
}

impl Grid {
    /// Rasterizes `domain` with cell size close to `h`.
    ///
    /// `nx = round(width / h)`; the actual cell size is `width / nx` and `ny`
    /// is chosen so cells stay square. A cell is solid iff its center lies in
    /// a building.
    pub fn rasterize(domain: &DomainSpec, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Grid(format!("cell size must be positive, got {h}")));
        }
        let bbox = domain.bbox;
        let nx = (bbox.width() / h).round() as usize;
        if nx == 0 {
            return Err(Error::Grid(format!(
                "cell size {h} exceeds the domain width {}",
                bbox.width()
            )));
        }
        let h_actual = bbox.width() / nx as f64;
        let ny = (bbox.height() / h_actual).round() as usize;
        if ny == 0 {
            return Err(Error::Grid(format!(
                "cell size {h} exceeds the domain height {}",
                bbox.height()
            )));
        }
        if (h_actual - h).abs() > 1e-9 * h || (ny as f64 * h_actual - bbox.height()).abs() > 1e-9 * h {
            log::info!(
                "grid snapped to {nx}x{ny} cells of {h_actual:.6} m (requested {h} m)"
            );
        }

        let bounds: Vec<BBox> = domain.buildings.iter().map(|b| b.bounds()).collect();
        let mut mask = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let c = Point2::new(
                    bbox.min.x + (i as f64 + 0.5) * h_actual,
                    bbox.min.y + (j as f64 + 0.5) * h_actual,
                );
                let solid = domain
                    .buildings
                    .iter()
                    .zip(&bounds)
                    .any(|(b, bb)| bb.contains(c) && b.contains(c));
                mask.push(if solid { CellKind::Solid } else { CellKind::Fluid });
            }
        }
        Self::from_mask(nx, ny, h_actual, bbox.min, mask)
    }

    /// Builds a grid from an explicit cell mask (row-major, `j` outer).
    pub fn from_mask(
        nx: usize,
        ny: usize,
        h: f64,
        origin: Point2,
        mask: Vec<CellKind>,
    ) -> Result<Self> {
        if mask.len() != nx * ny {
            return Err(Error::Grid("mask size does not match nx*ny".into()));
        }
        let mut node_of_cell = vec![None; nx * ny];
        let mut cell_of_node = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                if mask[j * nx + i] == CellKind::Fluid {
                    node_of_cell[j * nx + i] = Some(cell_of_node.len());
                    cell_of_node.push((i, j));
                }
            }
        }
        if cell_of_node.is_empty() {
            return Err(Error::Grid("no fluid cells".into()));
        }
        let solid_fraction = 1.0 - cell_of_node.len() as f64 / (nx * ny) as f64;
        if solid_fraction > MAX_COVERAGE {
            return Err(Error::Grid(format!(
                "buildings cover {:.1}% of the domain",
                100.0 * solid_fraction
            )));
        }
        Ok(Self {
            nx,
            ny,
            h,
            origin,
            mask,
            node_of_cell,
            cell_of_node,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> Point2 {
        self.origin
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(
            self.origin,
            Point2::new(
                self.origin.x + self.nx as f64 * self.h,
                self.origin.y + self.ny as f64 * self.h,
            ),
        )
    }

    /// Number of fluid cells (state dimension).
    pub fn num_nodes(&self) -> usize {
        self.cell_of_node.len()
    }

    pub fn kind(&self, i: usize, j: usize) -> CellKind {
        self.mask[j * self.nx + i]
    }

    pub fn is_fluid(&self, i: usize, j: usize) -> bool {
        self.kind(i, j) == CellKind::Fluid
    }

    /// Like [`Grid::is_fluid`] but accepts signed indices; out of range is not fluid.
    pub fn is_fluid_at(&self, i: isize, j: isize) -> bool {
        i >= 0
            && j >= 0
            && (i as usize) < self.nx
            && (j as usize) < self.ny
            && self.is_fluid(i as usize, j as usize)
    }

    pub fn node(&self, i: usize, j: usize) -> Option<usize> {
        self.node_of_cell[j * self.nx + i]
    }

    pub fn cell(&self, node: usize) -> (usize, usize) {
        self.cell_of_node[node]
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cell_of_node
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point2 {
        Point2::new(
            self.origin.x + (i as f64 + 0.5) * self.h,
            self.origin.y + (j as f64 + 0.5) * self.h,
        )
    }

    pub fn node_center(&self, node: usize) -> Point2 {
        let (i, j) = self.cell(node);
        self.cell_center(i, j)
    }

    /// Cell containing `p`; points on the max edges belong to the last cell.
    pub fn cell_of_point(&self, p: Point2) -> Option<(usize, usize)> {
        let gx = (p.x - self.origin.x) / self.h;
        let gy = (p.y - self.origin.y) / self.h;
        let i = clamp_index(gx, self.nx)?;
        let j = clamp_index(gy, self.ny)?;
        Some((i, j))
    }

    /// Fluid node containing `p`, if any.
    pub fn node_at(&self, p: Point2) -> Option<usize> {
        self.cell_of_point(p).and_then(|(i, j)| self.node(i, j))
    }

    pub fn is_free_point(&self, p: Point2) -> bool {
        self.node_at(p).is_some()
    }

    /// Fluid area, `M h^2`.
    pub fn fluid_area(&self) -> f64 {
        self.num_nodes() as f64 * self.h * self.h
    }
}

fn clamp_index(g: f64, n: usize) -> Option<usize> {
    if !(g >= 0.0 && g <= n as f64) {
        return None;
    }
    Some((g.floor() as usize).min(n - 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polygon;

    fn square_domain(side: f64, building: Option<(f64, f64)>) -> DomainSpec {
        let bbox = BBox::new(Point2::new(0.0, 0.0), Point2::new(side, side));
        let buildings = building
            .map(|(lo, hi)| {
                vec![Polygon::rectangle(Point2::new(lo, lo), Point2::new(hi, hi)).unwrap()]
            })
            .unwrap_or_default();
        DomainSpec::new(bbox, buildings).unwrap()
    }

    /// Counts cells whose center is in the polygon by brute force.
    fn brute_force_solid(domain: &DomainSpec, n: usize, h: f64) -> usize {
        let mut count = 0;
        for j in 0..n {
            for i in 0..n {
                let c = Point2::new((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                if domain.buildings.iter().any(|b| b.contains(c)) {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn obstacle_free() {
        let g = Grid::rasterize(&square_domain(100.0, None), 10.0).unwrap();
        assert_eq!((g.nx(), g.ny(), g.num_nodes()), (10, 10, 100));
    }

    #[test]
    fn centered_building_masks_four_cells() {
        let d = square_domain(100.0, Some((40.0, 60.0)));
        let g = Grid::rasterize(&d, 10.0).unwrap();
        assert_eq!(100 - brute_force_solid(&d, 10, 10.0), 96);
        assert_eq!(g.num_nodes(), 96);
        assert!(!g.is_fluid(4, 4) && !g.is_fluid(5, 5));
        assert!(g.is_fluid(3, 4));
    }

    #[test]
    fn node_index_is_bijection() {
        let d = square_domain(100.0, Some((25.0, 62.0)));
        let g = Grid::rasterize(&d, 7.0).unwrap();
        for k in 0..g.num_nodes() {
            let (i, j) = g.cell(k);
            assert_eq!(g.node(i, j), Some(k));
        }
        let fluid = (0..g.ny())
            .flat_map(|j| (0..g.nx()).map(move |i| (i, j)))
            .filter(|&(i, j)| g.is_fluid(i, j))
            .count();
        assert_eq!(fluid, g.num_nodes());
    }

    #[test]
    fn cell_larger_than_domain() {
        assert!(Grid::rasterize(&square_domain(100.0, None), 250.0).is_err());
    }

    #[test]
    fn snaps_non_divisible_extent() {
        let g = Grid::rasterize(&square_domain(100.0, None), 30.0).unwrap();
        assert_eq!(g.nx(), 3);
        assert!((g.h() - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_full_coverage() {
        let d = square_domain(100.0, Some((0.0, 100.0)));
        assert!(Grid::rasterize(&d, 10.0).is_err());
    }

    #[test]
    fn point_lookup_edges() {
        let g = Grid::rasterize(&square_domain(100.0, None), 10.0).unwrap();
        assert_eq!(g.cell_of_point(Point2::new(100.0, 100.0)), Some((9, 9)));
        assert_eq!(g.cell_of_point(Point2::new(0.0, 0.0)), Some((0, 0)));
        assert_eq!(g.cell_of_point(Point2::new(-0.1, 5.0)), None);
        assert_eq!(g.node_at(Point2::new(15.0, 25.0)), Some(21));
    }
}
