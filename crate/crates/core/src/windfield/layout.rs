use crate::geometry::Grid;

use super::{BoundaryMode, WindParams};

/// Treatment of one side of the outer rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    /// Velocity prescribed to the boundary wind.
    Inflow,
    /// Zero traction: zero normal gradient, zero pressure.
    Outflow,
}

/// Status of one staggered face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Face {
    /// Solved for.
    Unknown,
    /// Prescribed value (no-penetration wall or inflow boundary).
    Fixed(f64),
}

/// Edge order used throughout: west, east, south, north.
pub type Edges = [EdgeKind; 4];
pub const WEST: usize = 0;
pub const EAST: usize = 1;
pub const SOUTH: usize = 2;
pub const NORTH: usize = 3;

/// Face classification of the MAC layout for one boundary condition.
#[derive(Debug, Clone)]
pub struct FaceLayout {
    pub nx: usize,
    pub ny: usize,
    pub edges: Edges,
    pub boundary_velocity: (f64, f64),
    pub u_faces: Vec<Face>,
    pub v_faces: Vec<Face>,
    /// Unknown numbering of `u` faces (`usize::MAX` for fixed faces).
    pub u_unknown: Vec<usize>,
    pub v_unknown: Vec<usize>,
    pub n_u: usize,
    pub n_v: usize,
}

pub fn edge_kinds(params: WindParams, mode: BoundaryMode) -> Edges {
    if mode == BoundaryMode::AllDirichlet {
        return [EdgeKind::Inflow; 4];
    }
    let (wx, wy) = params.boundary_velocity();
    let kind = |inward: bool| {
        if inward {
            EdgeKind::Inflow
        } else {
            EdgeKind::Outflow
        }
    };
    [kind(wx > 0.0), kind(wx < 0.0), kind(wy > 0.0), kind(wy < 0.0)]
}

impl FaceLayout {
    pub fn new(grid: &Grid, params: WindParams, mode: BoundaryMode) -> Self {
        let (nx, ny) = (grid.nx(), grid.ny());
        let edges = edge_kinds(params, mode);
        let (wx, wy) = params.boundary_velocity();

        let mut u_faces = Vec::with_capacity((nx + 1) * ny);
        for j in 0..ny {
            for i in 0..=nx {
                let left = i > 0 && grid.is_fluid(i - 1, j);
                let right = i < nx && grid.is_fluid(i, j);
                let face = if i == 0 || i == nx {
                    let (inside, edge) = if i == 0 { (right, WEST) } else { (left, EAST) };
                    match (inside, edges[edge]) {
                        (false, _) => Face::Fixed(0.0),
                        (true, EdgeKind::Inflow) => Face::Fixed(wx),
                        (true, EdgeKind::Outflow) => Face::Unknown,
                    }
                } else if left && right {
                    Face::Unknown
                } else {
                    Face::Fixed(0.0)
                };
                u_faces.push(face);
            }
        }
        let mut v_faces = Vec::with_capacity(nx * (ny + 1));
        for j in 0..=ny {
            for i in 0..nx {
                let below = j > 0 && grid.is_fluid(i, j - 1);
                let above = j < ny && grid.is_fluid(i, j);
                let face = if j == 0 || j == ny {
                    let (inside, edge) = if j == 0 { (above, SOUTH) } else { (below, NORTH) };
                    match (inside, edges[edge]) {
                        (false, _) => Face::Fixed(0.0),
                        (true, EdgeKind::Inflow) => Face::Fixed(wy),
                        (true, EdgeKind::Outflow) => Face::Unknown,
                    }
                } else if below && above {
                    Face::Unknown
                } else {
                    Face::Fixed(0.0)
                };
                v_faces.push(face);
            }
        }
        let number = |faces: &[Face]| {
            let mut n = 0;
            let idx = faces
                .iter()
                .map(|f| match f {
                    Face::Unknown => {
                        n += 1;
                        n - 1
                    }
                    Face::Fixed(_) => usize::MAX,
                })
                .collect::<Vec<_>>();
            (idx, n)
        };
        let (u_unknown, n_u) = number(&u_faces);
        let (v_unknown, n_v) = number(&v_faces);
        Self {
            nx,
            ny,
            edges,
            boundary_velocity: (wx, wy),
            u_faces,
            v_faces,
            u_unknown,
            v_unknown,
            n_u,
            n_v,
        }
    }

    pub fn u_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn v_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
}
