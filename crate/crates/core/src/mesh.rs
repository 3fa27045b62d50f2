//! Uniform simplicial meshes of the unit interval and the unit square.
//!
//! Both builders produce structured, shape-regular, quasi-uniform meshes:
//! the interval is split into `n` equal segments, the square into `n×n`
//! cells each cut into two triangles along the lower-left → upper-right
//! diagonal. The fixed conventions make every run bit-reproducible.
//!
//! A `Mesh` is immutable after construction and safe to share across
//! threads.

use std::io::{self, Write};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::invalid;
use crate::Result;

/// Spatial point. 1D meshes use only the first coordinate (second is 0).
pub type Point = [f64; 2];

static NEXT_MESH_ID: AtomicU64 = AtomicU64::new(1);

/// Mesh cell: a segment in 1D, a triangle in 2D.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Segment([usize; 2]),
    Triangle([usize; 3]),
}

impl Cell {
    pub fn vertices(&self) -> &[usize] {
        match self {
            Cell::Segment(v) => v,
            Cell::Triangle(v) => v,
        }
    }
}

/// Simplicial triangulation of Ω = (0,1) or Ω = (0,1)².
#[derive(Clone, Debug)]
pub struct Mesh {
    id: u64,
    dim: usize,
    /// Subdivisions per axis.
    n: usize,
    nodes: Vec<Point>,
    cells: Vec<Cell>,
    boundary: Vec<bool>,
    /// Maximal element diameter.
    h: f64,
}

impl Mesh {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Grid resolution (subdivisions per axis).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> Point {
        self.nodes[i]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    /// Maximal element diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Indices of nodes not flagged as boundary, in ascending order.
    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.num_nodes()).filter(|&i| !self.boundary[i]).collect()
    }

    /// Length / area of a cell.
    pub fn cell_measure(&self, cell: &Cell) -> f64 {
        match cell {
            Cell::Segment([a, b]) => (self.nodes[*b][0] - self.nodes[*a][0]).abs(),
            Cell::Triangle([a, b, c]) => {
                let pa = self.nodes[*a];
                let pb = self.nodes[*b];
                let pc = self.nodes[*c];
                0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1])).abs()
            }
        }
    }

    /// Diameter (longest edge) of a cell.
    pub fn cell_diameter(&self, cell: &Cell) -> f64 {
        let vs = cell.vertices();
        let mut d: f64 = 0.0;
        for i in 0..vs.len() {
            for j in i + 1..vs.len() {
                let a = self.nodes[vs[i]];
                let b = self.nodes[vs[j]];
                d = d.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        d
    }

    /// Index of the cell containing `p` (points outside Ω are clamped to it).
    pub fn locate_cell(&self, p: Point) -> usize {
        let n = self.n as f64;
        match self.dim {
            1 => {
                let i = (p[0] * n).floor() as isize;
                i.clamp(0, self.n as isize - 1) as usize
            }
            _ => {
                let i = ((p[0] * n).floor() as isize).clamp(0, self.n as isize - 1) as usize;
                let j = ((p[1] * n).floor() as isize).clamp(0, self.n as isize - 1) as usize;
                let xi = p[0] * n - i as f64;
                let eta = p[1] * n - j as f64;
                // lower-right triangle of the cell iff xi >= eta
                2 * (j * self.n + i) + usize::from(xi < eta)
            }
        }
    }

    /// Plain-text node/element listing for debugging.
    pub fn dump<W: Write>(&self, w: &mut W) -> io::Result<()> {
        for (i, p) in self.nodes.iter().enumerate() {
            if self.dim == 1 {
                writeln!(w, "{} {}", i, p[0])?;
            } else {
                writeln!(w, "{} {} {}", i, p[0], p[1])?;
            }
        }
        for (k, cell) in self.cells.iter().enumerate() {
            match cell {
                Cell::Segment([a, b]) => writeln!(w, "{} {} {}", k, a, b)?,
                Cell::Triangle([a, b, c]) => writeln!(w, "{} {} {} {}", k, a, b, c)?,
            }
        }
        Ok(())
    }
}

/// Uniform mesh of (0,1) with `n` segments; nodes i/n, endpoints flagged boundary.
pub fn build_interval_mesh(n: usize) -> Result<Mesh> {
    if n < 2 {
        return invalid(format!("interval mesh needs n >= 2, got {n}"));
    }
    let nodes: Vec<Point> = (0..=n).map(|i| [i as f64 / n as f64, 0.0]).collect();
    let cells = (0..n).map(|i| Cell::Segment([i, i + 1])).collect();
    let mut boundary = vec![false; n + 1];
    boundary[0] = true;
    boundary[n] = true;
    Ok(Mesh {
        id: NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed),
        dim: 1,
        n,
        nodes,
        cells,
        boundary,
        h: 1.0 / n as f64,
    })
}

/// Uniform triangulation of (0,1)² with `2n²` triangles.
///
/// Each grid cell is split along the lower-left → upper-right diagonal;
/// node (i,j) has index `j (n+1) + i`.
pub fn build_unit_square_mesh(n: usize) -> Result<Mesh> {
    if n < 2 {
        return invalid(format!("unit square mesh needs n >= 2, got {n}"));
    }
    let m = n + 1;
    let mut nodes = Vec::with_capacity(m * m);
    let mut boundary = Vec::with_capacity(m * m);
    for j in 0..m {
        for i in 0..m {
            nodes.push([i as f64 / n as f64, j as f64 / n as f64]);
            boundary.push(i == 0 || i == n || j == 0 || j == n);
        }
    }
    let mut cells = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let ll = j * m + i;
            let lr = ll + 1;
            let ul = ll + m;
            let ur = ul + 1;
            // counter-clockwise; diagonal ll -> ur shared by both triangles
            cells.push(Cell::Triangle([ll, lr, ur]));
            cells.push(Cell::Triangle([ll, ur, ul]));
        }
    }
    Ok(Mesh {
        id: NEXT_MESH_ID.fetch_add(1, Ordering::Relaxed),
        dim: 2,
        n,
        nodes,
        cells,
        boundary,
        h: std::f64::consts::SQRT_2 / n as f64,
    })
}

/// Exact Euclidean distance from a node to ∂Ω (unit interval / unit square).
pub fn boundary_distance(mesh: &Mesh, node: usize) -> f64 {
    let p = mesh.nodes[node];
    if mesh.dim == 1 {
        p[0].min(1.0 - p[0]).max(0.0)
    } else {
        p[0].min(1.0 - p[0]).min(p[1]).min(1.0 - p[1]).max(0.0)
    }
}

/// Nodes at distance ≥ `margin` from ∂Ω.
#[derive(Clone, Debug)]
pub struct InteriorRegion {
    pub margin: f64,
    pub node_mask: Vec<bool>,
}

/// Selects the nodes with `boundary_distance >= margin`; requires `0 <= margin < 0.5`.
pub fn interior_region(mesh: &Mesh, margin: f64) -> Result<InteriorRegion> {
    if !(0.0..0.5).contains(&margin) {
        return invalid(format!("interior margin must lie in [0, 0.5), got {margin}"));
    }
    let node_mask = (0..mesh.num_nodes())
        .map(|i| boundary_distance(mesh, i) >= margin)
        .collect();
    Ok(InteriorRegion { margin, node_mask })
}
