//! Continuous piecewise linear (P1) finite element machinery.
//!
//! The state space is V_h0 (zero trace), the parameter space is V_h. All
//! P1·P1 and P1·P1·P1 element integrals are evaluated in closed form;
//! general source terms use quadrature exact for cubics (3-point Gauss on
//! segments, a 4-point degree-3 rule on triangles).

pub mod sparse;

pub use sparse::{solve_spd, SparseMatrix};

use crate::error::invalid;
use crate::mesh::{Cell, Mesh, Point};
use crate::Result;

/// Finite element space tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    /// V_h: all nodal degrees of freedom.
    Full,
    /// V_h0: vanishing on boundary nodes.
    ZeroTrace,
}

/// Nodal coefficient vector over the P1 basis of a mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct FeFunction {
    values: Vec<f64>,
    space: Space,
    mesh_id: u64,
}

impl FeFunction {
    pub fn new(mesh: &Mesh, values: Vec<f64>, space: Space) -> Result<Self> {
        if values.len() != mesh.num_nodes() {
            return invalid(format!(
                "FeFunction has {} values for a mesh with {} nodes",
                values.len(),
                mesh.num_nodes()
            ));
        }
        if space == Space::ZeroTrace {
            for (i, &v) in values.iter().enumerate() {
                if mesh.is_boundary(i) && v != 0.0 {
                    return invalid(format!(
                        "zero-trace function has value {v} at boundary node {i}"
                    ));
                }
            }
        }
        Ok(FeFunction { values, space, mesh_id: mesh.id() })
    }

    pub fn zeros(mesh: &Mesh, space: Space) -> Self {
        FeFunction { values: vec![0.0; mesh.num_nodes()], space, mesh_id: mesh.id() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        if self.mesh_id != mesh.id() {
            return invalid("FeFunction does not belong to this mesh");
        }
        Ok(())
    }
}

/// Box constraint c0 ≤ q ≤ c1 of the admissible set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxBounds {
    pub lo: f64,
    pub hi: f64,
}

impl BoxBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo >= 0.0 && lo < hi) {
            return invalid(format!("box bounds need 0 <= c0 < c1, got ({lo}, {hi})"));
        }
        Ok(BoxBounds { lo, hi })
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Potential coefficient: a V_h function constrained to a box nodally.
#[derive(Clone, Debug)]
pub struct Potential {
    fe: FeFunction,
    bounds: BoxBounds,
}

impl Potential {
    pub fn new(fe: FeFunction, bounds: BoxBounds) -> Result<Self> {
        for (i, &v) in fe.values().iter().enumerate() {
            if !bounds.contains(v) {
                return invalid(format!(
                    "potential value {v} at node {i} violates box [{}, {}]",
                    bounds.lo, bounds.hi
                ));
            }
        }
        Ok(Potential { fe, bounds })
    }

    /// Clamps the nodal values into the box instead of rejecting them.
    pub fn clamped(mesh: &Mesh, mut values: Vec<f64>, bounds: BoxBounds) -> Result<Self> {
        for v in values.iter_mut() {
            *v = bounds.clamp(*v);
        }
        Ok(Potential { fe: FeFunction::new(mesh, values, Space::Full)?, bounds })
    }

    pub fn constant(mesh: &Mesh, value: f64, bounds: BoxBounds) -> Result<Self> {
        if !bounds.contains(value) {
            return invalid(format!("constant potential {value} outside box"));
        }
        Ok(Potential {
            fe: FeFunction { values: vec![value; mesh.num_nodes()], space: Space::Full, mesh_id: mesh.id() },
            bounds,
        })
    }

    /// Nodal interpolation of a scalar field, validated against the box.
    pub fn from_field(mesh: &Mesh, g: impl Fn(Point) -> f64, bounds: BoxBounds) -> Result<Self> {
        Potential::new(interpolate(mesh, g), bounds)
    }

    pub fn fe(&self) -> &FeFunction {
        &self.fe
    }

    pub fn values(&self) -> &[f64] {
        self.fe.values()
    }

    pub fn bounds(&self) -> BoxBounds {
        self.bounds
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        self.fe.check_mesh(mesh)
    }
}

// ---------------------------------------------------------------------------
// local element integrals (exact)
// ---------------------------------------------------------------------------

/// ∫₀¹ tᵃ(1-t)ᵇ dt = a! b! / (a+b+1)!; the cubic cases used below.
const SEG_TRIPLE: [f64; 4] = [1.0 / 4.0, 1.0 / 12.0, 1.0 / 12.0, 1.0 / 4.0];

fn seg_length(mesh: &Mesh, v: &[usize; 2]) -> f64 {
    (mesh.node(v[1])[0] - mesh.node(v[0])[0]).abs()
}

struct TriGeom {
    area: f64,
    /// gradient of each barycentric basis function
    grad: [[f64; 2]; 3],
}

fn tri_geom(mesh: &Mesh, v: &[usize; 3]) -> TriGeom {
    let p: [Point; 3] = [mesh.node(v[0]), mesh.node(v[1]), mesh.node(v[2])];
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let area = 0.5 * det.abs();
    let mut grad = [[0.0; 2]; 3];
    for i in 0..3 {
        let a = p[(i + 1) % 3];
        let b = p[(i + 2) % 3];
        grad[i] = [(a[1] - b[1]) / det, (b[0] - a[0]) / det];
    }
    TriGeom { area, grad }
}

/// ∫_T λ_i λ_j λ_k over a triangle of area `a`.
fn tri_triple(a: f64, i: usize, j: usize, k: usize) -> f64 {
    if i == j && j == k {
        a / 10.0
    } else if i == j || j == k || i == k {
        a / 30.0
    } else {
        a / 60.0
    }
}

/// ∫ φ_i φ_j φ_k over a segment of length `len` (indices in {0,1}).
fn seg_triple(len: f64, i: usize, j: usize, k: usize) -> f64 {
    len * SEG_TRIPLE[i + j + k]
}

// ---------------------------------------------------------------------------
// quadrature (degree-3 exact) for general source terms
// ---------------------------------------------------------------------------

/// 3-point Gauss rule on [0,1]: (node, weight).
pub(crate) fn gauss3_unit() -> [(f64, f64); 3] {
    let s = (0.6_f64).sqrt() / 2.0;
    [(0.5 - s, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.5 + s, 5.0 / 18.0)]
}

/// Degree-3 exact 4-point rule on the reference triangle, barycentric + weight.
pub(crate) fn tri_quad4() -> [([f64; 3], f64); 4] {
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], -27.0 / 48.0),
        ([0.6, 0.2, 0.2], 25.0 / 48.0),
        ([0.2, 0.6, 0.2], 25.0 / 48.0),
        ([0.2, 0.2, 0.6], 25.0 / 48.0),
    ]
}

// ---------------------------------------------------------------------------
// assembly
// ---------------------------------------------------------------------------

/// Stiffness matrix A[i][j] = ∫ ∇φ_i · ∇φ_j (exact).
pub fn assemble_stiffness(mesh: &Mesh) -> SparseMatrix {
    let mut triplets = Vec::new();
    for cell in mesh.cells() {
        match cell {
            Cell::Segment(v) => {
                let k = 1.0 / seg_length(mesh, v);
                for a in 0..2 {
                    for b in 0..2 {
                        let sign = if a == b { 1.0 } else { -1.0 };
                        triplets.push((v[a], v[b], sign * k));
                    }
                }
            }
            Cell::Triangle(v) => {
                let g = tri_geom(mesh, v);
                for a in 0..3 {
                    for b in 0..3 {
                        let val = g.area
                            * (g.grad[a][0] * g.grad[b][0] + g.grad[a][1] * g.grad[b][1]);
                        triplets.push((v[a], v[b], val));
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(mesh.num_nodes(), &triplets)
}

/// Mass matrix M[i][j] = ∫ φ_i φ_j (exact).
pub fn assemble_mass(mesh: &Mesh) -> SparseMatrix {
    let mut triplets = Vec::new();
    for cell in mesh.cells() {
        match cell {
            Cell::Segment(v) => {
                let len = seg_length(mesh, v);
                for a in 0..2 {
                    for b in 0..2 {
                        let val = if a == b { len / 3.0 } else { len / 6.0 };
                        triplets.push((v[a], v[b], val));
                    }
                }
            }
            Cell::Triangle(v) => {
                let g = tri_geom(mesh, v);
                for a in 0..3 {
                    for b in 0..3 {
                        let val = if a == b { g.area / 6.0 } else { g.area / 12.0 };
                        triplets.push((v[a], v[b], val));
                    }
                }
            }
        }
    }
    SparseMatrix::from_triplets(mesh.num_nodes(), &triplets)
}

/// Writes the weighted-mass values ∫ q_h φ_i φ_j into `out` (pattern of the
/// mass matrix); the closed-form P1 triple products make this exact.
pub(crate) fn weighted_mass_values(mesh: &Mesh, q: &[f64], out: &mut SparseMatrix) {
    for v in out.values_mut() {
        *v = 0.0;
    }
    for cell in mesh.cells() {
        match cell {
            Cell::Segment(v) => {
                let len = seg_length(mesh, v);
                for a in 0..2 {
                    for b in 0..2 {
                        let mut val = 0.0;
                        for c in 0..2 {
                            val += q[v[c]] * seg_triple(len, a, b, c);
                        }
                        out.scatter_add(v[a], v[b], val);
                    }
                }
            }
            Cell::Triangle(v) => {
                let g = tri_geom(mesh, v);
                for a in 0..3 {
                    for b in 0..3 {
                        let mut val = 0.0;
                        for c in 0..3 {
                            val += q[v[c]] * tri_triple(g.area, a, b, c);
                        }
                        out.scatter_add(v[a], v[b], val);
                    }
                }
            }
        }
    }
}

/// Weighted mass matrix Mq[i][j] = ∫ q_h φ_i φ_j with q_h piecewise linear.
pub fn assemble_weighted_mass(mesh: &Mesh, q: &Potential) -> Result<SparseMatrix> {
    q.check_mesh(mesh)?;
    let mut out = assemble_mass(mesh).zero_like();
    weighted_mass_values(mesh, q.values(), &mut out);
    Ok(out)
}

/// Load vector F[i] = ∫ f φ_i via the degree-3 rules.
pub fn assemble_load(mesh: &Mesh, f: impl Fn(Point) -> f64) -> Vec<f64> {
    let mut load = vec![0.0; mesh.num_nodes()];
    for cell in mesh.cells() {
        match cell {
            Cell::Segment(v) => {
                let x0 = mesh.node(v[0])[0];
                let len = mesh.node(v[1])[0] - x0;
                for (t, w) in gauss3_unit() {
                    let fx = f([x0 + t * len, 0.0]);
                    load[v[0]] += w * fx * (1.0 - t) * len.abs();
                    load[v[1]] += w * fx * t * len.abs();
                }
            }
            Cell::Triangle(v) => {
                let g = tri_geom(mesh, v);
                let p: [Point; 3] = [mesh.node(v[0]), mesh.node(v[1]), mesh.node(v[2])];
                for (lam, w) in tri_quad4() {
                    let x = [
                        lam[0] * p[0][0] + lam[1] * p[1][0] + lam[2] * p[2][0],
                        lam[0] * p[0][1] + lam[1] * p[1][1] + lam[2] * p[2][1],
                    ];
                    let fx = f(x);
                    for a in 0..3 {
                        load[v[a]] += w * fx * lam[a] * g.area;
                    }
                }
            }
        }
    }
    load
}

/// Vector w with w_k = ∫ φ_k u_h p_h (exact P1 triple products).
pub(crate) fn triple_product_vector(mesh: &Mesh, u: &[f64], p: &[f64], out: &mut [f64]) {
    for cell in mesh.cells() {
        match cell {
            Cell::Segment(v) => {
                let len = seg_length(mesh, v);
                for k in 0..2 {
                    let mut s = 0.0;
                    for a in 0..2 {
                        for b in 0..2 {
                            s += u[v[a]] * p[v[b]] * seg_triple(len, k, a, b);
                        }
                    }
                    out[v[k]] += s;
                }
            }
            Cell::Triangle(v) => {
                let g = tri_geom(mesh, v);
                for k in 0..3 {
                    let mut s = 0.0;
                    for a in 0..3 {
                        for b in 0..3 {
                            s += u[v[a]] * p[v[b]] * tri_triple(g.area, k, a, b);
                        }
                    }
                    out[v[k]] += s;
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// interpolation, projection, evaluation
// ---------------------------------------------------------------------------

/// Lagrange interpolation: nodal values g(x_i), in V_h.
pub fn interpolate(mesh: &Mesh, g: impl Fn(Point) -> f64) -> FeFunction {
    FeFunction {
        values: mesh.nodes().iter().map(|&p| g(p)).collect(),
        space: Space::Full,
        mesh_id: mesh.id(),
    }
}

/// Evaluates a P1 function at an arbitrary point of Ω.
pub fn eval_at(mesh: &Mesh, fe: &FeFunction, p: Point) -> Result<f64> {
    fe.check_mesh(mesh)?;
    let cell = &mesh.cells()[mesh.locate_cell(p)];
    let v = fe.values();
    Ok(match cell {
        Cell::Segment([a, b]) => {
            let xa = mesh.node(*a)[0];
            let xb = mesh.node(*b)[0];
            let t = ((p[0] - xa) / (xb - xa)).clamp(0.0, 1.0);
            v[*a] * (1.0 - t) + v[*b] * t
        }
        Cell::Triangle(vs) => {
            let pa = mesh.node(vs[0]);
            let pb = mesh.node(vs[1]);
            let pc = mesh.node(vs[2]);
            let det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
            let l1 = ((pb[0] - p[0]) * (pc[1] - p[1]) - (pc[0] - p[0]) * (pb[1] - p[1])) / det;
            let l2 = ((p[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (p[1] - pa[1])) / det;
            let l3 = 1.0 - l1 - l2;
            v[vs[0]] * l1 + v[vs[1]] * l2 + v[vs[2]] * l3
        }
    })
}

/// L²-projection onto V_h0: solves the interior mass system, zero on ∂Ω.
pub fn l2_project(mesh: &Mesh, g: impl Fn(Point) -> f64) -> Result<FeFunction> {
    let load = assemble_load(mesh, g);
    let mass = assemble_mass(mesh);
    let interior = mesh.interior_nodes();
    let (mass_int, _) = mass.restrict(&interior);
    let b: Vec<f64> = interior.iter().map(|&i| load[i]).collect();
    let x = solve_spd(&mass_int, &b)?;
    let mut values = vec![0.0; mesh.num_nodes()];
    for (k, &i) in interior.iter().enumerate() {
        values[i] = x[k];
    }
    Ok(FeFunction { values, space: Space::ZeroTrace, mesh_id: mesh.id() })
}

/// L²-projection of a P1 function given on another mesh.
pub fn l2_project_fe(mesh: &Mesh, from_mesh: &Mesh, fe: &FeFunction) -> Result<FeFunction> {
    fe.check_mesh(from_mesh)?;
    l2_project(mesh, |p| eval_at(from_mesh, fe, p).unwrap())
}

/// Discrete L² norm √(vᵀ M v).
pub fn norm_l2(mesh: &Mesh, v: &FeFunction) -> Result<f64> {
    v.check_mesh(mesh)?;
    let mass = assemble_mass(mesh);
    Ok(mass.bilinear(v.values(), v.values()).max(0.0).sqrt())
}

/// H¹ seminorm √(vᵀ A v).
pub fn seminorm_h1(mesh: &Mesh, v: &FeFunction) -> Result<f64> {
    v.check_mesh(mesh)?;
    let stiff = assemble_stiffness(mesh);
    Ok(stiff.bilinear(v.values(), v.values()).max(0.0).sqrt())
}

// ---------------------------------------------------------------------------
// cached assembly shared by the forward and inverse solvers
// ---------------------------------------------------------------------------

/// Per-mesh assembly cache: full and interior-restricted stiffness and mass,
/// plus scratch for the potential-weighted mass. The interior restriction
/// implements Dirichlet elimination; all restricted matrices share one
/// sparsity pattern so systems combine by value arithmetic alone.
pub(crate) struct FemSystem<'m> {
    pub mesh: &'m Mesh,
    pub stiffness: SparseMatrix,
    pub mass: SparseMatrix,
    pub interior: Vec<usize>,
    pub stiffness_int: SparseMatrix,
    pub mass_int: SparseMatrix,
    gather: Vec<usize>,
    weighted_scratch: SparseMatrix,
}

impl<'m> FemSystem<'m> {
    pub fn new(mesh: &'m Mesh) -> Self {
        let stiffness = assemble_stiffness(mesh);
        let mass = assemble_mass(mesh);
        let interior = mesh.interior_nodes();
        let (stiffness_int, gather_a) = stiffness.restrict(&interior);
        let (mass_int, gather) = mass.restrict(&interior);
        debug_assert!(stiffness_int.same_pattern(&mass_int));
        debug_assert_eq!(gather_a, gather);
        let weighted_scratch = mass.zero_like();
        FemSystem { mesh, stiffness, mass, interior, stiffness_int, mass_int, gather, weighted_scratch }
    }

    /// Interior-restricted weighted mass ∫ q φ_i φ_j.
    pub fn weighted_mass_int(&mut self, q: &[f64]) -> SparseMatrix {
        weighted_mass_values(self.mesh, q, &mut self.weighted_scratch);
        let mut out = self.mass_int.zero_like();
        out.gather_values(self.weighted_scratch.values(), &self.gather);
        out
    }

    pub fn restrict_vec(&self, full: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&i| full[i]).collect()
    }

    pub fn extend_vec(&self, int: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.mesh.num_nodes()];
        for (k, &i) in self.interior.iter().enumerate() {
            full[i] = int[k];
        }
        full
    }

    pub fn zero_trace(&self, values: Vec<f64>) -> FeFunction {
        debug_assert_eq!(values.len(), self.mesh.num_nodes());
        FeFunction { values, space: Space::ZeroTrace, mesh_id: self.mesh.id() }
    }

    /// ‖v‖²_{L²} via the full mass matrix.
    pub fn l2_sq(&self, v: &[f64]) -> f64 {
        self.mass.bilinear(v, v).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_interval_mesh, build_unit_square_mesh};
    use proptest::prelude::*;

    const PI: f64 = std::f64::consts::PI;

    /// 10-point Gauss-Legendre rule on [0,1] (oracle-grade quadrature).
    fn gauss10_unit() -> [(f64, f64); 10] {
        let x = [
            0.148_874_338_981_631_2,
            0.433_395_394_129_247_2,
            0.679_409_568_299_024_4,
            0.865_063_366_688_984_5,
            0.973_906_528_517_171_7,
        ];
        let w = [
            0.295_524_224_714_752_9,
            0.269_266_719_309_996_3,
            0.219_086_362_515_982_0,
            0.149_451_349_150_580_6,
            0.066_671_344_308_688_14,
        ];
        let mut rule = [(0.0, 0.0); 10];
        for i in 0..5 {
            rule[2 * i] = (0.5 * (1.0 - x[i]), 0.5 * w[i]);
            rule[2 * i + 1] = (0.5 * (1.0 + x[i]), 0.5 * w[i]);
        }
        rule
    }

    #[test]
    fn stiffness_1d_hand_values() {
        let mesh = build_interval_mesh(2).unwrap();
        let a = assemble_stiffness(&mesh);
        // h = 0.5: interior diagonal 2/h = 4, off-diagonals -1/h = -2
        assert!((a.get(1, 1) - 4.0).abs() < 1e-13);
        assert!((a.get(1, 0) + 2.0).abs() < 1e-13);
        assert!((a.get(1, 2) + 2.0).abs() < 1e-13);
    }

    #[test]
    fn stiffness_row_sums_vanish() {
        for mesh in [build_interval_mesh(5).unwrap(), build_unit_square_mesh(3).unwrap()] {
            let a = assemble_stiffness(&mesh);
            let ones = vec![1.0; mesh.num_nodes()];
            for s in a.matvec_alloc(&ones) {
                assert!(s.abs() < 1e-13);
            }
        }
    }

    #[test]
    fn stiffness_2d_interior_diagonal() {
        // structured right-triangle mesh reproduces the 5-point stencil: diag 4
        let mesh = build_unit_square_mesh(2).unwrap();
        let a = assemble_stiffness(&mesh);
        let center = 1 * 3 + 1;
        assert!((a.get(center, center) - 4.0).abs() < 1e-13);
    }

    #[test]
    fn mass_total_and_hand_values() {
        for mesh in [build_interval_mesh(4).unwrap(), build_unit_square_mesh(3).unwrap()] {
            let m = assemble_mass(&mesh);
            let ones = vec![1.0; mesh.num_nodes()];
            assert!((m.bilinear(&ones, &ones) - 1.0).abs() < 1e-13);
        }
        let mesh = build_interval_mesh(2).unwrap();
        let m = assemble_mass(&mesh);
        assert!((m.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.get(1, 0) - 1.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn assembled_matrices_symmetric() {
        for mesh in [build_interval_mesh(6).unwrap(), build_unit_square_mesh(4).unwrap()] {
            assert_eq!(assemble_mass(&mesh).symmetry_defect(), 0.0);
            assert!(assemble_stiffness(&mesh).symmetry_defect() <= 1e-12);
        }
    }

    #[test]
    fn weighted_mass_constant_weight() {
        let mesh = build_unit_square_mesh(3).unwrap();
        let bounds = BoxBounds::new(0.0, 10.0).unwrap();
        let q1 = Potential::constant(&mesh, 1.0, bounds).unwrap();
        let m = assemble_mass(&mesh);
        let mq = assemble_weighted_mass(&mesh, &q1).unwrap();
        for (a, b) in m.values().iter().zip(mq.values()) {
            assert!((a - b).abs() < 1e-14);
        }
        let c = 3.5;
        let qc = Potential::constant(&mesh, c, bounds).unwrap();
        let mqc = assemble_weighted_mass(&mesh, &qc).unwrap();
        for (a, b) in m.values().iter().zip(mqc.values()) {
            assert!((c * a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn weighted_mass_matches_quadrature_oracle() {
        // random-ish q on 1D n=4 vs 10-point Gauss per element
        let mesh = build_interval_mesh(4).unwrap();
        let bounds = BoxBounds::new(0.0, 10.0).unwrap();
        let qv: Vec<f64> = (0..mesh.num_nodes()).map(|i| 0.5 + ((i * 37 + 11) % 17) as f64 / 5.0).collect();
        let q = Potential::new(FeFunction::new(&mesh, qv.clone(), Space::Full).unwrap(), bounds).unwrap();
        let mq = assemble_weighted_mass(&mesh, &q).unwrap();

        let n = mesh.num_nodes();
        let mut oracle = vec![vec![0.0; n]; n];
        for cell in mesh.cells() {
            let (a, b) = match cell {
                Cell::Segment(v) => (v[0], v[1]),
                _ => unreachable!(),
            };
            let xa = mesh.node(a)[0];
            let len = mesh.node(b)[0] - xa;
            for (t, w) in gauss10_unit() {
                let phi = [1.0 - t, t];
                let qx = qv[a] * phi[0] + qv[b] * phi[1];
                let idx = [a, b];
                for i in 0..2 {
                    for j in 0..2 {
                        oracle[idx[i]][idx[j]] += w * qx * phi[i] * phi[j] * len;
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                assert!((mq.get(i, j) - oracle[i][j]).abs() < 1e-13, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn weighted_mass_linear_in_q() {
        let mesh = build_unit_square_mesh(3).unwrap();
        let bounds = BoxBounds::new(0.0, 10.0).unwrap();
        let q1 = Potential::from_field(&mesh, |p| 1.0 + p[0], bounds).unwrap();
        let q2 = Potential::from_field(&mesh, |p| 0.5 + p[1] * p[0], bounds).unwrap();
        let sum_vals: Vec<f64> = q1.values().iter().zip(q2.values()).map(|(a, b)| a + b).collect();
        let qsum =
            Potential::new(FeFunction::new(&mesh, sum_vals, Space::Full).unwrap(), bounds_wide())
                .unwrap();
        let m1 = assemble_weighted_mass(&mesh, &q1).unwrap();
        let m2 = assemble_weighted_mass(&mesh, &q2).unwrap();
        let msum = assemble_weighted_mass(&mesh, &qsum).unwrap();
        for ((a, b), s) in m1.values().iter().zip(m2.values()).zip(msum.values()) {
            assert!((a + b - s).abs() < 1e-13);
        }
    }

    fn bounds_wide() -> BoxBounds {
        BoxBounds::new(0.0, 100.0).unwrap()
    }

    #[test]
    fn load_partition_of_unity() {
        for mesh in [build_interval_mesh(8).unwrap(), build_unit_square_mesh(5).unwrap()] {
            let load = assemble_load(&mesh, |_| 1.0);
            let total: f64 = load.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        let mesh = build_interval_mesh(4).unwrap();
        assert!(assemble_load(&mesh, |_| 0.0).iter().all(|&v| v == 0.0));
        let total: f64 = assemble_load(&mesh, |p| p[0]).iter().sum();
        assert!((total - 0.5).abs() < 1e-12);
    }

    #[test]
    fn interpolation_values() {
        let mesh = build_interval_mesh(4).unwrap();
        let g = interpolate(&mesh, |_| 1.0);
        assert!(g.values().iter().all(|&v| v == 1.0));

        let q = interpolate(&mesh, |p| 1.0 + p[0] * (1.0 - p[0]) * (2.0 * PI * p[0]).sin());
        assert!((q.values()[1] - 1.1875).abs() < 1e-14); // x = 0.25

        // interpolating a P1 function reproduces it
        let lin = interpolate(&mesh, |p| 2.0 * p[0] - 0.3);
        let re = interpolate(&mesh, |p| {
            let t = p[0] * 4.0;
            let i = (t.floor() as usize).min(3);
            let frac = t - i as f64;
            lin.values()[i] * (1.0 - frac) + lin.values()[i + 1] * frac
        });
        for (a, b) in lin.values().iter().zip(re.values()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn l2_projection_basics() {
        let mesh = build_interval_mesh(8).unwrap();
        let zero = l2_project(&mesh, |_| 0.0).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));

        // idempotence on a member of V_h0
        let member = l2_project(&mesh, |p| (PI * p[0]).sin()).unwrap();
        let again = l2_project_fe(&mesh, &mesh, &member).unwrap();
        for (a, b) in member.values().iter().zip(again.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn l2_projection_rate() {
        // ‖g - P_h g‖ = O(h²) for g = sin(pi x)
        let mut errs = Vec::new();
        for n in [8usize, 16, 32, 64] {
            let mesh = build_interval_mesh(n).unwrap();
            let ph = l2_project(&mesh, |p| (PI * p[0]).sin()).unwrap();
            // 10-pt Gauss per element against the analytic field
            let mut e2 = 0.0;
            for cell in mesh.cells() {
                if let Cell::Segment([a, b]) = cell {
                    let xa = mesh.node(*a)[0];
                    let len = mesh.node(*b)[0] - xa;
                    for (t, w) in gauss10_unit() {
                        let x = xa + t * len;
                        let vh = ph.values()[*a] * (1.0 - t) + ph.values()[*b] * t;
                        e2 += w * len * ((PI * x).sin() - vh).powi(2);
                    }
                }
            }
            errs.push((1.0 / n as f64, e2.sqrt()));
        }
        let rate = crate::analysis::fit_rate(&errs).unwrap().slope;
        assert!(rate >= 1.9, "projection rate {rate}");
    }

    #[test]
    fn norms_basic() {
        let mesh = build_interval_mesh(64).unwrap();
        let one = interpolate(&mesh, |_| 1.0);
        assert!((norm_l2(&mesh, &one).unwrap() - 1.0).abs() < 1e-13);
        assert!(seminorm_h1(&mesh, &one).unwrap() < 1e-13);

        let s = interpolate(&mesh, |p| (PI * p[0]).sin());
        assert!((norm_l2(&mesh, &s).unwrap() - (0.5_f64).sqrt()).abs() < 1e-3);

        let twice = FeFunction::new(&mesh, s.values().iter().map(|v| 2.0 * v).collect(), Space::Full).unwrap();
        assert_eq!(norm_l2(&mesh, &twice).unwrap(), 2.0 * norm_l2(&mesh, &s).unwrap());
    }

    #[test]
    fn fe_function_invariants() {
        let mesh = build_interval_mesh(4).unwrap();
        assert!(FeFunction::new(&mesh, vec![0.0; 3], Space::Full).is_err());
        let mut vals = vec![0.0; 5];
        vals[0] = 1.0;
        assert!(FeFunction::new(&mesh, vals.clone(), Space::ZeroTrace).is_err());
        assert!(FeFunction::new(&mesh, vals, Space::Full).is_ok());
    }

    #[test]
    fn potential_box_enforced() {
        let mesh = build_interval_mesh(4).unwrap();
        let bounds = BoxBounds::new(0.4, 2.0).unwrap();
        assert!(Potential::constant(&mesh, 3.0, bounds).is_err());
        assert!(Potential::constant(&mesh, 1.0, bounds).is_ok());
        let clamped = Potential::clamped(&mesh, vec![3.0, 1.0, 0.1, 1.0, 1.0], bounds).unwrap();
        assert_eq!(clamped.values()[0], 2.0);
        assert_eq!(clamped.values()[2], 0.4);
        assert!(BoxBounds::new(2.0, 0.4).is_err());
        assert!(BoxBounds::new(-1.0, 2.0).is_err());
    }

    #[test]
    fn eval_at_reproduces_nodal_interpolant() {
        let mesh = build_unit_square_mesh(4).unwrap();
        let f = interpolate(&mesh, |p| 1.0 + 2.0 * p[0] - 0.5 * p[1]);
        // linear fields are reproduced exactly anywhere
        for &p in &[[0.13, 0.77], [0.5, 0.5], [0.99, 0.01]] {
            let v = eval_at(&mesh, &f, p).unwrap();
            assert!((v - (1.0 + 2.0 * p[0] - 0.5 * p[1])).abs() < 1e-13);
        }
    }

    #[test]
    fn system_positive_definite_with_admissible_q() {
        let mesh = build_unit_square_mesh(4).unwrap();
        let bounds = BoxBounds::new(0.0, 2.0).unwrap();
        let q = Potential::from_field(&mesh, |p| 1.0 + 0.5 * p[0], bounds).unwrap();
        let mut sys = FemSystem::new(&mesh);
        let mut b = sys.stiffness_int.clone();
        b.add_scaled(1.0, &sys.weighted_mass_int(q.values()));
        // positive quadratic form on a few directions
        for k in 0..5 {
            let x: Vec<f64> = (0..b.rows()).map(|i| ((i * 7 + k) % 5) as f64 - 2.0).collect();
            if x.iter().any(|&v| v != 0.0) {
                assert!(b.bilinear(&x, &x) > 0.0);
            }
        }
    }

    proptest! {
        #[test]
        fn norm_homogeneity(scale in -8.0f64..8.0) {
            let mesh = build_interval_mesh(8).unwrap();
            let v = interpolate(&mesh, |p| (3.1 * p[0]).cos());
            let scaled = FeFunction::new(&mesh, v.values().iter().map(|x| scale * x).collect(), Space::Full).unwrap();
            let n1 = norm_l2(&mesh, &v).unwrap();
            let n2 = norm_l2(&mesh, &scaled).unwrap();
            prop_assert!((n2 - scale.abs() * n1).abs() <= 1e-12 * (1.0 + n2));
        }
    }
}
