//! Error metrics, convergence-rate fitting, the explicit 1D Green's
//! function, positivity certification and empirical stability sampling.
//!
//! The weighted error ‖(q† - q*) u‖ uses the same degree-3 element
//! quadrature as the load assembly (exact in 1D where the integrand is a
//! quartic polynomial per element; a close approximation on triangles).

use rand::Rng;

use crate::error::invalid;
use crate::fem::{
    assemble_mass, assemble_stiffness, gauss3_unit, interpolate, tri_quad4, BoxBounds, FeFunction,
    Potential,
};
use crate::forward::{solve_elliptic, TimeWindow, Trajectory};
use crate::mesh::{boundary_distance, Cell, InteriorRegion, Mesh, Point};
use crate::Result;

/// The error quantities reported for one reconstruction.
#[derive(Clone, Copy, Debug, Default)]
pub struct ErrorReport {
    /// ‖q† - q*‖ over Ω.
    pub e_q: f64,
    /// Same norm restricted to an interior subdomain Ω'.
    pub e_q_interior: f64,
    /// ‖(q† - q*) u(q†)‖.
    pub e_q_weighted: f64,
    /// State error.
    pub e_u: f64,
    /// Estimate scale h² + δ + √α (with + τ in the parabolic case).
    pub eta: f64,
}

pub fn eta_elliptic(h: f64, delta: f64, alpha: f64) -> f64 {
    h * h + delta + alpha.sqrt()
}

pub fn eta_parabolic(tau: f64, h: f64, delta: f64, alpha: f64) -> f64 {
    tau + h * h + delta + alpha.sqrt()
}

// ---------------------------------------------------------------------------
// potential error metrics
// ---------------------------------------------------------------------------

/// L² norm of a nodal vector over the cells selected by `include`.
fn selective_l2(mesh: &Mesh, values: &[f64], include: impl Fn(&Cell) -> bool) -> f64 {
    let mut total = 0.0;
    for cell in mesh.cells() {
        if !include(cell) {
            continue;
        }
        match cell {
            Cell::Segment([a, b]) => {
                let len = (mesh.node(*b)[0] - mesh.node(*a)[0]).abs();
                let (ea, eb) = (values[*a], values[*b]);
                total += len / 3.0 * (ea * ea + eb * eb + ea * eb);
            }
            Cell::Triangle(v) => {
                let area = mesh.cell_measure(cell);
                let e = [values[v[0]], values[v[1]], values[v[2]]];
                let sq: f64 = e.iter().map(|x| x * x).sum();
                let cross = e[0] * e[1] + e[0] * e[2] + e[1] * e[2];
                total += area / 6.0 * sq + area / 6.0 * cross;
            }
        }
    }
    total.max(0.0).sqrt()
}

/// ‖Π_h q† - q*‖ over Ω or, given a region, over the cells whose vertices
/// all lie in the region mask.
pub fn error_q(
    mesh: &Mesh,
    q_true: impl Fn(Point) -> f64,
    q_star: &Potential,
    region: Option<&InteriorRegion>,
) -> f64 {
    let qi = interpolate(mesh, q_true);
    let diff: Vec<f64> =
        qi.values().iter().zip(q_star.values()).map(|(a, b)| a - b).collect();
    match region {
        None => selective_l2(mesh, &diff, |_| true),
        Some(r) => selective_l2(mesh, &diff, |cell| {
            cell.vertices().iter().all(|&v| r.node_mask[v])
        }),
    }
}

/// ‖d·u‖_{L²} for two P1 nodal vectors, by the degree-3 element quadrature.
pub(crate) fn weighted_l2(mesh: &Mesh, d: &[f64], u: &[f64]) -> f64 {
    let mut total = 0.0;
    for cell in mesh.cells() {
        match cell {
            Cell::Segment([a, b]) => {
                let len = (mesh.node(*b)[0] - mesh.node(*a)[0]).abs();
                for (t, w) in gauss3_unit() {
                    let dv = d[*a] * (1.0 - t) + d[*b] * t;
                    let uv = u[*a] * (1.0 - t) + u[*b] * t;
                    total += w * len * (dv * uv).powi(2);
                }
            }
            Cell::Triangle(v) => {
                let area = mesh.cell_measure(cell);
                for (lam, w) in tri_quad4() {
                    let mut dv = 0.0;
                    let mut uv = 0.0;
                    for i in 0..3 {
                        dv += lam[i] * d[v[i]];
                        uv += lam[i] * u[v[i]];
                    }
                    total += w * area * (dv * uv).powi(2);
                }
            }
        }
    }
    total.max(0.0).sqrt()
}

/// Weighted potential error ‖(Π_h q† - q*)·u_ref‖_{L²}.
pub fn error_weighted(
    mesh: &Mesh,
    q_true: impl Fn(Point) -> f64,
    q_star: &Potential,
    u_ref: &FeFunction,
) -> Result<f64> {
    u_ref.check_mesh(mesh)?;
    q_star.check_mesh(mesh)?;
    let qi = interpolate(mesh, q_true);
    let diff: Vec<f64> =
        qi.values().iter().zip(q_star.values()).map(|(a, b)| a - b).collect();
    Ok(weighted_l2(mesh, &diff, u_ref.values()))
}

/// Discrete L² state error ‖u_true - u_star‖.
pub fn error_u_elliptic(mesh: &Mesh, u_true: &FeFunction, u_star: &FeFunction) -> Result<f64> {
    u_true.check_mesh(mesh)?;
    u_star.check_mesh(mesh)?;
    let diff: Vec<f64> =
        u_true.values().iter().zip(u_star.values()).map(|(a, b)| a - b).collect();
    Ok(selective_l2(mesh, &diff, |_| true))
}

/// τ-weighted ℓ²(L²) state error over the observation window.
pub fn error_u_parabolic(
    mesh: &Mesh,
    traj_a: &Trajectory,
    traj_b: &Trajectory,
    window: &TimeWindow,
) -> Result<f64> {
    if traj_a.mesh_id() != mesh.id() || traj_b.mesh_id() != mesh.id() {
        return invalid("trajectories do not live on the given mesh");
    }
    if traj_a.num_steps() != traj_b.num_steps()
        || (traj_a.tau() - traj_b.tau()).abs() > 1e-12 * traj_a.tau()
    {
        return invalid("trajectories live on different time grids");
    }
    if window.start_index > traj_a.num_steps() {
        return invalid("window start index exceeds the trajectory length");
    }
    let mass = assemble_mass(mesh);
    let mut total = 0.0;
    for n in window.start_index..=traj_a.num_steps() {
        let diff: Vec<f64> = traj_a
            .state(n)
            .values()
            .iter()
            .zip(traj_b.state(n).values())
            .map(|(a, b)| a - b)
            .collect();
        total += mass.bilinear(&diff, &diff).max(0.0);
    }
    Ok((traj_a.tau() * total).sqrt())
}

/// The weighted triple time sum
/// τ³ Σ_{j=N0+1..N} Σ_{i=N0+1..j} Σ_{n=i..j} ‖(Π_h q† - q*) uⁿ‖, evaluated
/// in O(N) via the per-index multiplicity (n - N0)(N - n + 1).
pub fn triple_sum_weighted(
    mesh: &Mesh,
    traj_ref: &Trajectory,
    q_true: impl Fn(Point) -> f64,
    q_star: &Potential,
    window: &TimeWindow,
) -> Result<f64> {
    if traj_ref.mesh_id() != mesh.id() {
        return invalid("reference trajectory does not live on the given mesh");
    }
    q_star.check_mesh(mesh)?;
    let n0 = window.start_index;
    let n_final = traj_ref.num_steps();
    if n0 > n_final {
        return invalid("window start index exceeds the trajectory length");
    }
    let qi = interpolate(mesh, q_true);
    let diff: Vec<f64> =
        qi.values().iter().zip(q_star.values()).map(|(a, b)| a - b).collect();
    let tau = traj_ref.tau();
    let mut total = 0.0;
    for n in n0 + 1..=n_final {
        let w = weighted_l2(mesh, &diff, traj_ref.state(n).values());
        total += ((n - n0) * (n_final - n + 1)) as f64 * w;
    }
    Ok(tau.powi(3) * total)
}

// ---------------------------------------------------------------------------
// rate fitting
// ---------------------------------------------------------------------------

/// Least-squares fit of log y against log x.
#[derive(Clone, Debug)]
pub struct RateFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
}

/// Fits the empirical convergence rate: the slope of log y vs log x.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 2 {
        return invalid("rate fit needs at least two points");
    }
    for &(x, y) in points {
        if !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()) {
            return invalid(format!("rate fit needs positive finite points, got ({x}, {y})"));
        }
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return invalid("rate fit needs at least two distinct x values");
    }
    let slope = sxy / sxx;
    Ok(RateFit { points: points.to_vec(), slope, intercept: my - slope * mx })
}

// ---------------------------------------------------------------------------
// 1D Green's function of -u'' + c1 u on (a,b)
// ---------------------------------------------------------------------------

/// Closed-form Green's function of the operator -d²/dx² + c₁ on (a,b) with
/// zero Dirichlet conditions, evaluated branch by branch.
pub fn green_function_1d(x: f64, y: f64, c1: f64, a: f64, b: f64) -> Result<f64> {
    if c1 <= 0.0 {
        return invalid(format!("Green's function needs c1 > 0, got {c1}"));
    }
    if !(a < b) {
        return invalid("Green's function needs a < b");
    }
    if !(a..=b).contains(&x) || !(a..=b).contains(&y) {
        return invalid("Green's function arguments must lie in [a, b]");
    }
    let s = c1.sqrt();
    let denom = 2.0 * s * ((s * (2.0 * a + y)).exp() - (s * (2.0 * b + y)).exp());
    let g = if x <= y {
        -((2.0 * s * a).exp() * ((2.0 * s * y).exp() - (2.0 * s * b).exp())) / denom
            * ((-s * x).exp() - (s * (x - 2.0 * a)).exp())
    } else {
        -((2.0 * s * b).exp() * ((2.0 * s * y).exp() - (2.0 * s * a).exp())) / denom
            * ((-s * x).exp() - (s * (x - 2.0 * b)).exp())
    };
    Ok(g)
}

/// Smallest ratio G(x,y)/|x-y| over a uniform interior grid, restricted to
/// pairs with |x-y| ≤ ½·dist(x, ∂Ω). A strictly positive return calibrates
/// the lower-bound constant of the Green's function.
pub fn green_lower_bound_constant(c1: f64, a: f64, b: f64, grid: usize) -> Result<f64> {
    if grid < 2 {
        return invalid("lower-bound scan needs a grid of at least 2 points");
    }
    let len = b - a;
    let mut c_min = f64::INFINITY;
    for i in 1..=grid {
        let x = a + len * i as f64 / (grid + 1) as f64;
        let dist_x = (x - a).min(b - x);
        for j in 1..=grid {
            let y = a + len * j as f64 / (grid + 1) as f64;
            let r = (x - y).abs();
            if r == 0.0 || r > 0.5 * dist_x {
                continue;
            }
            let g = green_function_1d(x, y, c1, a, b)?;
            c_min = c_min.min(g / r);
        }
    }
    if !c_min.is_finite() {
        return invalid("no admissible pairs on the scan grid");
    }
    Ok(c_min)
}

// ---------------------------------------------------------------------------
// positivity certification
// ---------------------------------------------------------------------------

/// Best constant C with u(x) ≥ C·dist(x,∂Ω)^β at the interior nodes:
/// returns inf u(x_i)/dist(x_i)^β; a positive value certifies the discrete
/// positivity condition.
pub fn check_positivity(mesh: &Mesh, u: &FeFunction, beta: f64) -> Result<f64> {
    u.check_mesh(mesh)?;
    let mut c = f64::INFINITY;
    for i in 0..mesh.num_nodes() {
        if mesh.is_boundary(i) {
            continue;
        }
        let d = boundary_distance(mesh, i);
        c = c.min(u.values()[i] / d.powf(beta));
    }
    Ok(c)
}

/// Positivity constant over every state of a trajectory slice.
pub fn check_positivity_states(mesh: &Mesh, states: &[FeFunction], beta: f64) -> Result<f64> {
    let mut c = f64::INFINITY;
    for state in states {
        c = c.min(check_positivity(mesh, state, beta)?);
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// conditional-stability sampling
// ---------------------------------------------------------------------------

/// One stability probe: lhs = ‖(q1-q2) u(q1)‖, rhs = ‖u(q1)-u(q2)‖_{H¹}^{1/2}.
#[derive(Clone, Copy, Debug)]
pub struct StabilityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Computes the two sides of the weighted conditional-stability estimate for
/// a pair of admissible potentials.
pub fn stability_experiment(
    mesh: &Mesh,
    q1: &Potential,
    q2: &Potential,
    f: impl Fn(Point) -> f64,
) -> Result<StabilityReport> {
    q1.check_mesh(mesh)?;
    q2.check_mesh(mesh)?;
    let u1 = solve_elliptic(mesh, q1, &f)?;
    let u2 = solve_elliptic(mesh, q2, &f)?;
    let dq: Vec<f64> = q1.values().iter().zip(q2.values()).map(|(a, b)| a - b).collect();
    let lhs = weighted_l2(mesh, &dq, u1.values());

    let diff: Vec<f64> = u1.values().iter().zip(u2.values()).map(|(a, b)| a - b).collect();
    let mass = assemble_mass(mesh);
    let stiff = assemble_stiffness(mesh);
    let h1_sq = mass.bilinear(&diff, &diff).max(0.0) + stiff.bilinear(&diff, &diff).max(0.0);
    let rhs = h1_sq.sqrt().sqrt();
    let ratio = if rhs > 0.0 { lhs / rhs } else { 0.0 };
    Ok(StabilityReport { lhs, rhs, ratio })
}

/// Draws a smooth random admissible potential: a few low-frequency modes
/// around the box midpoint, clamped into the box.
pub fn sample_smooth_potential(
    mesh: &Mesh,
    bounds: BoxBounds,
    rng: &mut impl Rng,
) -> Result<Potential> {
    let center = 0.5 * (bounds.lo + bounds.hi);
    let span = 0.5 * (bounds.hi - bounds.lo);
    let mut amps = [0.0; 3];
    let mut phases_x = [0.0; 3];
    let mut phases_y = [0.0; 3];
    for k in 0..3 {
        amps[k] = rng.gen_range(-0.8..0.8) * span / (k + 1) as f64;
        phases_x[k] = rng.gen_range(0.0..std::f64::consts::TAU);
        phases_y[k] = rng.gen_range(0.0..std::f64::consts::TAU);
    }
    let dim = mesh.dim();
    let values: Vec<f64> = mesh
        .nodes()
        .iter()
        .map(|&p| {
            let mut v = center;
            for k in 0..3 {
                let fx = ((k + 1) as f64 * std::f64::consts::PI * p[0] + phases_x[k]).sin();
                let fy = if dim == 2 {
                    ((k + 1) as f64 * std::f64::consts::PI * p[1] + phases_y[k]).sin()
                } else {
                    1.0
                };
                v += amps[k] * fx * fy;
            }
            v
        })
        .collect();
    Potential::clamped(mesh, values, bounds)
}
