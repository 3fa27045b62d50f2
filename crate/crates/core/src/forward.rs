//! Discrete forward solvers.
//!
//! Elliptic: find u_h ∈ V_h0 with (∇u_h, ∇φ) + (q u_h, φ) = (f, φ).
//! Parabolic: backward Euler on a uniform grid, u_h⁰ = P_h u₀ and
//! (∂_τ u_hⁿ, φ) + (∇u_hⁿ, ∇φ) + (q u_hⁿ, φ) = (f(tⁿ), φ), n = 1..N,
//! with the source sampled at the right endpoint of each step.

use crate::error::invalid;
use crate::fem::sparse::SpdSolver;
use crate::fem::{l2_project, FeFunction, FemSystem, Potential};
use crate::mesh::{Mesh, Point};
use crate::Result;

/// Backward-Euler state sequence u⁰..u^N on a uniform time grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    states: Vec<FeFunction>,
    tau: f64,
    t_final: f64,
    mesh_id: u64,
}

impl Trajectory {
    pub(crate) fn from_states(states: Vec<FeFunction>, tau: f64, mesh_id: u64) -> Self {
        let t_final = tau * (states.len() - 1) as f64;
        Trajectory { states, tau, t_final, mesh_id }
    }

    pub fn states(&self) -> &[FeFunction] {
        &self.states
    }

    pub fn state(&self, n: usize) -> &FeFunction {
        &self.states[n]
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn num_steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }
}

/// Observation window [T0, T] with T0 on the time grid (N0 · τ = T0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeWindow {
    pub t_start: f64,
    pub t_final: f64,
    pub start_index: usize,
}

impl TimeWindow {
    /// Builds the window for a grid with step `tau`; `t_start` must sit on the grid.
    ///
    /// `t_start == t_final` is the degenerate window observing only the
    /// final state.
    pub fn new(t_start: f64, t_final: f64, tau: f64) -> Result<Self> {
        if !(t_start >= 0.0 && t_start <= t_final) {
            return invalid(format!("time window needs 0 <= T0 <= T, got [{t_start}, {t_final}]"));
        }
        if tau <= 0.0 {
            return invalid("time step must be positive");
        }
        let n0 = (t_start / tau).round();
        if (n0 * tau - t_start).abs() > 1e-12 * t_final.max(1.0) {
            return invalid(format!("T0 = {t_start} is not on the time grid with tau = {tau}"));
        }
        Ok(TimeWindow { t_start, t_final, start_index: n0 as usize })
    }
}

/// Solves the discrete elliptic problem; the solution is zero-trace.
pub fn solve_elliptic(mesh: &Mesh, q: &Potential, f: impl Fn(Point) -> f64) -> Result<FeFunction> {
    q.check_mesh(mesh)?;
    let mut sys = FemSystem::new(mesh);
    let load = crate::fem::assemble_load(mesh, f);
    solve_elliptic_with(&mut sys, q.values(), &load)
}

pub(crate) fn solve_elliptic_with(
    sys: &mut FemSystem,
    q: &[f64],
    load_full: &[f64],
) -> Result<FeFunction> {
    let mut system = sys.stiffness_int.clone();
    let mq = sys.weighted_mass_int(q);
    system.add_scaled(1.0, &mq);
    let b = sys.restrict_vec(load_full);
    let x = SpdSolver::new(&system).solve(&b)?;
    Ok(sys.zero_trace(sys.extend_vec(&x)))
}

/// Runs backward Euler for `n_steps` steps of size `tau`, starting from P_h u₀.
pub fn solve_parabolic(
    mesh: &Mesh,
    q: &Potential,
    f: impl Fn(Point, f64) -> f64,
    u0: impl Fn(Point) -> f64,
    tau: f64,
    n_steps: usize,
) -> Result<Trajectory> {
    q.check_mesh(mesh)?;
    if tau <= 0.0 || n_steps == 0 {
        return invalid("parabolic solve needs tau > 0 and at least one step");
    }
    let mut sys = FemSystem::new(mesh);
    let loads: Vec<Vec<f64>> = (1..=n_steps)
        .map(|n| crate::fem::assemble_load(mesh, |p| f(p, n as f64 * tau)))
        .collect();
    let initial = l2_project(mesh, u0)?;
    solve_parabolic_with(&mut sys, q.values(), &loads, initial, tau)
}

/// Time stepping with preassembled per-step loads; one factorisation serves
/// every step since the system matrix M/τ + A + M_q is time-independent.
pub(crate) fn solve_parabolic_with(
    sys: &mut FemSystem,
    q: &[f64],
    loads_full: &[Vec<f64>],
    initial: FeFunction,
    tau: f64,
) -> Result<Trajectory> {
    let n_steps = loads_full.len();
    let mut system = sys.stiffness_int.clone();
    system.add_scaled(1.0 / tau, &sys.mass_int);
    let mq = sys.weighted_mass_int(q);
    system.add_scaled(1.0, &mq);
    let solver = SpdSolver::new(&system);

    let mesh_id = sys.mesh.id();
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut u_int = sys.restrict_vec(initial.values());
    states.push(initial);
    let mut rhs = vec![0.0; u_int.len()];
    for load in loads_full {
        sys.mass_int.matvec(&u_int, &mut rhs);
        let b = sys.restrict_vec(load);
        for (r, l) in rhs.iter_mut().zip(&b) {
            *r = *r / tau + l;
        }
        u_int = solver.solve(&rhs)?;
        states.push(sys.zero_trace(sys.extend_vec(&u_int)));
    }
    Ok(Trajectory::from_states(states, tau, mesh_id))
}

/// The observed slice states[N0..=N] of a trajectory.
pub fn observe<'t>(traj: &'t Trajectory, window: &TimeWindow) -> Result<&'t [FeFunction]> {
    if (window.t_final - traj.t_final).abs() > 1e-12 * traj.t_final.max(1.0) {
        return invalid(format!(
            "window final time {} does not match trajectory final time {}",
            window.t_final, traj.t_final
        ));
    }
    let n0 = (window.t_start / traj.tau).round();
    if (n0 * traj.tau - window.t_start).abs() > 1e-12 * traj.t_final.max(1.0) {
        return invalid("window start is not on the trajectory time grid");
    }
    let n0 = n0 as usize;
    if n0 != window.start_index || n0 > traj.num_steps() {
        return invalid("window start index inconsistent with trajectory grid");
    }
    Ok(&traj.states[n0..])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::fit_rate;
    use crate::fem::{norm_l2, BoxBounds, FeFunction, Space};
    use crate::mesh::{build_interval_mesh, build_unit_square_mesh};

    const PI: f64 = std::f64::consts::PI;

    fn bounds() -> BoxBounds {
        BoxBounds::new(0.0, 10.0).unwrap()
    }

    fn l2_error_vs(mesh: &Mesh, fe: &FeFunction, exact: impl Fn(Point) -> f64) -> f64 {
        // compare against the nodal interpolant; adequate for rate checks
        let diff: Vec<f64> =
            fe.values().iter().zip(mesh.nodes()).map(|(v, &p)| v - exact(p)).collect();
        let d = FeFunction::new(mesh, diff, Space::Full).unwrap();
        norm_l2(mesh, &d).unwrap()
    }

    #[test]
    fn elliptic_zero_source() {
        let mesh = build_interval_mesh(8).unwrap();
        let q = Potential::constant(&mesh, 1.0, bounds()).unwrap();
        let u = solve_elliptic(&mesh, &q, |_| 0.0).unwrap();
        assert!(u.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn elliptic_manufactured_rate_1d() {
        // q ≡ c, f = (pi² + c) sin(pi x)  =>  u = sin(pi x)
        let c = 1.0;
        let mut pts = Vec::new();
        for n in [8usize, 16, 32, 64, 128] {
            let mesh = build_interval_mesh(n).unwrap();
            let q = Potential::constant(&mesh, c, bounds()).unwrap();
            let u = solve_elliptic(&mesh, &q, |p| (PI * PI + c) * (PI * p[0]).sin()).unwrap();
            pts.push((1.0 / n as f64, l2_error_vs(&mesh, &u, |p| (PI * p[0]).sin())));
        }
        let rate = fit_rate(&pts).unwrap().slope;
        assert!(rate >= 1.9, "observed rate {rate}");
    }

    #[test]
    fn elliptic_closed_form_rate_1d() {
        // q ≡ 0, f ≡ 1  =>  u = x(1-x)/2
        let lo0 = BoxBounds::new(0.0, 10.0).unwrap();
        let mut pts = Vec::new();
        for n in [8usize, 16, 32, 64] {
            let mesh = build_interval_mesh(n).unwrap();
            let q = Potential::constant(&mesh, 0.0, lo0).unwrap();
            let u = solve_elliptic(&mesh, &q, |_| 1.0).unwrap();
            pts.push((1.0 / n as f64, l2_error_vs(&mesh, &u, |p| p[0] * (1.0 - p[0]) / 2.0)));
        }
        // the P1 solution with exact load interpolates x(1-x)/2 up to quadrature error
        let errs: Vec<f64> = pts.iter().map(|&(_, e)| e).collect();
        if errs.iter().all(|&e| e < 1e-12) {
            return; // nodally exact; nothing to fit
        }
        let rate = fit_rate(&pts).unwrap().slope;
        assert!(rate >= 1.9, "observed rate {rate}");
    }

    #[test]
    fn parabolic_zero_data() {
        let mesh = build_interval_mesh(8).unwrap();
        let q = Potential::constant(&mesh, 1.0, bounds()).unwrap();
        let traj = solve_parabolic(&mesh, &q, |_, _| 0.0, |_| 0.0, 0.01, 5).unwrap();
        for state in traj.states() {
            assert!(state.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn parabolic_initial_state_is_projection() {
        let mesh = build_interval_mesh(16).unwrap();
        let q = Potential::constant(&mesh, 1.0, bounds()).unwrap();
        let traj = solve_parabolic(&mesh, &q, |_, _| 0.0, |p| (PI * p[0]).sin(), 0.001, 2).unwrap();
        let ph = l2_project(&mesh, |p| (PI * p[0]).sin()).unwrap();
        for (a, b) in traj.state(0).values().iter().zip(ph.values()) {
            assert!((a - b).abs() < 1e-14);
        }
        for state in traj.states() {
            for (i, &v) in state.values().iter().enumerate() {
                if mesh.is_boundary(i) {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn parabolic_separable_decay_rate() {
        // u0 = sin(pi x), f ≡ 0, q ≡ c: u(x,t) = e^{-(pi²+c)t} sin(pi x)
        let t_final = 0.01;
        for c in [0.0, 1.0] {
            // h fixed fine so the O(h²) part stays below the τ errors
            let mesh = build_interval_mesh(512).unwrap();
            let q = Potential::constant(&mesh, c, bounds()).unwrap();
            let mut pts = Vec::new();
            for steps in [10usize, 20, 40, 80, 160] {
                let tau = t_final / steps as f64;
                let traj =
                    solve_parabolic(&mesh, &q, |_, _| 0.0, |p| (PI * p[0]).sin(), tau, steps).unwrap();
                let decay = (-(PI * PI + c) * t_final).exp();
                let err = l2_error_vs(&mesh, traj.state(steps), |p| decay * (PI * p[0]).sin());
                pts.push((tau, err));
            }
            let rate = fit_rate(&pts).unwrap().slope;
            assert!(rate >= 0.9, "tau-rate {rate} for c = {c}");
        }
    }

    #[test]
    fn parabolic_reaches_steady_state() {
        let mesh = build_interval_mesh(32).unwrap();
        let q = Potential::constant(&mesh, 1.0, bounds()).unwrap();
        let steps = 100;
        let traj = solve_parabolic(&mesh, &q, |_, _| 1.0, |_| 0.0, 0.1, steps).unwrap();
        let steady = solve_elliptic(&mesh, &q, |_| 1.0).unwrap();
        let diff: Vec<f64> = traj
            .state(steps)
            .values()
            .iter()
            .zip(steady.values())
            .map(|(a, b)| a - b)
            .collect();
        let d = FeFunction::new(&mesh, diff, Space::Full).unwrap();
        assert!(norm_l2(&mesh, &d).unwrap() <= 1e-6);
    }

    #[test]
    fn monotone_dependence_on_q() {
        // larger q does not increase the solution pointwise (f >= 0)
        for mesh in [build_interval_mesh(32).unwrap(), build_unit_square_mesh(8).unwrap()] {
            let q_small = Potential::constant(&mesh, 0.5, bounds()).unwrap();
            let q_large = Potential::constant(&mesh, 1.5, bounds()).unwrap();
            let u_small = solve_elliptic(&mesh, &q_small, |_| 1.0).unwrap();
            let u_large = solve_elliptic(&mesh, &q_large, |_| 1.0).unwrap();
            for (a, b) in u_large.values().iter().zip(u_small.values()) {
                assert!(*a <= b + 1e-12);
            }
        }
    }

    #[test]
    fn nonnegativity_preserved() {
        let mesh = build_unit_square_mesh(6).unwrap();
        let q = Potential::constant(&mesh, 1.0, bounds()).unwrap();
        let traj =
            solve_parabolic(&mesh, &q, |_, _| 1.0, |p| (PI * p[0]).sin() * (PI * p[1]).sin(), 0.002, 10)
                .unwrap();
        for state in traj.states() {
            for &v in state.values() {
                assert!(v >= -1e-12);
            }
        }
    }

    #[test]
    fn observe_slices() {
        let mesh = build_interval_mesh(8).unwrap();
        let q = Potential::constant(&mesh, 1.0, bounds()).unwrap();
        let tau = 0.01 / 8.0;
        let traj = solve_parabolic(&mesh, &q, |_, _| 1.0, |_| 0.0, tau, 8).unwrap();

        let full = TimeWindow::new(0.0, 0.01, tau).unwrap();
        assert_eq!(observe(&traj, &full).unwrap().len(), 9);

        let last = TimeWindow::new(0.01, 0.01, tau).unwrap();
        assert_eq!(observe(&traj, &last).unwrap().len(), 1);

        assert!(TimeWindow::new(0.0033, 0.01, tau).is_err());
    }

    #[test]
    fn window_rejects_bad_ranges() {
        assert!(TimeWindow::new(-0.1, 1.0, 0.1).is_err());
        assert!(TimeWindow::new(1.1, 1.0, 0.1).is_err());
        assert!(TimeWindow::new(0.0, 1.0, 0.0).is_err());
    }
}
