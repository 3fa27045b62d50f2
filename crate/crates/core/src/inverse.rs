//! The reconstruction engine.
//!
//! Minimises the Tikhonov-regularised output least-squares functional
//!
//! ```text
//!   J(q) = ½ ‖u_h(q) - z‖²                         + (α/2) |q|²_{H¹}   (elliptic)
//!   J(q) = (τ/2) Σ_{n=N0}^{N} ‖u_hⁿ(q) - zₙ‖²      + (α/2) |q|²_{H¹}   (parabolic)
//! ```
//!
//! over the box-constrained P1 potentials, using exact discrete-adjoint
//! gradients and a projected Polak–Ribière (PR+) nonlinear conjugate
//! gradient iteration with backtracking Armijo line search.
//!
//! Synthetic observations follow the additive noise model
//! `z = u(q†) + ε ‖u(q†)‖_∞ ξ` with ξ i.i.d. standard normal per node
//! (and per time step); the stored noise level δ is the discrete L²
//! (τ-weighted in time) norm of the actual perturbation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::invalid;
use crate::fem::sparse::SpdSolver;
use crate::fem::{
    assemble_load, l2_project, triple_product_vector, BoxBounds, FeFunction, FemSystem, Potential,
    Space,
};
use crate::forward::{observe, solve_elliptic, solve_parabolic, TimeWindow};
use crate::mesh::{Mesh, Point};
use crate::Result;

pub type ScalarFieldFn = Box<dyn Fn(Point) -> f64 + Send + Sync>;
pub type TimeFieldFn = Box<dyn Fn(Point, f64) -> f64 + Send + Sync>;

/// Observed data: one spatial field, or one state per time-grid point of the
/// observation window.
#[derive(Clone, Debug)]
pub enum ObservationData {
    Elliptic(FeFunction),
    Parabolic(Vec<FeFunction>),
}

/// Noisy observation together with its actual noise level δ.
#[derive(Clone, Debug)]
pub struct Observation {
    pub data: ObservationData,
    /// Discrete L² (τ-weighted ℓ²-in-time) norm of the synthetic perturbation.
    pub noise_level: f64,
    /// Relative noise level used to generate the data.
    pub epsilon: f64,
    pub seed: u64,
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// Synthesises elliptic data z = u_h(q†) + ε‖u_h‖_∞ ξ, ξ ~ N(0,1) per node.
pub fn make_observation_elliptic(
    mesh: &Mesh,
    q_true: &Potential,
    f: impl Fn(Point) -> f64,
    epsilon: f64,
    seed: u64,
) -> Result<Observation> {
    if epsilon < 0.0 {
        return invalid("noise level epsilon must be nonnegative");
    }
    let u = solve_elliptic(mesh, q_true, f)?;
    let scale = epsilon * max_abs(u.values());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pert: Vec<f64> = (0..mesh.num_nodes()).map(|_| scale * standard_normal(&mut rng)).collect();
    let data: Vec<f64> = u.values().iter().zip(&pert).map(|(a, b)| a + b).collect();
    let mass = crate::fem::assemble_mass(mesh);
    let noise_level = mass.bilinear(&pert, &pert).max(0.0).sqrt();
    Ok(Observation {
        data: ObservationData::Elliptic(FeFunction::new(mesh, data, Space::Full)?),
        noise_level,
        epsilon,
        seed,
    })
}

/// Synthesises parabolic data on the observed window: each state u_hⁿ,
/// n = N0..N, is perturbed nodally with fresh Gaussians scaled by
/// ε·max_{n,i}|u_hⁿ|; δ² = τ Σₙ ‖perturbationⁿ‖².
#[allow(clippy::too_many_arguments)]
pub fn make_observation_parabolic(
    mesh: &Mesh,
    q_true: &Potential,
    f: impl Fn(Point, f64) -> f64,
    u0: impl Fn(Point) -> f64,
    tau: f64,
    n_steps: usize,
    window: &TimeWindow,
    epsilon: f64,
    seed: u64,
) -> Result<Observation> {
    if epsilon < 0.0 {
        return invalid("noise level epsilon must be nonnegative");
    }
    let traj = solve_parabolic(mesh, q_true, f, u0, tau, n_steps)?;
    let observed = observe(&traj, window)?;
    let umax = observed.iter().map(|s| max_abs(s.values())).fold(0.0_f64, f64::max);
    let scale = epsilon * umax;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mass = crate::fem::assemble_mass(mesh);
    let mut delta_sq = 0.0;
    let mut states = Vec::with_capacity(observed.len());
    for state in observed {
        let pert: Vec<f64> =
            (0..mesh.num_nodes()).map(|_| scale * standard_normal(&mut rng)).collect();
        delta_sq += tau * mass.bilinear(&pert, &pert).max(0.0);
        let data: Vec<f64> = state.values().iter().zip(&pert).map(|(a, b)| a + b).collect();
        states.push(FeFunction::new(mesh, data, Space::Full)?);
    }
    Ok(Observation {
        data: ObservationData::Parabolic(states),
        noise_level: delta_sq.sqrt(),
        epsilon,
        seed,
    })
}

/// Forward problem attached to a Tikhonov functional.
pub enum ForwardSpec {
    Elliptic {
        source: ScalarFieldFn,
    },
    Parabolic {
        source: TimeFieldFn,
        initial: ScalarFieldFn,
        tau: f64,
        n_steps: usize,
        window: TimeWindow,
    },
}

/// The discrete regularised inversion problem.
pub struct TikhonovProblem<'m> {
    pub mesh: &'m Mesh,
    pub forward: ForwardSpec,
    pub observation: Observation,
    pub alpha: f64,
    pub bounds: BoxBounds,
}

impl<'m> TikhonovProblem<'m> {
    pub fn new(
        mesh: &'m Mesh,
        forward: ForwardSpec,
        observation: Observation,
        alpha: f64,
        bounds: BoxBounds,
    ) -> Result<Self> {
        if alpha < 0.0 || !alpha.is_finite() {
            return invalid(format!("regularization weight must be nonnegative, got {alpha}"));
        }
        match (&forward, &observation.data) {
            (ForwardSpec::Elliptic { .. }, ObservationData::Elliptic(z)) => {
                z.check_mesh(mesh)?;
            }
            (
                ForwardSpec::Parabolic { tau, n_steps, window, .. },
                ObservationData::Parabolic(zs),
            ) => {
                let t_final = tau * *n_steps as f64;
                if (window.t_final - t_final).abs() > 1e-12 * t_final.max(1.0) {
                    return invalid("observation window inconsistent with tau and N");
                }
                if window.start_index > *n_steps {
                    return invalid("window start index exceeds the number of time steps");
                }
                let expect = *n_steps - window.start_index + 1;
                if zs.len() != expect {
                    return invalid(format!(
                        "parabolic observation has {} states, window needs {expect}",
                        zs.len()
                    ));
                }
                for z in zs {
                    z.check_mesh(mesh)?;
                }
            }
            _ => return invalid("observation kind does not match the forward problem"),
        }
        Ok(TikhonovProblem { mesh, forward, observation, alpha, bounds })
    }
}

/// Componentwise clamp into [c0, c1].
pub fn project_box(values: &[f64], c0: f64, c1: f64) -> Vec<f64> {
    values.iter().map(|&v| v.max(c0).min(c1)).collect()
}

/// Regularised objective J(q).
pub fn objective(problem: &TikhonovProblem, q: &Potential) -> Result<f64> {
    q.check_mesh(problem.mesh)?;
    Evaluator::new(problem)?.eval(q.values(), false).map(|(j, _)| j)
}

/// Exact gradient of the discrete objective with respect to the nodal
/// values of q, computed by the discrete-adjoint method.
pub fn gradient(problem: &TikhonovProblem, q: &Potential) -> Result<Vec<f64>> {
    q.check_mesh(problem.mesh)?;
    Evaluator::new(problem)?.eval(q.values(), true).map(|(_, g)| g.unwrap())
}

/// Why the NCG iteration stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// Projected gradient norm fell below the tolerance.
    Tolerance,
    MaxIters,
    /// Backtracking produced no acceptable step.
    LineSearchFailure,
}

#[derive(Clone, Debug)]
pub struct ReconstructionResult {
    pub q_star: Potential,
    pub objective_history: Vec<f64>,
    pub grad_norm_history: Vec<f64>,
    pub iterations: usize,
    pub stop_reason: StopReason,
}

#[derive(Clone, Copy, Debug)]
pub struct ReconstructOptions {
    pub max_iters: usize,
    /// Stopping tolerance on the projected gradient norm;
    /// `None` selects 1e-8·(1 + |J(q0)|).
    pub grad_tol: Option<f64>,
    pub armijo_c: f64,
    pub max_backtracks: usize,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        ReconstructOptions { max_iters: 200, grad_tol: None, armijo_c: 1e-4, max_backtracks: 50 }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Gradient with components zeroed where they point out of the box at an
/// active bound.
fn projected_gradient(q: &[f64], g: &[f64], bounds: BoxBounds) -> Vec<f64> {
    q.iter()
        .zip(g)
        .map(|(&qi, &gi)| {
            if (qi <= bounds.lo && gi > 0.0) || (qi >= bounds.hi && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

/// Projected Polak–Ribière (PR+) nonlinear conjugate gradients with
/// backtracking Armijo line search over s ↦ J(clamp(q + s d)).
///
/// Nonconvergence is reported through `stop_reason`, never as an error;
/// only linear-solver breakdown propagates as `Err`.
pub fn reconstruct(
    problem: &TikhonovProblem,
    q0: &Potential,
    opts: &ReconstructOptions,
) -> Result<ReconstructionResult> {
    q0.check_mesh(problem.mesh)?;
    let bounds = problem.bounds;
    let mut ev = Evaluator::new(problem)?;

    let mut q = project_box(q0.values(), bounds.lo, bounds.hi);
    let (mut j_val, g0) = ev.eval(&q, true)?;
    let mut g = g0.unwrap();
    let grad_tol = opts.grad_tol.unwrap_or_else(|| 1e-8 * (1.0 + j_val.abs()));

    let m = q.len();
    let mut objective_history = vec![j_val];
    let mut grad_norm_history = vec![norm2(&projected_gradient(&q, &g, bounds))];
    let mut direction = vec![0.0; m];
    let mut g_prev: Option<Vec<f64>> = None;
    let mut step_prev = 0.0_f64;
    let mut iterations = 0usize;

    let stop_reason = loop {
        let g_proj = projected_gradient(&q, &g, bounds);
        if norm2(&g_proj) <= grad_tol {
            break StopReason::Tolerance;
        }
        if iterations >= opts.max_iters {
            break StopReason::MaxIters;
        }

        // PR+ direction with restart when descent is lost
        match &g_prev {
            Some(pg) => {
                let denom = dot(pg, pg);
                let beta = if denom > 0.0 { (dot(&g, &g) - dot(&g, pg)) / denom } else { 0.0 };
                let beta = beta.max(0.0);
                for i in 0..m {
                    direction[i] = -g[i] + beta * direction[i];
                }
            }
            None => {
                for i in 0..m {
                    direction[i] = -g[i];
                }
            }
        }
        if dot(&direction, &g) >= 0.0 {
            for i in 0..m {
                direction[i] = -g[i];
            }
        }

        let d_inf = max_abs(&direction);
        if d_inf == 0.0 {
            break StopReason::Tolerance;
        }
        // never ask for more than a full box traverse, then grow from the
        // previously accepted step
        let s_max = (bounds.hi - bounds.lo) / d_inf;
        let mut s = if step_prev > 0.0 { (2.0 * step_prev).min(s_max) } else { s_max };

        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let q_trial: Vec<f64> = q
                .iter()
                .zip(&direction)
                .map(|(&qi, &di)| (qi + s * di).max(bounds.lo).min(bounds.hi))
                .collect();
            if q_trial.iter().zip(&q).any(|(a, b)| a != b) {
                let j_trial = ev.eval(&q_trial, false)?.0;
                let decrease: f64 =
                    q_trial.iter().zip(&q).zip(&g).map(|((a, b), gi)| gi * (a - b)).sum();
                if j_trial <= j_val + opts.armijo_c * decrease && j_trial <= j_val {
                    accepted = Some((q_trial, j_trial, s));
                    break;
                }
            }
            s *= 0.5;
        }

        match accepted {
            None => break StopReason::LineSearchFailure,
            Some((q_new, j_new, s_used)) => {
                q = q_new;
                j_val = j_new;
                step_prev = s_used;
                let (_, g_new) = ev.eval(&q, true)?;
                g_prev = Some(std::mem::replace(&mut g, g_new.unwrap()));
                iterations += 1;
                objective_history.push(j_val);
                grad_norm_history.push(norm2(&projected_gradient(&q, &g, bounds)));
            }
        }
    };

    Ok(ReconstructionResult {
        q_star: Potential::clamped(problem.mesh, q, bounds)?,
        objective_history,
        grad_norm_history,
        iterations,
        stop_reason,
    })
}

// ---------------------------------------------------------------------------
// shared evaluation of J and its adjoint gradient
// ---------------------------------------------------------------------------

enum EvalKind<'p> {
    Elliptic {
        load_int: Vec<f64>,
        data: &'p FeFunction,
    },
    Parabolic {
        loads_int: Vec<Vec<f64>>,
        initial_int: Vec<f64>,
        tau: f64,
        n_steps: usize,
        start_index: usize,
        data: &'p [FeFunction],
    },
}

/// Caches everything q-independent (matrices, restricted loads, P_h u₀) so
/// repeated evaluations only assemble the weighted mass and solve.
struct Evaluator<'p> {
    sys: FemSystem<'p>,
    alpha: f64,
    kind: EvalKind<'p>,
}

impl<'p> Evaluator<'p> {
    fn new(problem: &'p TikhonovProblem<'p>) -> Result<Self> {
        let sys = FemSystem::new(problem.mesh);
        let kind = match (&problem.forward, &problem.observation.data) {
            (ForwardSpec::Elliptic { source }, ObservationData::Elliptic(z)) => {
                let load = assemble_load(problem.mesh, source);
                EvalKind::Elliptic { load_int: sys.restrict_vec(&load), data: z }
            }
            (
                ForwardSpec::Parabolic { source, initial, tau, n_steps, window },
                ObservationData::Parabolic(zs),
            ) => {
                let loads_int = (1..=*n_steps)
                    .map(|n| {
                        let load = assemble_load(problem.mesh, |p| source(p, n as f64 * tau));
                        sys.restrict_vec(&load)
                    })
                    .collect();
                let initial_int = sys.restrict_vec(l2_project(problem.mesh, initial)?.values());
                EvalKind::Parabolic {
                    loads_int,
                    initial_int,
                    tau: *tau,
                    n_steps: *n_steps,
                    start_index: window.start_index,
                    data: zs,
                }
            }
            _ => return invalid("observation kind does not match the forward problem"),
        };
        Ok(Evaluator { sys, alpha: problem.alpha, kind })
    }

    /// J(q) and, on request, its exact gradient.
    fn eval(&mut self, q: &[f64], want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let reg = 0.5 * self.alpha * self.sys.stiffness.bilinear(q, q);
        match &self.kind {
            EvalKind::Elliptic { load_int, data } => {
                eval_elliptic(&mut self.sys, self.alpha, load_int, data, q, want_grad, reg)
            }
            EvalKind::Parabolic { loads_int, initial_int, tau, n_steps, start_index, data } => {
                eval_parabolic(
                    &mut self.sys,
                    self.alpha,
                    loads_int,
                    initial_int,
                    *tau,
                    *n_steps,
                    *start_index,
                    data,
                    q,
                    want_grad,
                    reg,
                )
            }
        }
    }
}

fn alpha_gradient(sys: &FemSystem, alpha: f64, q: &[f64]) -> Vec<f64> {
    let mut grad = sys.stiffness.matvec_alloc(q);
    for gi in grad.iter_mut() {
        *gi *= alpha;
    }
    grad
}

fn eval_elliptic(
    sys: &mut FemSystem,
    alpha: f64,
    load_int: &[f64],
    data: &FeFunction,
    q: &[f64],
    want_grad: bool,
    reg: f64,
) -> Result<(f64, Option<Vec<f64>>)> {
    let mut system = sys.stiffness_int.clone();
    let mq = sys.weighted_mass_int(q);
    system.add_scaled(1.0, &mq);
    let solver = SpdSolver::new(&system);

    let u_int = solver.solve(load_int)?;
    let u = sys.extend_vec(&u_int);
    let residual: Vec<f64> = u.iter().zip(data.values()).map(|(a, b)| a - b).collect();
    let j = 0.5 * sys.l2_sq(&residual) + reg;
    if !want_grad {
        return Ok((j, None));
    }

    // adjoint: (A + M_q) p = M (u - z) on interior nodes (self-adjoint system)
    let m_res = sys.mass.matvec_alloc(&residual);
    let p_int = solver.solve(&sys.restrict_vec(&m_res))?;
    let p = sys.extend_vec(&p_int);

    let mut grad = alpha_gradient(sys, alpha, q);
    let mut w = vec![0.0; u.len()];
    triple_product_vector(sys.mesh, &u, &p, &mut w);
    for (gi, wi) in grad.iter_mut().zip(&w) {
        *gi -= wi;
    }
    Ok((j, Some(grad)))
}

#[allow(clippy::too_many_arguments)]
fn eval_parabolic(
    sys: &mut FemSystem,
    alpha: f64,
    loads_int: &[Vec<f64>],
    initial_int: &[f64],
    tau: f64,
    n_steps: usize,
    start_index: usize,
    data: &[FeFunction],
    q: &[f64],
    want_grad: bool,
    reg: f64,
) -> Result<(f64, Option<Vec<f64>>)> {
    let mut system = sys.stiffness_int.clone();
    system.add_scaled(1.0 / tau, &sys.mass_int);
    let mq = sys.weighted_mass_int(q);
    system.add_scaled(1.0, &mq);
    let solver = SpdSolver::new(&system);

    // forward sweep, keeping every interior state
    let mut states_int: Vec<Vec<f64>> = Vec::with_capacity(n_steps + 1);
    states_int.push(initial_int.to_vec());
    let mut rhs = vec![0.0; initial_int.len()];
    for load in loads_int {
        sys.mass_int.matvec(states_int.last().unwrap(), &mut rhs);
        for (r, l) in rhs.iter_mut().zip(load) {
            *r = *r / tau + l;
        }
        states_int.push(solver.solve(&rhs)?);
    }

    // misfit against full-length data (noise lives on boundary nodes too)
    let mut misfit = 0.0;
    let mut residuals_full: Vec<Vec<f64>> = Vec::with_capacity(data.len());
    for (k, z) in data.iter().enumerate() {
        let u_full = sys.extend_vec(&states_int[start_index + k]);
        let r: Vec<f64> = u_full.iter().zip(z.values()).map(|(a, b)| a - b).collect();
        misfit += sys.l2_sq(&r);
        residuals_full.push(r);
    }
    let j = 0.5 * tau * misfit + reg;
    if !want_grad {
        return Ok((j, None));
    }

    // adjoint sweep: (M/τ + A + M_q) pⁿ = M pⁿ⁺¹/τ + [n ≥ N0] τ M (uⁿ - zⁿ),
    // p^{N+1} = 0; the initial state is q-independent and contributes nothing.
    // gradient: g = α A q - Σ_{n=1..N} ∫ φ uⁿ pⁿ
    let mut grad = alpha_gradient(sys, alpha, q);
    let mut p_next: Vec<f64> = vec![0.0; initial_int.len()];
    let mut w = vec![0.0; q.len()];
    for n in (1..=n_steps).rev() {
        sys.mass_int.matvec(&p_next, &mut rhs);
        for r in rhs.iter_mut() {
            *r /= tau;
        }
        if n >= start_index {
            let m_res = sys.mass.matvec_alloc(&residuals_full[n - start_index]);
            for (r, mr) in rhs.iter_mut().zip(sys.restrict_vec(&m_res)) {
                *r += tau * mr;
            }
        }
        let p_int = solver.solve(&rhs)?;
        let u_full = sys.extend_vec(&states_int[n]);
        let p_full = sys.extend_vec(&p_int);
        w.iter_mut().for_each(|x| *x = 0.0);
        triple_product_vector(sys.mesh, &u_full, &p_full, &mut w);
        for (gi, wi) in grad.iter_mut().zip(&w) {
            *gi -= wi;
        }
        p_next = p_int;
    }
    Ok((j, Some(grad)))
}
