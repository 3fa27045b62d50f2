//! Reconstruction of a space-dependent potential coefficient in elliptic and
//! parabolic PDEs from noisy distributed observations.
//!
//! The governing equations are
//!
//! ```text
//!   -Δu + q u = f            in Ω,  u = 0 on ∂Ω         (elliptic)
//!   ∂ₜu - Δu + q u = f       in Ω×(0,T), u(0) = u₀      (parabolic)
//! ```
//!
//! with the unknown potential `q` constrained to a box `c0 ≤ q ≤ c1`. Given
//! noisy observations of the state, the potential is recovered by minimising
//! an output least-squares functional with an H¹-seminorm Tikhonov penalty,
//! discretised with continuous piecewise linear finite elements in space (and
//! backward Euler in time), and driven by a projected nonlinear conjugate
//! gradient method with exact discrete-adjoint gradients.
//!
//! Module map:
//!
//! * [`mesh`] — uniform interval / unit-square triangulations and geometric queries
//! * [`fem`] — P1 assembly, projections, discrete norms, sparse linear solves
//! * [`forward`] — elliptic solves and backward-Euler trajectories
//! * [`inverse`] — noise synthesis, Tikhonov objective, adjoint gradients, box-projected NCG
//! * [`analysis`] — error metrics, rate fitting, 1D Green's function, positivity and stability checks

mod error;

pub mod analysis;
pub mod fem;
pub mod forward;
pub mod inverse;
pub mod mesh;

pub use error::{Error, Result};
