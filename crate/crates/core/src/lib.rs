//! divflow: a solver and verification harness for divergence-form
//! stochastic PDEs
//!
//! ```text
//! du − div γ(∇u) dt = B(t, u) dW,   u(0) = u₀,   u|∂D = 0,
//! ```
//!
//! where `γ = ∇k` for a convex potential `k` that may grow faster than
//! any polynomial, and `W` is a (truncated) cylindrical Wiener process.
//!
//! The solver runs a three-layer approximation cascade:
//!
//! 1. **λ-layer** — the gradient is replaced by its Yosida regularization
//!    `γ_λ` (monotone, `1/λ`-Lipschitz) plus a small elliptic term `λΔ`,
//!    stepped semi-implicitly ([`solver`]).
//! 2. **ε-layer** — additive noise is mollified by `(I − εΔ)^{-m}`
//!    ([`noise`]), giving trajectories regular enough to compare.
//! 3. **Picard layer** — multiplicative noise is handled by a fixed-point
//!    loop that is strictly contractive in an exponentially weighted norm
//!    ([`solver::solve_multiplicative`]).
//!
//! Each analytic identity behind those layers has an executable analogue
//! in [`verify`]: the energy identity for `½‖u‖²` with its Itô correction
//! and martingale terms, the deterministic energy identity, a maximal
//! estimate for stochastic convolutions, and a uniform-integrability
//! diagnostic driven by convex-conjugate integrals.

pub mod config;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod noise;
pub mod potential;
pub mod rng;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
