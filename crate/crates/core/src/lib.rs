//! Numerical core for the stochastic total variation flow
//!
//! ```text
//! dX = div[sgn(∇X)] dt + X dW   in (0, T) × O,   X = 0 on ∂O
//! ```
//!
//! on axis-aligned rectangles (or intervals), approximated through the
//! Yosida-regularized flux `ψ̃_λ(v) = ψ_λ(v) + λv` and through its rescaled
//! random-PDE form `Y = e^{-W} X`.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no IO. It provides
//!
//! * [`grid`]: staggered finite differences with implicit zero Dirichlet
//!   extension, the discrete total variation and the Dirichlet resolvent,
//! * [`noise`]: the truncated eigen-expansion Wiener process and
//!   seed-addressed Brownian paths,
//! * [`regularization`]: the Yosida map, Moreau envelope and the regularized
//!   energy,
//! * [`solver`]: Euler–Maruyama time stepping of the direct and the rescaled
//!   equations, and closed-form test processes,
//! * [`analysis`]: pure estimators and certificates (confidence intervals,
//!   the extinction bound, the Sobolev ratio estimate, resolvent
//!   contraction, δ-monotonicity, the variational-inequality residual).
//!
//! Monte Carlo orchestration, file formats and the command line live in the
//! companion `tvflow` crate.

#![no_std]

extern crate alloc;

pub mod analysis;
pub mod error;
pub mod grid;
pub mod noise;
pub mod regularization;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{Grid, ScalarField, VectorField};
pub use noise::{BrownianPath, NoiseModel};
pub use regularization::Regularization;
pub use solver::{Scheme, SolverParams, Trajectory, Variant};
