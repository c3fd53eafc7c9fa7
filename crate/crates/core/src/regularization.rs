//! Yosida approximation of the sign graph and the Moreau envelope of the
//! Euclidean norm.
//!
//! ```text
//! ψ_λ(v) = v/λ        if |v| ≤ λ          j_λ(v) = |v|²/(2λ)   if |v| ≤ λ
//!          v/|v|      if |v| > λ                   |v| - λ/2   if |v| > λ
//! ```
//!
//! with `∇j_λ = ψ_λ` and the tilted flux `ψ̃_λ(v) = ψ_λ(v) + λv`.

use crate::error::{Error, Result};
use crate::grid::{gradient, magnitude, ScalarField, VectorField};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Regularization {
    lambda: f64,
}

#[inline]
fn norm<const N: usize>(v: &[f64; N]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

impl Regularization {
    /// `λ` must lie in `(0, 1]`.
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidLambda(lambda));
        }
        Ok(Regularization { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Yosida map; the `v/λ` branch is taken on the sphere `|v| = λ`.
    #[inline]
    pub fn psi<const N: usize>(&self, v: [f64; N]) -> [f64; N] {
        let r = norm(&v);
        let scale = if r <= self.lambda { 1.0 / self.lambda } else { 1.0 / r };
        v.map(|x| x * scale)
    }

    /// `ψ̃_λ(v) = ψ_λ(v) + λv`
    #[inline]
    pub fn psi_tilde<const N: usize>(&self, v: [f64; N]) -> [f64; N] {
        let r = norm(&v);
        let scale = if r <= self.lambda { 1.0 / self.lambda } else { 1.0 / r } + self.lambda;
        v.map(|x| x * scale)
    }

    /// Moreau–Yosida envelope of `|·|`.
    #[inline]
    pub fn j<const N: usize>(&self, v: [f64; N]) -> f64 {
        self.j_of_norm(norm(&v))
    }

    #[inline]
    pub fn j_of_norm(&self, r: f64) -> f64 {
        if r <= self.lambda {
            r * r / (2.0 * self.lambda)
        } else {
            r - 0.5 * self.lambda
        }
    }

    /// `Σ_cells h^N j_λ(∇_h u)`, the envelope part of the regularized energy.
    pub fn phi_lambda(&self, u: &ScalarField) -> f64 {
        self.phi_lambda_of(&gradient(u))
    }

    pub fn phi_lambda_of(&self, grad: &VectorField) -> f64 {
        grad.integrate_cells(|g| self.j_of_norm(magnitude(g)))
    }

    /// `Σ_cells h^N (λ/2)|∇_h u|²`, reported separately from [`Self::phi_lambda`].
    pub fn quadratic_part(&self, u: &ScalarField) -> f64 {
        0.5 * self.lambda * gradient(u).integrate_cells(|g| g[0] * g[0] + g[1] * g[1])
    }

    /// `ψ̃_λ` applied cellwise to the discrete gradient of `u`.
    pub fn psi_tilde_flux(&self, u: &ScalarField) -> VectorField {
        let mut g = gradient(u);
        g.map_cells(|c| self.psi_tilde(c));
        g
    }

    /// `ψ_λ` applied cellwise to the discrete gradient of `u`.
    pub fn psi_flux(&self, u: &ScalarField) -> VectorField {
        let mut g = gradient(u);
        g.map_cells(|c| self.psi(c));
        g
    }
}
