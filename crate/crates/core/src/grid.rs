//! Rectangular grids and discrete vector calculus with zero Dirichlet
//! extension.
//!
//! Scalars live on interior nodes `ξ = ((i+1)h₁, (j+1)h₂)`; the boundary
//! nodes are implicitly zero and never stored. Gradients are forward
//! differences living on faces, including the faces that cross the boundary
//! (so the gradient of the zero extension is represented exactly). The
//! divergence is the exact negative adjoint of the gradient for the
//! volume-weighted inner products, and `laplacian = divergence ∘ gradient`.
//!
//! Face layout in 2D with `n₁ × n₂` interior nodes:
//!
//! * axis-0 faces: `(n₁+1) × n₂`, face `a` of row `j` sits between extended
//!   nodes `a` and `a+1`;
//! * axis-1 faces: `n₁ × (n₂+1)`, face `b` of column `i` sits between
//!   extended rows `b` and `b+1`.
//!
//! A *cell* `(a, b)`, `0 ≤ a ≤ n₁`, `0 ≤ b ≤ n₂`, collects the forward
//! differences out of extended node `(a, b)`: the axis-0 face `(a, b-1)` and
//! the axis-1 face `(a-1, b)` whenever those exist. Nonlinear cellwise maps
//! (total variation, Yosida flux) act on the Euclidean magnitude of this
//! collocated pair.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    lengths: [f64; 2],
    counts: [usize; 2],
    spacing: [f64; 2],
}

impl Grid {
    /// Builds a 1D or 2D grid over `(0, L₁) [× (0, L₂)]` with the given
    /// interior node counts. Spacing is `h_i = L_i / (counts_i + 1)`.
    pub fn new(lengths: &[f64], counts: &[usize]) -> Result<Self> {
        let dim = lengths.len();
        if dim == 0 || dim > 2 {
            return Err(Error::InvalidGrid("dimension must be 1 or 2"));
        }
        if counts.len() != dim {
            return Err(Error::InvalidGrid("one node count per axis is required"));
        }
        let mut grid = Grid {
            dim,
            lengths: [1.0; 2],
            counts: [1; 2],
            spacing: [1.0; 2],
        };
        for axis in 0..dim {
            let (length, count) = (lengths[axis], counts[axis]);
            if !(length.is_finite() && length > 0.0) {
                return Err(Error::InvalidGrid("lengths must be positive"));
            }
            if count < 2 {
                return Err(Error::InvalidGrid("node counts must be at least 2"));
            }
            grid.lengths[axis] = length;
            grid.counts[axis] = count;
            grid.spacing[axis] = length / (count + 1) as f64;
        }
        Ok(grid)
    }

    pub fn line(length: f64, count: usize) -> Result<Self> {
        Self::new(&[length], &[count])
    }

    pub fn rect(lengths: [f64; 2], counts: [usize; 2]) -> Result<Self> {
        Self::new(&lengths, &counts)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts[..self.dim]
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn h_min(&self) -> f64 {
        self.spacing().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Number of interior nodes.
    pub fn len(&self) -> usize {
        self.counts().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `h₁ h₂` (or `h₁` in 1D): the quadrature weight of a node or a cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    /// Lebesgue measure of the domain.
    pub fn volume(&self) -> f64 {
        self.lengths().iter().product()
    }

    pub fn node_coords(&self, index: usize) -> [f64; 2] {
        let n1 = self.counts[0];
        let (i, j) = (index % n1, index / n1);
        [
            (i + 1) as f64 * self.spacing[0],
            if self.dim == 2 { (j + 1) as f64 * self.spacing[1] } else { 0.0 },
        ]
    }

    /// Sizes of the face arrays per axis (axis 1 is empty in 1D).
    pub fn face_counts(&self) -> [usize; 2] {
        let [n1, n2] = self.counts;
        match self.dim {
            1 => [n1 + 1, 0],
            _ => [(n1 + 1) * n2, n1 * (n2 + 1)],
        }
    }

    pub fn cell_count(&self) -> usize {
        let [n1, n2] = self.counts;
        match self.dim {
            1 => n1 + 1,
            _ => (n1 + 1) * (n2 + 1),
        }
    }

    fn check_mode(&self, k: &[usize]) -> Result<[usize; 2]> {
        let mut out = [1usize; 2];
        if k.len() != self.dim {
            let mut shown = [0usize; 2];
            for (s, v) in shown.iter_mut().zip(k) {
                *s = *v;
            }
            return Err(Error::InvalidMode(shown));
        }
        for (o, &v) in out.iter_mut().zip(k) {
            if v == 0 {
                let mut shown = [0usize; 2];
                shown[..k.len()].copy_from_slice(k);
                return Err(Error::InvalidMode(shown));
            }
            *o = v;
        }
        Ok(out)
    }

    /// Continuum Dirichlet eigenvalue `Σ (k_i π / L_i)²`.
    pub fn continuum_eigenvalue(&self, k: &[usize]) -> Result<f64> {
        let k = self.check_mode(k)?;
        Ok((0..self.dim)
            .map(|a| {
                let w = k[a] as f64 * PI / self.lengths[a];
                w * w
            })
            .sum())
    }

    /// Eigenvalue of `A_h = -Δ_h` for the sampled sine mode:
    /// `Σ (4/h_i²) sin²(k_i π h_i / (2 L_i))`.
    pub fn discrete_eigenvalue(&self, k: &[usize]) -> Result<f64> {
        let k = self.check_mode(k)?;
        Ok((0..self.dim)
            .map(|a| {
                let h = self.spacing[a];
                let s = libm::sin(k[a] as f64 * PI * h / (2.0 * self.lengths[a]));
                4.0 / (h * h) * s * s
            })
            .sum())
    }

    /// Samples `e_k(ξ) = Π √(2/L_i) sin(k_i π ξ_i / L_i)` at the interior
    /// nodes and returns it with its continuum eigenvalue. The samples are
    /// also exact eigenvectors of the discrete Laplacian.
    pub fn eigenfunction(&self, k: &[usize]) -> Result<(ScalarField, f64)> {
        let lambda = self.continuum_eigenvalue(k)?;
        let k = self.check_mode(k)?;
        let factors: Vec<Vec<f64>> = (0..self.dim)
            .map(|a| {
                let norm = libm::sqrt(2.0 / self.lengths[a]);
                (1..=self.counts[a])
                    .map(|i| {
                        let xi = i as f64 * self.spacing[a];
                        norm * libm::sin(k[a] as f64 * PI * xi / self.lengths[a])
                    })
                    .collect()
            })
            .collect();
        let n1 = self.counts[0];
        let values = (0..self.len())
            .map(|idx| {
                let mut v = factors[0][idx % n1];
                if self.dim == 2 {
                    v *= factors[1][idx / n1];
                }
                v
            })
            .collect();
        Ok((ScalarField { grid: *self, values }, lambda))
    }
}

/// Node-valued field with implicit zero boundary values.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        ScalarField { grid, values: vec![value; grid.len()] }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid("value count does not match the node count"));
        }
        Ok(ScalarField { grid, values })
    }

    /// Samples `f` at the interior node coordinates.
    pub fn from_fn(grid: Grid, mut f: impl FnMut([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.node_coords(i))).collect();
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let values = self.values.iter().map(|v| alpha * v).collect();
        ScalarField { grid: self.grid, values }
    }

    /// `self + alpha * other`
    pub fn add_scaled(&self, alpha: f64, other: &ScalarField) -> Result<Self> {
        self.same_grid(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + alpha * b).collect();
        Ok(ScalarField { grid: self.grid, values })
    }

    pub fn same_grid(&self, other: &ScalarField) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// Volume-weighted `⟨u, v⟩ = Σ h^N u_i v_i`.
    pub fn inner(&self, other: &ScalarField) -> Result<f64> {
        self.same_grid(other)?;
        Ok(self.grid.cell_volume() * dot(&self.values, &other.values))
    }

    /// `(Σ h^N |u_i|^p)^{1/p}`; `p = ∞` gives the max norm.
    pub fn norm_p(&self, p: f64) -> Result<f64> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::InvalidExponent(p));
        }
        if p.is_infinite() {
            return Ok(self.norm_inf());
        }
        Ok(weighted_p_norm(self.grid.cell_volume(), self.values.iter().copied(), p))
    }

    pub fn norm2(&self) -> f64 {
        libm::sqrt(self.grid.cell_volume() * dot(&self.values, &self.values))
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Discrete total variation of the zero extension: the cell-volume
    /// weighted sum of the Euclidean magnitudes of the collocated forward
    /// differences, boundary-crossing differences included.
    pub fn tv(&self) -> f64 {
        gradient(self).integrate_cells(magnitude)
    }

    /// `(Σ_cells h^N |∇_h u|^p)^{1/p}` with the isotropic cell magnitude.
    pub fn grad_norm_p(&self, p: f64) -> Result<f64> {
        if p.is_nan() || p < 1.0 || p.is_infinite() {
            return Err(Error::InvalidExponent(p));
        }
        let g = gradient(self);
        let s = g.integrate_cells(|c| libm::pow(magnitude(c), p));
        Ok(libm::pow(s, 1.0 / p))
    }
}

/// Face-valued field, one component array per axis in the staggered layout
/// described at the module level.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: Grid,
    components: [Vec<f64>; 2],
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        let [c0, c1] = grid.face_counts();
        VectorField { grid, components: [vec![0.0; c0], vec![0.0; c1]] }
    }

    pub fn from_components(grid: Grid, components: [Vec<f64>; 2]) -> Result<Self> {
        let counts = grid.face_counts();
        if components[0].len() != counts[0] || components[1].len() != counts[1] {
            return Err(Error::InvalidGrid("component sizes do not match the face layout"));
        }
        Ok(VectorField { grid, components })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn component(&self, axis: usize) -> &[f64] {
        &self.components[axis]
    }

    pub fn component_mut(&mut self, axis: usize) -> &mut [f64] {
        &mut self.components[axis]
    }

    pub(crate) fn components_mut(&mut self) -> &mut [Vec<f64>; 2] {
        &mut self.components
    }

    pub(crate) fn components(&self) -> &[Vec<f64>; 2] {
        &self.components
    }

    /// Volume-weighted face inner product.
    pub fn inner(&self, other: &VectorField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        let s = dot(&self.components[0], &other.components[0])
            + dot(&self.components[1], &other.components[1]);
        Ok(self.grid.cell_volume() * s)
    }

    pub fn norm2(&self) -> f64 {
        libm::sqrt(self.inner(self).unwrap_or(0.0))
    }

    /// Applies `f` to the collocated pair of every cell and writes back the
    /// components that exist in that cell.
    pub fn map_cells(&mut self, mut f: impl FnMut([f64; 2]) -> [f64; 2]) {
        let grid = self.grid;
        let [c0, c1] = &mut self.components;
        if grid.dim == 1 {
            for v in c0.iter_mut() {
                *v = f([*v, 0.0])[0];
            }
            return;
        }
        let [n1, n2] = grid.counts;
        for b in 0..=n2 {
            for a in 0..=n1 {
                let xi = (b >= 1 && b <= n2).then(|| a + (n1 + 1) * (b - 1));
                let yi = (a >= 1 && a <= n1).then(|| (a - 1) + n1 * b);
                if xi.is_none() && yi.is_none() {
                    continue;
                }
                let g = [xi.map_or(0.0, |i| c0[i]), yi.map_or(0.0, |i| c1[i])];
                let r = f(g);
                if let Some(i) = xi {
                    c0[i] = r[0];
                }
                if let Some(i) = yi {
                    c1[i] = r[1];
                }
            }
        }
    }

    /// `Σ_cells h^N f(g_cell)`.
    pub fn integrate_cells(&self, mut f: impl FnMut([f64; 2]) -> f64) -> f64 {
        let grid = self.grid;
        let [c0, c1] = &self.components;
        let mut sum = 0.0;
        if grid.dim == 1 {
            for v in c0 {
                sum += f([*v, 0.0]);
            }
        } else {
            let [n1, n2] = grid.counts;
            for b in 0..=n2 {
                for a in 0..=n1 {
                    let xi = (b >= 1 && b <= n2).then(|| a + (n1 + 1) * (b - 1));
                    let yi = (a >= 1 && a <= n1).then(|| (a - 1) + n1 * b);
                    if xi.is_none() && yi.is_none() {
                        continue;
                    }
                    sum += f([xi.map_or(0.0, |i| c0[i]), yi.map_or(0.0, |i| c1[i])]);
                }
            }
        }
        grid.cell_volume() * sum
    }

    /// Largest cell magnitude `max |g_cell|`.
    pub fn max_magnitude(&self) -> f64 {
        let mut m = 0.0f64;
        let mut probe = self.clone();
        probe.map_cells(|g| {
            m = m.max(magnitude(g));
            g
        });
        m
    }
}

#[inline]
pub fn magnitude(g: [f64; 2]) -> f64 {
    libm::sqrt(g[0] * g[0] + g[1] * g[1])
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn weighted_p_norm(weight: f64, values: impl Iterator<Item = f64>, p: f64) -> f64 {
    let s: f64 = if p == 1.0 {
        values.map(f64::abs).sum()
    } else if p == 2.0 {
        values.map(|v| v * v).sum()
    } else {
        values.map(|v| libm::pow(v.abs(), p)).sum()
    };
    libm::pow(weight * s, 1.0 / p)
}

/// Forward differences onto faces, with the zero extension across the
/// boundary.
pub fn gradient(u: &ScalarField) -> VectorField {
    let mut out = VectorField::zeros(u.grid);
    gradient_into(&u.grid, &u.values, &mut out.components);
    out
}

pub(crate) fn gradient_into(grid: &Grid, u: &[f64], out: &mut [Vec<f64>; 2]) {
    let [n1, n2] = grid.counts;
    let [h1, h2] = grid.spacing;
    let [g0, g1] = out;
    if grid.dim == 1 {
        for a in 0..=n1 {
            let left = if a >= 1 { u[a - 1] } else { 0.0 };
            let right = if a < n1 { u[a] } else { 0.0 };
            g0[a] = (right - left) / h1;
        }
        return;
    }
    for j in 0..n2 {
        let row = &u[n1 * j..n1 * (j + 1)];
        let base = (n1 + 1) * j;
        for a in 0..=n1 {
            let left = if a >= 1 { row[a - 1] } else { 0.0 };
            let right = if a < n1 { row[a] } else { 0.0 };
            g0[base + a] = (right - left) / h1;
        }
    }
    for b in 0..=n2 {
        for i in 0..n1 {
            let below = if b >= 1 { u[i + n1 * (b - 1)] } else { 0.0 };
            let above = if b < n2 { u[i + n1 * b] } else { 0.0 };
            g1[i + n1 * b] = (above - below) / h2;
        }
    }
}

/// Backward differences of face values onto nodes; the exact negative
/// adjoint of [`gradient`]: `⟨∇u, p⟩ = -⟨u, div p⟩`.
pub fn divergence(p: &VectorField) -> ScalarField {
    let mut out = ScalarField::zeros(p.grid);
    divergence_into(&p.grid, &p.components, &mut out.values);
    out
}

pub(crate) fn divergence_into(grid: &Grid, p: &[Vec<f64>; 2], out: &mut [f64]) {
    let [n1, n2] = grid.counts;
    let [h1, h2] = grid.spacing;
    let [p0, p1] = p;
    if grid.dim == 1 {
        for i in 0..n1 {
            out[i] = (p0[i + 1] - p0[i]) / h1;
        }
        return;
    }
    for j in 0..n2 {
        for i in 0..n1 {
            let fx = (n1 + 1) * j + i;
            let dx = (p0[fx + 1] - p0[fx]) / h1;
            let dy = (p1[i + n1 * (j + 1)] - p1[i + n1 * j]) / h2;
            out[i + n1 * j] = dx + dy;
        }
    }
}

/// `Δ_h u = div(∇u)`, the 5-point (3-point in 1D) Dirichlet Laplacian.
pub fn laplacian(u: &ScalarField) -> ScalarField {
    let mut out = ScalarField::zeros(u.grid);
    laplacian_into(&u.grid, &u.values, &mut out.values);
    out
}

/// Fused `div ∘ grad`; performs the same floating point operations in the
/// same order as the composition, so the results agree bit for bit.
pub(crate) fn laplacian_into(grid: &Grid, u: &[f64], out: &mut [f64]) {
    let [n1, n2] = grid.counts;
    let [h1, h2] = grid.spacing;
    if grid.dim == 1 {
        for i in 0..n1 {
            let c = u[i];
            let l = if i >= 1 { u[i - 1] } else { 0.0 };
            let r = if i + 1 < n1 { u[i + 1] } else { 0.0 };
            out[i] = ((r - c) / h1 - (c - l) / h1) / h1;
        }
        return;
    }
    for j in 0..n2 {
        for i in 0..n1 {
            let idx = i + n1 * j;
            let c = u[idx];
            let l = if i >= 1 { u[idx - 1] } else { 0.0 };
            let r = if i + 1 < n1 { u[idx + 1] } else { 0.0 };
            let d = if j >= 1 { u[idx - n1] } else { 0.0 };
            let a = if j + 1 < n2 { u[idx + n1] } else { 0.0 };
            let dx = ((r - c) / h1 - (c - l) / h1) / h1;
            let dy = ((a - c) / h2 - (c - d) / h2) / h2;
            out[idx] = dx + dy;
        }
    }
}

/// Relative residual target of the resolvent solves.
pub const RESOLVENT_TOLERANCE: f64 = 1e-10;

/// `J_ε u = (I + ε A_h)^{-1} u` with `A_h = -Δ_h`, by conjugate gradients.
pub fn resolvent(u: &ScalarField, epsilon: f64) -> Result<ScalarField> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParams("resolvent parameter must be finite and >= 0"));
    }
    if epsilon == 0.0 {
        return Ok(u.clone());
    }
    let mut solver = ShiftedLaplacianSolver::new(u.grid);
    let mut out = u.values.clone();
    solver.solve(epsilon, &u.values, &mut out)?;
    Ok(ScalarField { grid: u.grid, values: out })
}

/// Conjugate gradient solver for `(I - εΔ_h) v = b` with reusable buffers.
#[derive(Clone, Debug)]
pub struct ShiftedLaplacianSolver {
    grid: Grid,
    r: Vec<f64>,
    p: Vec<f64>,
    ap: Vec<f64>,
    lap: Vec<f64>,
}

impl ShiftedLaplacianSolver {
    pub fn new(grid: Grid) -> Self {
        let n = grid.len();
        ShiftedLaplacianSolver { grid, r: vec![0.0; n], p: vec![0.0; n], ap: vec![0.0; n], lap: vec![0.0; n] }
    }

    fn apply(&mut self, epsilon: f64, x: &[f64], out_is_ap: bool) {
        laplacian_into(&self.grid, x, &mut self.lap);
        let target = if out_is_ap { &mut self.ap } else { &mut self.r };
        for ((t, xv), l) in target.iter_mut().zip(x).zip(&self.lap) {
            *t = xv - epsilon * l;
        }
    }

    /// Solves in place; `x` holds the initial guess on entry. Iterates until
    /// `‖b - (I - εΔ_h)x‖₂ ≤ 1e-10 ‖b‖₂` (checked on the true residual) or
    /// `10 · n` iterations.
    pub fn solve(&mut self, epsilon: f64, b: &[f64], x: &mut [f64]) -> Result<usize> {
        let n = b.len();
        let b_norm = libm::sqrt(dot(b, b));
        if b_norm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return Ok(0);
        }
        let target = RESOLVENT_TOLERANCE * b_norm;
        let max_iter = 10 * n;
        let mut iterations = 0;
        loop {
            // true residual r = b - A x
            self.apply(epsilon, x, false);
            for (r, bv) in self.r.iter_mut().zip(b) {
                *r = bv - *r;
            }
            let mut rr = dot(&self.r, &self.r);
            if libm::sqrt(rr) <= target {
                return Ok(iterations);
            }
            if iterations >= max_iter {
                return Err(Error::LinearSolve { iterations, residual: libm::sqrt(rr) / b_norm });
            }
            self.p.copy_from_slice(&self.r);
            while iterations < max_iter {
                iterations += 1;
                let p = core::mem::take(&mut self.p);
                self.apply(epsilon, &p, true);
                self.p = p;
                let pap = dot(&self.p, &self.ap);
                if !(pap > 0.0) {
                    return Err(Error::LinearSolve { iterations, residual: libm::sqrt(rr) / b_norm });
                }
                let alpha = rr / pap;
                for ((xv, pv), (rv, apv)) in x.iter_mut().zip(&self.p).zip(self.r.iter_mut().zip(&self.ap)) {
                    *xv += alpha * pv;
                    *rv -= alpha * apv;
                }
                let rr_new = dot(&self.r, &self.r);
                // stop a little below the target so the true residual passes
                if libm::sqrt(rr_new) <= 0.5 * target {
                    break;
                }
                let beta = rr_new / rr;
                for (pv, rv) in self.p.iter_mut().zip(&self.r) {
                    *pv = rv + beta * *pv;
                }
                rr = rr_new;
            }
        }
    }
}
