//! Euler–Maruyama time stepping of the regularized flow.
//!
//! Direct form (Itô, noise at the left endpoint):
//!
//! ```text
//! explicit:       X⁺ = X + dt·div ψ̃_λ(∇X) + X·ΔW
//! semi-implicit:  (I - θλ dt Δ) X⁺ = X + dt·div ψ_λ(∇X) + (1-θ)λ dt ΔX + X·ΔW
//! ```
//!
//! Rescaled form, `Y = e^{-W} X` (always explicit):
//!
//! ```text
//! Y⁺ = Y + dt·[ e^{-W_n} div ψ̃_λ(∇(e^{W_n} Y)) - ½ μ Y ]
//! ```
//!
//! `W_n` is the sampled noise field at step `n`, differentiated on the grid
//! like any other field.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{self, magnitude, Grid, ScalarField, ShiftedLaplacianSolver, VectorField};
use crate::noise::{BrownianPath, NoiseModel};
use crate::regularization::Regularization;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Explicit,
    SemiImplicit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Direct,
    Rescaled,
}

/// Default number of recorded states per trajectory.
pub const DEFAULT_RECORDS: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverParams {
    pub regularization: Regularization,
    pub dt: f64,
    pub horizon: f64,
    pub scheme: Scheme,
    /// Implicitness weight of the `λΔ` part (semi-implicit scheme only).
    pub theta: f64,
    /// Record a state every `record_stride` steps; `None` gives
    /// `⌈steps / 200⌉`.
    pub record_stride: Option<usize>,
}

impl SolverParams {
    pub fn new(lambda: f64, dt: f64, horizon: f64) -> Result<Self> {
        let p = SolverParams {
            regularization: Regularization::new(lambda)?,
            dt,
            horizon,
            scheme: Scheme::Explicit,
            theta: 1.0,
            record_stride: None,
        };
        p.check()?;
        Ok(p)
    }

    /// Parameters at the stability bound of `grid`.
    pub fn at_guard(grid: &Grid, lambda: f64, horizon: f64) -> Result<Self> {
        let dt = Self::stability_bound(grid, lambda);
        Self::new(lambda, dt, horizon.max(dt))
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_record_stride(mut self, stride: usize) -> Self {
        self.record_stride = Some(stride);
        self
    }

    pub fn lambda(&self) -> f64 {
        self.regularization.lambda()
    }

    fn check(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParams("dt must be positive"));
        }
        if !(self.horizon >= self.dt * (1.0 - 1e-9)) || !self.horizon.is_finite() {
            return Err(Error::InvalidParams("horizon must be at least one time step"));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::InvalidParams("theta must lie in [0, 1]"));
        }
        if self.record_stride == Some(0) {
            return Err(Error::InvalidParams("record stride must be positive"));
        }
        Ok(())
    }

    /// `dt ≤ h²_min λ / (2N(1+λ))`: the explicit flux `ψ̃_λ` has Lipschitz
    /// constant `1/λ + λ`. The semi-implicit scheme is held to the same
    /// bound.
    pub fn stability_bound(grid: &Grid, lambda: f64) -> f64 {
        let h = grid.h_min();
        h * h * lambda / (2.0 * grid.dim() as f64 * (1.0 + lambda))
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        self.check()?;
        let bound = Self::stability_bound(grid, self.lambda());
        if self.dt > bound * (1.0 + 1e-12) {
            return Err(Error::StabilityGuard { dt: self.dt, bound });
        }
        Ok(())
    }

    /// Number of steps, `round(T / dt)`.
    pub fn steps(&self) -> usize {
        libm::round(self.horizon / self.dt) as usize
    }

    pub fn effective_stride(&self) -> usize {
        self.record_stride.unwrap_or_else(|| self.steps().div_ceil(DEFAULT_RECORDS).max(1))
    }
}

/// Scratch buffers for one trajectory.
#[derive(Clone, Debug)]
struct Workspace {
    grid: Grid,
    grad: VectorField,
    div: Vec<f64>,
    lap: Vec<f64>,
    tmp: Vec<f64>,
    cg: Option<ShiftedLaplacianSolver>,
}

impl Workspace {
    fn new(grid: Grid) -> Self {
        let n = grid.len();
        Workspace {
            grid,
            grad: VectorField::zeros(grid),
            div: vec![0.0; n],
            lap: vec![0.0; n],
            tmp: vec![0.0; n],
            cg: None,
        }
    }

    /// `div` ← `div ψ(∇u)` with `ψ = ψ̃_λ` (tilted) or `ψ_λ`.
    fn flux_divergence(&mut self, reg: &Regularization, tilted: bool, u: &[f64]) {
        grid::gradient_into(&self.grid, u, self.grad.components_mut());
        if tilted {
            self.grad.map_cells(|g| reg.psi_tilde(g));
        } else {
            self.grad.map_cells(|g| reg.psi(g));
        }
        grid::divergence_into(&self.grid, self.grad.components(), &mut self.div);
    }

    /// One direct step; `x` is overwritten with `X_{n+1}`.
    fn direct(&mut self, params: &SolverParams, dw: &[f64], x: &mut [f64]) -> Result<()> {
        let dt = params.dt;
        let reg = &params.regularization;
        match params.scheme {
            Scheme::Explicit => {
                self.flux_divergence(reg, true, x);
                for ((xv, d), w) in x.iter_mut().zip(&self.div).zip(dw) {
                    *xv += dt * d + *xv * w;
                }
            }
            Scheme::SemiImplicit => {
                let lam = reg.lambda();
                self.flux_divergence(reg, false, x);
                let explicit_part = (1.0 - params.theta) * lam * dt;
                if explicit_part != 0.0 {
                    grid::laplacian_into(&self.grid, x, &mut self.lap);
                }
                for (i, t) in self.tmp.iter_mut().enumerate() {
                    let mut v = x[i] + dt * self.div[i] + x[i] * dw[i];
                    if explicit_part != 0.0 {
                        v += explicit_part * self.lap[i];
                    }
                    *t = v;
                }
                let eps = params.theta * lam * dt;
                if eps == 0.0 {
                    x.copy_from_slice(&self.tmp);
                } else {
                    let grid = self.grid;
                    let cg = self.cg.get_or_insert_with(|| ShiftedLaplacianSolver::new(grid));
                    x.copy_from_slice(&self.tmp);
                    cg.solve(eps, &self.tmp, x)?;
                }
            }
        }
        Ok(())
    }

    /// One rescaled step with the noise field `w = W_n`.
    fn rescaled(&mut self, params: &SolverParams, w: &[f64], mu: &[f64], y: &mut [f64]) -> Result<()> {
        if params.scheme != Scheme::Explicit {
            return Err(Error::Unsupported("the rescaled equation is stepped explicitly only"));
        }
        let dt = params.dt;
        for ((t, yv), wv) in self.tmp.iter_mut().zip(y.iter()).zip(w) {
            *t = libm::exp(*wv) * yv;
        }
        let v = core::mem::take(&mut self.tmp);
        self.flux_divergence(&params.regularization, true, &v);
        self.tmp = v;
        for (i, yv) in y.iter_mut().enumerate() {
            *yv += dt * (libm::exp(-w[i]) * self.div[i] - 0.5 * mu[i] * *yv);
        }
        Ok(())
    }
}

fn check_finite(values: &[f64], step: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { step })
    }
}

fn check_inputs(x: &ScalarField, model: &NoiseModel, path: &BrownianPath, params: &SolverParams) -> Result<()> {
    if x.grid() != model.grid() {
        return Err(Error::GridMismatch);
    }
    model.check_path(path)?;
    if (path.dt() - params.dt).abs() > 1e-12 * params.dt {
        return Err(Error::InvalidParams("Brownian path time step differs from the solver time step"));
    }
    params.validate(x.grid())
}

/// A single direct step from `X_n` using increment `n` of `path`.
pub fn step_direct(
    x: &ScalarField,
    model: &NoiseModel,
    path: &BrownianPath,
    n: usize,
    params: &SolverParams,
) -> Result<ScalarField> {
    check_inputs(x, model, path, params)?;
    let dw = model.increment_field(path, n)?;
    let mut ws = Workspace::new(*x.grid());
    let mut out = x.clone();
    ws.direct(params, dw.values(), out.values_mut())?;
    check_finite(out.values(), n + 1)?;
    Ok(out)
}

/// A single rescaled step from `Y_n` using the noise field `W_n`.
pub fn step_rescaled(
    y: &ScalarField,
    model: &NoiseModel,
    path: &BrownianPath,
    n: usize,
    params: &SolverParams,
) -> Result<ScalarField> {
    check_inputs(y, model, path, params)?;
    let w = model.w_field(path, n)?;
    let mut ws = Workspace::new(*y.grid());
    let mut out = y.clone();
    ws.rescaled(params, w.values(), model.mu_field().values(), out.values_mut())?;
    check_finite(out.values(), n + 1)?;
    Ok(out)
}

/// `Ã_λ y` as a node field: the operator with
/// `⟨Ã_λ y, φ⟩ = Σ_cells h^N ψ̃_λ(∇(e^W y))·∇(e^{-W} φ) + ½ ⟨μ y, φ⟩`,
/// i.e. `Ã_λ y = -e^{-W} div ψ̃_λ(∇(e^W y)) + ½ μ y`, so that the rescaled
/// equation reads `dY/dt + Ã_λ Y = 0`.
pub fn rescaled_operator(
    reg: &Regularization,
    w: &ScalarField,
    mu: &ScalarField,
    y: &ScalarField,
) -> Result<ScalarField> {
    y.same_grid(w)?;
    y.same_grid(mu)?;
    let ew = ScalarField::from_values(
        *y.grid(),
        y.values().iter().zip(w.values()).map(|(a, b)| libm::exp(*b) * a).collect(),
    )?;
    let flux = reg.psi_tilde_flux(&ew);
    let div = grid::divergence(&flux);
    let values = (0..y.grid().len())
        .map(|i| -libm::exp(-w.values()[i]) * div.values()[i] + 0.5 * mu.values()[i] * y.values()[i])
        .collect();
    ScalarField::from_values(*y.grid(), values)
}

/// Sequential integrator for one trajectory.
///
/// For [`Variant::Rescaled`] the internal state is `Y`; [`Stepper::physical`]
/// returns `X = e^{W_n} Y_n`.
#[derive(Clone, Debug)]
pub struct Stepper<'a> {
    model: &'a NoiseModel,
    path: &'a BrownianPath,
    params: SolverParams,
    variant: Variant,
    state: ScalarField,
    step: usize,
    steps: usize,
    brownian: Vec<f64>,
    w: Vec<f64>,
    dw: Vec<f64>,
    ws: Workspace,
}

impl<'a> Stepper<'a> {
    pub fn new(
        x: &ScalarField,
        model: &'a NoiseModel,
        path: &'a BrownianPath,
        params: SolverParams,
        variant: Variant,
    ) -> Result<Self> {
        check_inputs(x, model, path, &params)?;
        if variant == Variant::Rescaled && params.scheme != Scheme::Explicit {
            return Err(Error::Unsupported("the rescaled equation is stepped explicitly only"));
        }
        let steps = params.steps();
        if path.steps() < steps {
            return Err(Error::InvalidParams("Brownian path is shorter than the horizon"));
        }
        let n = x.grid().len();
        Ok(Stepper {
            model,
            path,
            params,
            variant,
            state: x.clone(),
            step: 0,
            steps,
            brownian: vec![0.0; model.mode_count()],
            w: vec![0.0; n],
            dw: vec![0.0; n],
            ws: Workspace::new(*x.grid()),
        })
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.params.dt
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.steps
    }

    /// Solved variable: `X` (direct) or `Y` (rescaled).
    pub fn state(&self) -> &ScalarField {
        &self.state
    }

    /// Current noise field `W_n`.
    pub fn noise_field(&self) -> &[f64] {
        &self.w
    }

    /// The solution of the original equation at the current step.
    pub fn physical(&self) -> ScalarField {
        match self.variant {
            Variant::Direct => self.state.clone(),
            Variant::Rescaled => {
                let mut x = self.state.clone();
                for (v, w) in x.values_mut().iter_mut().zip(&self.w) {
                    *v *= libm::exp(*w);
                }
                x
            }
        }
    }

    /// Advances one step; fails on a linear-solve failure or a non-finite
    /// state (the step index is reported).
    pub fn advance(&mut self) -> Result<()> {
        if self.is_done() {
            return Err(Error::StepOutOfRange { index: self.step + 1, steps: self.steps });
        }
        let n = self.step;
        match self.variant {
            Variant::Direct => {
                self.dw.iter_mut().for_each(|v| *v = 0.0);
                let path = self.path;
                self.model.accumulate(|k| path.increment(k, n), &mut self.dw);
                self.ws.direct(&self.params, &self.dw, self.state.values_mut())?;
            }
            Variant::Rescaled => {
                let mu = self.model.mu_field().values();
                self.ws.rescaled(&self.params, &self.w, mu, self.state.values_mut())?;
            }
        }
        for (k, b) in self.brownian.iter_mut().enumerate() {
            *b += self.path.increment(k, n);
        }
        if self.variant == Variant::Rescaled {
            self.w.iter_mut().for_each(|v| *v = 0.0);
            let b = &self.brownian;
            self.model.accumulate(|k| b[k], &mut self.w);
        }
        self.step += 1;
        check_finite(self.state.values(), self.step)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormRecord {
    pub t: f64,
    pub l2: f64,
    /// `|X|_N` with `N` the grid dimension.
    pub l_n: f64,
    pub tv: f64,
    pub phi_lambda: f64,
}

impl NormRecord {
    pub fn of(x: &ScalarField, reg: &Regularization, t: f64) -> Self {
        let grad = grid::gradient(x);
        let mut phi = 0.0;
        let tv = grad.integrate_cells(|g| {
            let m = magnitude(g);
            phi += reg.j_of_norm(m);
            m
        });
        let n = x.grid().dim() as f64;
        NormRecord {
            t,
            l2: x.norm2(),
            l_n: x.norm_p(n).unwrap_or(f64::NAN),
            tv,
            phi_lambda: phi * x.grid().cell_volume(),
        }
    }
}

/// Time-indexed states (of the original equation, for either variant) and
/// per-step norms.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub params: SolverParams,
    pub variant: Variant,
    pub record_steps: Vec<usize>,
    pub times: Vec<f64>,
    pub states: Vec<ScalarField>,
    /// One record per step, `n = 0..=steps`.
    pub norms: Vec<NormRecord>,
}

impl Trajectory {
    pub fn final_state(&self) -> &ScalarField {
        self.states.last().expect("trajectory records the initial state")
    }
}

/// Integrates from `x` to the horizon.
pub fn solve(
    x: &ScalarField,
    model: &NoiseModel,
    path: &BrownianPath,
    params: &SolverParams,
    variant: Variant,
) -> Result<Trajectory> {
    let mut stepper = Stepper::new(x, model, path, *params, variant)?;
    let stride = params.effective_stride();
    let reg = params.regularization;
    let mut traj = Trajectory {
        params: *params,
        variant,
        record_steps: vec![0],
        times: vec![0.0],
        states: vec![x.clone()],
        norms: vec![NormRecord::of(x, &reg, 0.0)],
    };
    while !stepper.is_done() {
        stepper.advance()?;
        let n = stepper.step();
        let xn = stepper.physical();
        traj.norms.push(NormRecord::of(&xn, &reg, stepper.time()));
        if n % stride == 0 || stepper.is_done() {
            traj.record_steps.push(n);
            traj.times.push(stepper.time());
            traj.states.push(xn);
        }
    }
    Ok(traj)
}

/// Source term `G` of a test process, piecewise constant in time.
#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Zero,
    Constant(ScalarField),
    /// `G` on `[t_n, t_{n+1})`; the last entry is held beyond its range.
    Steps(Vec<ScalarField>),
}

impl Source {
    pub fn at(&self, n: usize) -> Option<&ScalarField> {
        match self {
            Source::Zero => None,
            Source::Constant(g) => Some(g),
            Source::Steps(v) => v.get(n).or(v.last()),
        }
    }
}

/// Test process `(Z(0), G)` solving `dZ = -G dt + Z dW`, evaluated in closed
/// form per node:
///
/// ```text
/// Z(t, ξ) = e^{W(t,ξ) - ½μ(ξ)t} [ Z(0)(ξ) - ∫₀ᵗ e^{-W(s,ξ) + ½μ(ξ)s} G(s, ξ) ds ]
/// ```
///
/// with left-endpoint quadrature on the solver time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TestProcess {
    pub z0: ScalarField,
    pub source: Source,
}

impl TestProcess {
    pub fn new(z0: ScalarField, source: Source) -> Result<Self> {
        match &source {
            Source::Zero => {}
            Source::Constant(g) => z0.same_grid(g)?,
            Source::Steps(v) => {
                for g in v {
                    z0.same_grid(g)?;
                }
            }
        }
        Ok(TestProcess { z0, source })
    }

    pub fn evaluator<'a>(&'a self, model: &'a NoiseModel, path: &'a BrownianPath) -> Result<TestProcessEvaluator<'a>> {
        if self.z0.grid() != model.grid() {
            return Err(Error::GridMismatch);
        }
        model.check_path(path)?;
        let n = self.z0.grid().len();
        Ok(TestProcessEvaluator {
            process: self,
            model,
            path,
            step: 0,
            brownian: vec![0.0; model.mode_count()],
            w: vec![0.0; n],
            integral: vec![0.0; n],
        })
    }

    /// `Z_n` for `n = 0..=steps`.
    pub fn evaluate(&self, model: &NoiseModel, path: &BrownianPath, params: &SolverParams) -> Result<Vec<ScalarField>> {
        let mut ev = self.evaluator(model, path)?;
        let steps = params.steps();
        if path.steps() < steps {
            return Err(Error::InvalidParams("Brownian path is shorter than the horizon"));
        }
        let mut out = Vec::with_capacity(steps + 1);
        out.push(ev.value());
        for _ in 0..steps {
            ev.advance()?;
            out.push(ev.value());
        }
        Ok(out)
    }
}

/// Streaming evaluation of a [`TestProcess`] along a Brownian path.
#[derive(Clone, Debug)]
pub struct TestProcessEvaluator<'a> {
    process: &'a TestProcess,
    model: &'a NoiseModel,
    path: &'a BrownianPath,
    step: usize,
    brownian: Vec<f64>,
    w: Vec<f64>,
    integral: Vec<f64>,
}

impl TestProcessEvaluator<'_> {
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn source(&self) -> Option<&ScalarField> {
        self.process.source.at(self.step)
    }

    pub fn value(&self) -> ScalarField {
        let t = self.step as f64 * self.path.dt();
        let mu = self.model.mu_field().values();
        let z0 = self.process.z0.values();
        let values = (0..z0.len())
            .map(|i| libm::exp(self.w[i] - 0.5 * mu[i] * t) * (z0[i] - self.integral[i]))
            .collect();
        ScalarField::from_values(*self.process.z0.grid(), values).unwrap()
    }

    pub fn advance(&mut self) -> Result<()> {
        let n = self.step;
        if n >= self.path.steps() {
            return Err(Error::StepOutOfRange { index: n + 1, steps: self.path.steps() });
        }
        let dt = self.path.dt();
        if let Some(g) = self.process.source.at(n) {
            let t = n as f64 * dt;
            let mu = self.model.mu_field().values();
            for (i, acc) in self.integral.iter_mut().enumerate() {
                *acc += dt * libm::exp(-self.w[i] + 0.5 * mu[i] * t) * g.values()[i];
            }
        }
        for (k, b) in self.brownian.iter_mut().enumerate() {
            *b += self.path.increment(k, n);
        }
        self.w.iter_mut().for_each(|v| *v = 0.0);
        let b = &self.brownian;
        self.model.accumulate(|k| b[k], &mut self.w);
        self.step += 1;
        Ok(())
    }
}
