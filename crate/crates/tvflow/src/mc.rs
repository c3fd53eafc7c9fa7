//! Path-ensemble drivers.
//!
//! Every path `p` draws its Brownian increments from `(seed, p)` alone and
//! results are collected in path order, so all estimates are independent of
//! the thread count.

use rayon::prelude::*;
use tvflow_core::analysis::{self, ExtinctionReport, McEstimate, SviAccumulator, SviResidual};
use tvflow_core::solver::{Stepper, TestProcess};
use tvflow_core::{BrownianPath, NoiseModel, ScalarField, SolverParams, Variant};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ensemble {
    pub n_paths: usize,
    pub seed: u64,
    /// Worker threads; 0 uses all available cores.
    pub threads: usize,
}

impl Ensemble {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Ensemble { n_paths, seed, threads: 0 }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    /// Applies `f` to every path index, preserving order.
    pub fn map<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Sync + Send,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..self.n_paths as u64).into_par_iter().map(&f).collect())
    }

    pub fn path(&self, model: &NoiseModel, params: &SolverParams, index: u64) -> Result<BrownianPath> {
        Ok(BrownianPath::generate(self.seed, index, model.mode_count(), params.steps(), params.dt)?)
    }
}

/// Steps of `0..=steps` at which states are recorded.
pub fn record_steps(params: &SolverParams) -> Vec<usize> {
    let steps = params.steps();
    let stride = params.effective_stride();
    let mut out: Vec<usize> = (0..=steps).step_by(stride).collect();
    if out.last() != Some(&steps) {
        out.push(steps);
    }
    out
}

fn times_of(steps: &[usize], dt: f64) -> Vec<f64> {
    steps.iter().map(|&n| n as f64 * dt).collect()
}

/// Runs one trajectory and calls `visit` at every step, the initial one
/// included.
pub fn run_with<F>(
    x: &ScalarField,
    model: &NoiseModel,
    path: &BrownianPath,
    params: &SolverParams,
    variant: Variant,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(&Stepper) -> Result<()>,
{
    let mut stepper = Stepper::new(x, model, path, *params, variant)?;
    visit(&stepper)?;
    while !stepper.is_done() {
        stepper.advance()?;
        visit(&stepper)?;
    }
    Ok(())
}

fn check_paths(n: usize, min: usize) -> Result<()> {
    if n < min {
        return Err(tvflow_core::Error::TooFewSamples(n).into());
    }
    Ok(())
}

fn estimates_by_column(rows: &[Vec<f64>], columns: usize) -> Result<Vec<McEstimate>> {
    (0..columns)
        .map(|c| {
            let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            Ok(McEstimate::from_samples(&col)?)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentRow {
    pub p: f64,
    pub times: Vec<f64>,
    /// `E[|X(t)|₂^p]` at each recorded time.
    pub estimates: Vec<McEstimate>,
    /// `exp(C²_∞ p(p-1)/2) |x|₂^p`.
    pub bound: f64,
}

impl MomentRow {
    /// Recorded time with the largest mean.
    pub fn sup(&self) -> (f64, McEstimate) {
        let (i, e) = self
            .estimates
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
            .expect("at least the initial time is recorded");
        (self.times[i], *e)
    }

    pub fn passes(&self) -> bool {
        self.sup().1.lower() <= self.bound
    }
}

pub const MIN_MOMENT_PATHS: usize = 100;

/// Monte Carlo sup-moment `max_t E[|X_λ(t)|₂^p]` against the moment bound.
pub fn moment_check(
    x: &ScalarField,
    model: &NoiseModel,
    params: &SolverParams,
    exponents: &[f64],
    ensemble: &Ensemble,
) -> Result<Vec<MomentRow>> {
    check_paths(ensemble.n_paths, MIN_MOMENT_PATHS)?;
    if exponents.iter().any(|&p| !(p >= 2.0)) {
        return Err(tvflow_core::Error::InvalidParams("moment exponents must be >= 2").into());
    }
    let steps = record_steps(params);
    let norms = ensemble.map(|p| {
        let path = ensemble.path(model, params, p)?;
        let mut out = Vec::with_capacity(steps.len());
        let mut next = 0;
        run_with(x, model, &path, params, Variant::Direct, |s| {
            if next < steps.len() && s.step() == steps[next] {
                out.push(s.state().norm2());
                next += 1;
            }
            Ok(())
        })?;
        Ok(out)
    })?;
    let times = times_of(&steps, params.dt);
    let x2 = x.norm2();
    exponents
        .iter()
        .map(|&p| {
            let powered: Vec<Vec<f64>> = norms.iter().map(|r| r.iter().map(|v| v.powf(p)).collect()).collect();
            Ok(MomentRow {
                p,
                times: times.clone(),
                estimates: estimates_by_column(&powered, steps.len())?,
                bound: (model.c_inf_sq() * p * (p - 1.0) / 2.0).exp() * x2.powf(p),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub separations: Vec<f64>,
    /// `E[sup_t ‖X^x - X^{x*}‖²₂]` per separation.
    pub estimates: Vec<McEstimate>,
    /// Ratio of consecutive estimates, its expected value and the CI half
    /// width of the ratio estimator.
    pub ratios: Vec<(f64, f64, f64)>,
    pub rel_tol: f64,
}

impl StabilityReport {
    pub fn passes(&self) -> bool {
        self.ratios.iter().all(|&(r, expected, hw)| (r - expected).abs() <= hw + self.rel_tol * expected)
    }
}

/// Coupled runs from `x` and `x + s·direction` for each separation `s`.
/// The ratio of consecutive estimates is compared with the squared ratio of
/// separations, allowing the ratio-estimator CI plus `rel_tol` for the
/// nonlinearity of the flow.
pub fn stability_check(
    x: &ScalarField,
    direction: &ScalarField,
    separations: &[f64],
    model: &NoiseModel,
    params: &SolverParams,
    ensemble: &Ensemble,
    rel_tol: f64,
) -> Result<StabilityReport> {
    let starts: Vec<ScalarField> =
        separations.iter().map(|&s| x.add_scaled(s, direction)).collect::<tvflow_core::Result<_>>()?;
    let samples = ensemble.map(|p| {
        let path = ensemble.path(model, params, p)?;
        let mut base = Stepper::new(x, model, &path, *params, Variant::Direct)?;
        let mut others: Vec<Stepper> = starts
            .iter()
            .map(|s| Stepper::new(s, model, &path, *params, Variant::Direct))
            .collect::<tvflow_core::Result<_>>()?;
        let mut sup = vec![0.0f64; starts.len()];
        loop {
            for (o, m) in others.iter().zip(sup.iter_mut()) {
                let d = o.state().add_scaled(-1.0, base.state())?.norm2();
                *m = m.max(d * d);
            }
            if base.is_done() {
                break;
            }
            base.advance()?;
            for o in others.iter_mut() {
                o.advance()?;
            }
        }
        Ok(sup)
    })?;
    let estimates = estimates_by_column(&samples, separations.len())?;
    let mut ratios = Vec::new();
    for i in 1..separations.len() {
        let (a, b) = (estimates[i - 1].mean, estimates[i].mean);
        let r = a / b;
        let resid: Vec<f64> = samples.iter().map(|s| s[i - 1] - r * s[i]).collect();
        let hw = McEstimate::from_samples(&resid)?.half_width / b;
        let q = separations[i - 1] / separations[i];
        ratios.push((r, q * q, hw));
    }
    Ok(StabilityReport { separations: separations.to_vec(), estimates, ratios, rel_tol })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SviReport {
    pub times: Vec<f64>,
    /// `LHS - RHS` with `φ = tv`.
    pub tv: Vec<McEstimate>,
    /// The same with `φ̃_λ`.
    pub phi_tilde: Vec<McEstimate>,
    /// Largest per-path `tv` residual at each time.
    pub max_tv: Vec<f64>,
}

impl SviReport {
    pub fn passes(&self) -> bool {
        self.tv.iter().all(|e| e.lower() <= 0.0)
    }

    /// Pathwise form, for deterministic runs.
    pub fn passes_pathwise(&self, tol: f64) -> bool {
        self.max_tv.iter().all(|&r| r <= tol)
    }
}

/// Residual of the variational inequality for each test process, on shared
/// paths.
pub fn svi_residual(
    x: &ScalarField,
    model: &NoiseModel,
    params: &SolverParams,
    processes: &[TestProcess],
    ensemble: &Ensemble,
) -> Result<Vec<SviReport>> {
    let steps = record_steps(params);
    let reg = params.regularization;
    let mu = model.mu_field();
    let per_path: Vec<Vec<Vec<SviResidual>>> = ensemble.map(|p| {
        let path = ensemble.path(model, params, p)?;
        let mut evals = processes.iter().map(|tp| tp.evaluator(model, &path)).collect::<tvflow_core::Result<Vec<_>>>()?;
        let mut accs = processes
            .iter()
            .map(|tp| SviAccumulator::new(reg, x, &tp.z0))
            .collect::<tvflow_core::Result<Vec<_>>>()?;
        let mut out = vec![Vec::with_capacity(steps.len()); processes.len()];
        let mut next = 0;
        let mut stepper = Stepper::new(x, model, &path, *params, Variant::Direct)?;
        loop {
            let xs = stepper.state();
            let zs: Vec<ScalarField> = evals.iter().map(|e| e.value()).collect();
            if next < steps.len() && stepper.step() == steps[next] {
                for ((o, acc), z) in out.iter_mut().zip(&accs).zip(&zs) {
                    o.push(acc.residual(xs, z)?);
                }
                next += 1;
            }
            if stepper.is_done() {
                break;
            }
            for ((acc, ev), z) in accs.iter_mut().zip(&evals).zip(&zs) {
                acc.accumulate(params.dt, xs, z, ev.source(), mu)?;
            }
            stepper.advance()?;
            for ev in evals.iter_mut() {
                ev.advance()?;
            }
        }
        Ok(out)
    })?;
    let times = times_of(&steps, params.dt);
    (0..processes.len())
        .map(|k| {
            let tv: Vec<Vec<f64>> = per_path.iter().map(|pp| pp[k].iter().map(|r| r.tv).collect()).collect();
            let pt: Vec<Vec<f64>> = per_path.iter().map(|pp| pp[k].iter().map(|r| r.phi_tilde).collect()).collect();
            let max_tv = (0..steps.len())
                .map(|c| tv.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            Ok(SviReport {
                times: times.clone(),
                tv: estimates_by_column(&tv, steps.len())?,
                phi_tilde: estimates_by_column(&pt, steps.len())?,
                max_tv,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PositivityReport {
    pub global_min: f64,
    pub path_minima: Vec<f64>,
    pub tolerance: f64,
}

impl PositivityReport {
    pub fn passes(&self) -> bool {
        self.global_min >= -self.tolerance
    }
}

/// Minimum of `X_λ` over paths, steps and nodes; tolerance `1e-8 |x|_∞`.
pub fn positivity_check(
    x: &ScalarField,
    model: &NoiseModel,
    params: &SolverParams,
    ensemble: &Ensemble,
) -> Result<PositivityReport> {
    if x.min() < 0.0 {
        return Err(tvflow_core::Error::InvalidParams("positivity needs nonnegative initial data").into());
    }
    let path_minima = ensemble.map(|p| {
        let path = ensemble.path(model, params, p)?;
        let mut m = f64::INFINITY;
        run_with(x, model, &path, params, Variant::Direct, |s| {
            m = m.min(s.state().min());
            Ok(())
        })?;
        Ok(m)
    })?;
    let global_min = path_minima.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(PositivityReport { global_min, path_minima, tolerance: 1e-8 * x.norm_inf() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtinctionOptions {
    /// Absolute `|X|_N` level treated as extinct.
    pub threshold: f64,
    pub checkpoints: Vec<f64>,
    pub rho: f64,
}

/// First-passage times of `|X_λ|_N` below the threshold, the empirical CDF
/// against the lower bound, and the discounted-norm supermartingale
/// diagnostic. The norm is checked at every step.
pub fn extinction_experiment(
    x: &ScalarField,
    model: &NoiseModel,
    params: &SolverParams,
    ensemble: &Ensemble,
    options: &ExtinctionOptions,
) -> Result<ExtinctionReport> {
    let n = x.grid().dim() as f64;
    let dt = params.dt;
    let check_steps: Vec<usize> = options.checkpoints.iter().map(|t| (t / dt).round() as usize).collect();
    if check_steps.iter().any(|&s| s > params.steps()) {
        return Err(tvflow_core::Error::InvalidParams("checkpoint beyond the horizon").into());
    }
    let per_path = ensemble.map(|p| {
        let path = ensemble.path(model, params, p)?;
        let mut tau = f64::INFINITY;
        let mut norms = vec![0.0; check_steps.len()];
        let mut stepper = Stepper::new(x, model, &path, *params, Variant::Direct)?;
        loop {
            let v = stepper.state().norm_p(n)?;
            if tau.is_infinite() && v <= options.threshold {
                tau = stepper.time();
            }
            for (slot, &s) in norms.iter_mut().zip(&check_steps) {
                if s == stepper.step() {
                    *slot = v;
                }
            }
            // zero is a fixed point; later norms stay 0
            if stepper.is_done() || stepper.state().values().iter().all(|&u| u == 0.0) {
                break;
            }
            stepper.advance()?;
        }
        Ok((tau, norms))
    })?;
    let (taus, norms): (Vec<f64>, Vec<Vec<f64>>) = per_path.into_iter().unzip();
    let times: Vec<f64> = check_steps.iter().map(|&s| s as f64 * dt).collect();
    Ok(ExtinctionReport::new(
        options.threshold,
        taus,
        options.rho,
        analysis::c_star(model),
        x.norm_p(n)?,
        &times,
        &norms,
    )?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LadderReport {
    pub lambdas: Vec<f64>,
    /// `E[sup_t ‖X_λ - X_{λ/2}‖²₂]` per ladder rung.
    pub estimates: Vec<McEstimate>,
}

impl LadderReport {
    pub fn passes(&self) -> bool {
        self.estimates.windows(2).all(|w| w[1].mean < w[0].mean)
    }
}

/// Coupled runs at every `λ` of the ladder and at `λ/2`, all with the time
/// step of `params` (which must respect the guard of the smallest `λ/2`).
pub fn lambda_ladder(
    x: &ScalarField,
    model: &NoiseModel,
    params: &SolverParams,
    lambdas: &[f64],
    ensemble: &Ensemble,
) -> Result<LadderReport> {
    let mut all: Vec<f64> = Vec::new();
    for &l in lambdas {
        for v in [l, 0.5 * l] {
            if !all.contains(&v) {
                all.push(v);
            }
        }
    }
    let configs: Vec<SolverParams> = all
        .iter()
        .map(|&l| {
            let p = SolverParams { regularization: tvflow_core::Regularization::new(l)?, ..*params };
            p.validate(x.grid())?;
            Ok(p)
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = lambdas
        .iter()
        .map(|&l| {
            let a = all.iter().position(|&v| v == l).unwrap();
            let b = all.iter().position(|&v| v == 0.5 * l).unwrap();
            (a, b)
        })
        .collect();
    let samples = ensemble.map(|p| {
        let path = ensemble.path(model, params, p)?;
        let mut steppers: Vec<Stepper> = configs
            .iter()
            .map(|c| Stepper::new(x, model, &path, *c, Variant::Direct))
            .collect::<tvflow_core::Result<_>>()?;
        let mut sup = vec![0.0f64; pairs.len()];
        loop {
            for (m, &(a, b)) in sup.iter_mut().zip(&pairs) {
                let d = steppers[a].state().add_scaled(-1.0, steppers[b].state())?.norm2();
                *m = m.max(d * d);
            }
            if steppers[0].is_done() {
                break;
            }
            for s in steppers.iter_mut() {
                s.advance()?;
            }
        }
        Ok(sup)
    })?;
    Ok(LadderReport { lambdas: lambdas.to_vec(), estimates: estimates_by_column(&samples, lambdas.len())? })
}

/// Per-path `‖X_T - e^{W_T} Y_T‖₂ / ‖x‖₂` for each time step in `dts`. The
/// Brownian path is drawn at the finest step and coarsened, so all levels
/// share it; every `dt` must be an integer multiple of the finest.
pub fn equivalence_errors(
    x: &ScalarField,
    model: &NoiseModel,
    lambda: f64,
    horizon: f64,
    dts: &[f64],
    ensemble: &Ensemble,
) -> Result<Vec<Vec<f64>>> {
    let finest = dts.iter().copied().fold(f64::INFINITY, f64::min);
    let fine = SolverParams::new(lambda, finest, horizon)?;
    let factors: Vec<usize> = dts
        .iter()
        .map(|&dt| {
            let f = (dt / finest).round();
            if (f * finest - dt).abs() > 1e-9 * dt {
                return Err(tvflow_core::Error::InvalidParams("time steps must be multiples of the finest").into());
            }
            Ok(f as usize)
        })
        .collect::<Result<_>>()?;
    let xn = x.norm2();
    ensemble.map(|p| {
        let path = ensemble.path(model, &fine, p)?;
        dts.iter()
            .zip(&factors)
            .map(|(&dt, &f)| {
                let coarse = path.coarsen(f)?;
                let params = SolverParams::new(lambda, dt, horizon)?;
                let mut direct = Stepper::new(x, model, &coarse, params, Variant::Direct)?;
                let mut rescaled = Stepper::new(x, model, &coarse, params, Variant::Rescaled)?;
                while !direct.is_done() {
                    direct.advance()?;
                    rescaled.advance()?;
                }
                let d = direct.state().add_scaled(-1.0, &rescaled.physical())?;
                Ok(d.norm2() / xn)
            })
            .collect()
    })
}

/// Samples of `W_n` at one node across the ensemble.
pub fn noise_samples(model: &NoiseModel, dt: f64, n: usize, node: usize, ensemble: &Ensemble) -> Result<Vec<f64>> {
    ensemble.map(|p| {
        let path = BrownianPath::generate(ensemble.seed, p, model.mode_count(), n, dt)?;
        Ok(model.w_field(&path, n)?.values()[node])
    })
}

/// Samples of a test process at step `n`, one node, across the ensemble.
pub fn test_process_samples(
    process: &TestProcess,
    model: &NoiseModel,
    params: &SolverParams,
    n: usize,
    node: usize,
    ensemble: &Ensemble,
) -> Result<Vec<f64>> {
    ensemble.map(|p| {
        let path = ensemble.path(model, params, p)?;
        let mut ev = process.evaluator(model, &path)?;
        for _ in 0..n {
            ev.advance()?;
        }
        Ok(ev.value().values()[node])
    })
}
