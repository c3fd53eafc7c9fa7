//! Experiment dispatch. Each experiment writes `resolved.cfg`, its CSVs and
//! `report.txt` into the output directory and returns a verdict.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use tvflow_core::analysis::{self, RhoOptions};
use tvflow_core::solver::{self, NormRecord, Source, TestProcess};
use tvflow_core::{BrownianPath, Grid, NoiseModel, Regularization, ScalarField, SolverParams, Variant};

use crate::config::{Experiment, Initial, RunConfig};
use crate::error::{Error, Result};
use crate::io::{self, CheckRow};
use crate::mc::{self, Ensemble, ExtinctionOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub pass: bool,
    pub output_dir: PathBuf,
}

struct Output {
    dir: PathBuf,
    report: String,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Output { dir: dir.to_path_buf(), report: String::new() })
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        io::write_text(&self.dir.join(name), text)
    }

    fn line(&mut self, text: impl AsRef<str>) {
        self.report.push_str(text.as_ref());
        self.report.push('\n');
    }

    fn finish(self, pass: bool) -> Result<Outcome> {
        let mut report = self.report;
        let _ = writeln!(report, "verdict: {}", if pass { "pass" } else { "fail" });
        io::write_text(&self.dir.join("report.txt"), &report)?;
        Ok(Outcome { pass, output_dir: self.dir })
    }
}

/// Initial data on `grid`; for images the grid comes from the image itself.
pub fn initial_field(initial: &Initial, grid: &Grid) -> Result<ScalarField> {
    Ok(match initial {
        Initial::Zeros => ScalarField::zeros(*grid),
        Initial::Eigenmode { k, amplitude } => grid.eigenfunction(&k[..grid.dim()])?.0.scaled(*amplitude),
        Initial::Ball { radius, height } => {
            if grid.dim() == 1 {
                let c = 0.5 * grid.lengths()[0];
                ScalarField::from_fn(*grid, |x| if (x[0] - c).abs() < *radius { *height } else { 0.0 })
            } else {
                let c = [0.5 * grid.lengths()[0], 0.5 * grid.lengths()[1]];
                ScalarField::from_fn(*grid, |x| if (x[0] - c[0]).hypot(x[1] - c[1]) < *radius { *height } else { 0.0 })
            }
        }
        Initial::Image(path) => io::read_pgm(path)?.to_field()?,
    })
}

fn setup(cfg: &RunConfig) -> Result<(Grid, ScalarField, NoiseModel)> {
    let grid = match &cfg.initial {
        Initial::Image(p) => io::read_pgm(p)?.grid()?,
        _ => cfg.grid()?,
    };
    let x = initial_field(&cfg.initial, &grid)?;
    let model = NoiseModel::build(grid, cfg.modes, cfg.amplitude, cfg.decay())?;
    Ok((grid, x, model))
}

fn constants(out: &mut Output, cfg: &RunConfig, model: &NoiseModel, params: Option<&SolverParams>) {
    out.line(format!("experiment: {}", cfg.experiment.name()));
    out.line(format!("seed: {}", cfg.seed));
    out.line(format!("noise: K = {}, amplitude = {}, decay = {}", cfg.modes, cfg.amplitude, cfg.decay()));
    out.line(format!("C2_inf = {}", model.c_inf_sq()));
    out.line(format!("D_inf = {}", model.d_inf()));
    out.line(format!("C* = {}", analysis::c_star(model)));
    if let Some(p) = params {
        out.line(format!("lambda = {}, dt = {}, T = {}, steps = {}", p.lambda(), p.dt, p.horizon, p.steps()));
        out.line(format!("scheme = {:?}, theta = {}", p.scheme, p.theta));
    }
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    match cfg.experiment {
        Experiment::Simulate => simulate(cfg),
        Experiment::Verify => verify(cfg),
        Experiment::Extinction => extinction(cfg),
        Experiment::Denoise => denoise(cfg),
        Experiment::Appendix => appendix(cfg),
    }
}

fn ensemble(cfg: &RunConfig) -> Ensemble {
    Ensemble::new(cfg.n_paths, cfg.seed).with_threads(cfg.threads)
}

fn simulate(cfg: &RunConfig) -> Result<Outcome> {
    let (grid, x, model) = setup(cfg)?;
    let params = cfg.solver_params(&grid)?;
    let mut out = Output::new(&cfg.output_dir)?;
    out.write("resolved.cfg", &cfg.resolved(&grid))?;
    let path = BrownianPath::generate(cfg.seed, 0, model.mode_count(), params.steps(), params.dt)?;
    if cfg.dump_path {
        out.write("path.csv", &io::path_csv(&path))?;
    }
    let traj = solver::solve(&x, &model, &path, &params, cfg.variant)?;
    out.write("norms.csv", &io::norms_csv(&traj.norms))?;
    out.write("initial.csv", &io::field_csv(&x))?;
    out.write("final.csv", &io::field_csv(traj.final_state()))?;
    constants(&mut out, cfg, &model, Some(&params));
    let last = traj.norms.last().expect("initial record");
    out.line(format!("variant = {:?}", cfg.variant));
    out.line(format!("|X(T)|_2 = {}, tv(X(T)) = {}", last.l2, last.tv));
    out.finish(true)
}

fn verify(cfg: &RunConfig) -> Result<Outcome> {
    let (grid, x, model) = setup(cfg)?;
    let params = cfg.solver_params(&grid)?;
    let ens = ensemble(cfg);
    let mut out = Output::new(&cfg.output_dir)?;
    out.write("resolved.cfg", &cfg.resolved(&grid))?;
    constants(&mut out, cfg, &model, Some(&params));
    let mut pass = true;

    for row in mc::moment_check(&x, &model, &params, &cfg.moments, &ens)? {
        let rows: Vec<CheckRow> = row
            .times
            .iter()
            .zip(&row.estimates)
            .map(|(&t, e)| CheckRow { t, estimate: e.mean, ci: e.half_width, bound: row.bound, pass: e.lower() <= row.bound })
            .collect();
        out.write(&format!("moments_p{}.csv", row.p), &io::check_csv(&rows))?;
        let (t, e) = row.sup();
        out.line(format!(
            "moment p = {}: sup_t E|X|^p = {} +- {} at t = {}, bound {} -> {}",
            row.p, e.mean, e.half_width, t, row.bound, verdict(row.passes())
        ));
        pass &= row.passes();
    }

    if x.min() >= 0.0 {
        let pos = mc::positivity_check(&x, &model, &params, &ens)?;
        let row = CheckRow { t: params.horizon, estimate: pos.global_min, ci: 0.0, bound: -pos.tolerance, pass: pos.passes() };
        out.write("positivity.csv", &io::check_csv(&[row]))?;
        out.line(format!("positivity: min X = {} (tolerance {}) -> {}", pos.global_min, pos.tolerance, verdict(pos.passes())));
        pass &= pos.passes();
    }

    let k2: &[usize] = if grid.dim() == 2 { &[2, 1] } else { &[2] };
    let e2 = grid.eigenfunction(k2)?.0;
    let processes = [
        TestProcess::new(x.clone(), Source::Zero)?,
        TestProcess::new(ScalarField::zeros(grid), Source::Zero)?,
        TestProcess::new(e2.clone(), Source::Constant(ScalarField::constant(grid, 1.0)))?,
    ];
    let labels = ["z0 = x, G = 0", "z0 = 0, G = 0", "z0 = e_2, G = 1"];
    for (i, rep) in mc::svi_residual(&x, &model, &params, &processes, &ens)?.iter().enumerate() {
        let rows: Vec<CheckRow> = rep
            .times
            .iter()
            .zip(&rep.tv)
            .map(|(&t, e)| CheckRow { t, estimate: e.mean, ci: e.half_width, bound: 0.0, pass: e.lower() <= 0.0 })
            .collect();
        out.write(&format!("svi_{i}.csv"), &io::check_csv(&rows))?;
        let worst = rep.tv.iter().map(|e| e.lower()).fold(f64::NEG_INFINITY, f64::max);
        let worst_tilde = rep.phi_tilde.iter().map(|e| e.lower()).fold(f64::NEG_INFINITY, f64::max);
        out.line(format!(
            "svi [{}]: max_t (residual - ci) = {} (with phi~_lambda: {}) -> {}",
            labels[i], worst, worst_tilde, verdict(rep.passes())
        ));
        pass &= rep.passes();
    }

    let d = cfg.stability_separation;
    let direction = e2.scaled(1.0 / e2.norm2());
    let stab = mc::stability_check(&x, &direction, &[d, d / 2.0, d / 4.0], &model, &params, &ens, 0.05)?;
    let rows: Vec<CheckRow> = stab
        .separations
        .iter()
        .zip(&stab.estimates)
        .enumerate()
        .map(|(i, (&s, e))| {
            let ok = i == 0 || {
                let (r, q, hw) = stab.ratios[i - 1];
                (r - q).abs() <= hw + stab.rel_tol * q
            };
            CheckRow { t: s, estimate: e.mean, ci: e.half_width, bound: s * s, pass: ok }
        })
        .collect();
    out.write("stability.csv", &io::check_csv(&rows))?;
    for &(r, q, hw) in &stab.ratios {
        out.line(format!("stability: ratio {r} (expected {q}, ci {hw})"));
    }
    out.line(format!("stability -> {}", verdict(stab.passes())));
    pass &= stab.passes();

    out.finish(pass)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "fail"
    }
}

fn extinction(cfg: &RunConfig) -> Result<Outcome> {
    let (grid, x, model) = setup(cfg)?;
    let params = cfg.solver_params(&grid)?;
    let ens = ensemble(cfg);
    let mut out = Output::new(&cfg.output_dir)?;
    out.write("resolved.cfg", &cfg.resolved(&grid))?;
    constants(&mut out, cfg, &model, Some(&params));
    let n = grid.dim() as f64;
    let x_norm = x.norm_p(n)?;
    let threshold = cfg.extinction_threshold * x_norm;
    let k = cfg.extinction_checkpoints.max(1);
    let checkpoints: Vec<f64> = (1..=k).map(|i| params.horizon * i as f64 / k as f64).collect();
    let rho = if grid.dim() == 2 {
        let opts = RhoOptions { random_fields: cfg.rho_random_fields, flow_steps: cfg.rho_flow_steps, ..RhoOptions::default() };
        Some(analysis::rho_estimate(&grid, &opts)?)
    } else {
        None
    };
    // 1D has no certified bound; rho = inf makes the bound curve 1 - 0
    let rho_value = rho.map_or(f64::INFINITY, |r| r.rho);
    let opts = ExtinctionOptions { threshold, checkpoints, rho: rho_value };
    let rep = mc::extinction_experiment(&x, &model, &params, &ens, &opts)?;
    let certified = rho.is_some();
    let rows: Vec<CheckRow> = rep
        .checkpoints
        .iter()
        .map(|c| {
            let bound = if certified { c.bound } else { 0.0 };
            CheckRow { t: c.t, estimate: c.cdf.mean, ci: c.cdf.half_width, bound, pass: !certified || c.cdf_passes() }
        })
        .collect();
    out.write("extinction.csv", &io::check_csv(&rows))?;
    let mut prev = f64::NAN;
    let rows: Vec<CheckRow> = rep
        .checkpoints
        .iter()
        .map(|c| {
            let row = CheckRow {
                t: c.t,
                estimate: c.discounted_norm.mean,
                ci: c.discounted_norm.half_width,
                bound: prev,
                pass: c.supermartingale_passes(),
            };
            prev = c.discounted_norm.mean;
            row
        })
        .collect();
    out.write("supermartingale.csv", &io::check_csv(&rows))?;
    let mut taus = String::from("path,tau\n");
    for (i, t) in rep.tau_samples.iter().enumerate() {
        let _ = writeln!(taus, "{i},{t}");
    }
    out.write("tau.csv", &taus)?;
    out.line(format!("|x|_N = {x_norm}, threshold = {threshold}"));
    match rho {
        Some(r) => out.line(format!("rho estimate = {} ({:?}, parameter {}), best ball {}", r.rho, r.family, r.parameter, r.best_ball)),
        None => out.line("1D: extinction of the L2 norm is reported as a diagnostic, without a certified bound"),
    }
    let pass = if certified { rep.passes() } else { rep.supermartingale_passes() };
    out.line(format!("cdf vs bound -> {}", verdict(!certified || rep.cdf_passes())));
    out.line(format!("supermartingale diagnostic -> {}", verdict(rep.supermartingale_passes())));
    out.finish(pass)
}

fn denoise(cfg: &RunConfig) -> Result<Outcome> {
    let Initial::Image(input) = &cfg.initial else {
        return Err(Error::Config("denoise needs `initial.kind = image`".into()));
    };
    let image = io::read_pgm(input)?;
    let grid = image.grid()?;
    let x = image.to_field()?;
    let model = NoiseModel::build(grid, cfg.modes, cfg.amplitude, cfg.decay())?;
    let mut out = Output::new(&cfg.output_dir)?;
    out.write("resolved.cfg", &cfg.resolved(&grid))?;
    let reg = Regularization::new(cfg.lambda)?;
    let (result, norms) = if cfg.horizon == 0.0 {
        (x.clone(), vec![NormRecord::of(&x, &reg, 0.0)])
    } else {
        let params = cfg.solver_params(&grid)?;
        constants(&mut out, cfg, &model, Some(&params));
        let path = BrownianPath::generate(cfg.seed, 0, model.mode_count(), params.steps(), params.dt)?;
        let traj = solver::solve(&x, &model, &path, &params, Variant::Direct)?;
        (traj.final_state().clone(), traj.norms)
    };
    out.line("boundary: the image is framed by zero Dirichlet data, which darkens its borders");
    out.write("norms.csv", &io::norms_csv(&norms))?;
    let name = Path::new(&cfg.denoise_output)
        .file_name()
        .ok_or_else(|| Error::Config("`denoise.output` must be a file name".into()))?;
    io::write_pgm(&out.dir.join(name), &io::Image::from_field(&result, image.maxval)?)?;
    out.line(format!("tv: {} -> {}", x.tv(), result.tv()));
    out.line(format!("|X|_2: {} -> {}", x.norm2(), result.norm2()));
    out.finish(true)
}

fn appendix(cfg: &RunConfig) -> Result<Outcome> {
    let grid = Grid::rect([cfg.lengths[0], cfg.lengths[1]], [cfg.appendix_n, cfg.appendix_n])?;
    let mut out = Output::new(&cfg.output_dir)?;
    out.write("resolved.cfg", &cfg.resolved(&cfg.grid()?))?;
    out.line(format!("experiment: appendix on a {0}x{0} grid, seed {1}", cfg.appendix_n, cfg.seed));
    let rep = analysis::resolvent_contraction_suite(&grid, cfg.appendix_trials, cfg.seed)?;
    let mut csv = String::from("epsilon,functional,checks,violations,worst_excess,verdict\n");
    for r in &rep.rows {
        let name = match r.kind {
            analysis::ContractionKind::TotalVariation => "tv".to_string(),
            analysis::ContractionKind::Envelope { lambda } => format!("j_lambda={lambda}"),
            analysis::ContractionKind::GradientNorm { p } => format!("grad_L{p}"),
        };
        let _ = writeln!(csv, "{},{},{},{},{},{}", r.epsilon, name, r.checks, r.violations, r.worst_excess, verdict(r.violations == 0));
    }
    out.write("appendix.csv", &csv)?;
    out.line(format!("resolvent contraction: {} violations beyond {} -> {}", rep.violations(), rep.tolerance, verdict(rep.passes())));
    let mut csv = String::from("lambda,trials,worst_margin,worst_relative,verdict\n");
    let mut delta_pass = true;
    let model = NoiseModel::build(grid, cfg.modes.max(1), cfg.amplitude.max(1.0), cfg.decay.unwrap_or(2.0))?;
    for &lambda in &cfg.delta_lambdas {
        let rep = analysis::monotonicity_suite(&model, lambda, cfg.appendix_trials, cfg.seed)?;
        let ok = rep.worst_margin >= -1e-8;
        delta_pass &= ok;
        let _ = writeln!(csv, "{lambda},{},{},{},{}", rep.trials, rep.worst_margin, rep.worst_relative, verdict(ok));
        out.line(format!(
            "delta-monotonicity lambda = {lambda}: worst margin {} (relative {}) -> {}",
            rep.worst_margin, rep.worst_relative, verdict(ok)
        ));
    }
    out.write("delta.csv", &csv)?;
    out.finish(rep.passes() && delta_pass)
}

/// Relative root-mean-square distance, for denoising diagnostics.
pub fn relative_l2(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    Ok(a.add_scaled(-1.0, b)?.norm2() / b.norm2())
}

pub fn guard_dt(grid: &Grid, lambda: f64) -> f64 {
    SolverParams::stability_bound(grid, lambda)
}
