//! `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Later assignments win, so
//! command-line overrides are applied by appending. Unknown keys are errors.
//! [`RunConfig::resolved`] prints every key, defaults included, in a form
//! that parses back to the same configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use tvflow_core::noise::default_decay;
use tvflow_core::{Grid, Scheme, SolverParams, Variant};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Simulate,
    Verify,
    Extinction,
    Denoise,
    Appendix,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::Verify => "verify",
            Experiment::Extinction => "extinction",
            Experiment::Denoise => "denoise",
            Experiment::Appendix => "appendix",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Initial {
    Zeros,
    /// `amplitude · e_k`.
    Eigenmode { k: [usize; 2], amplitude: f64 },
    /// `height · χ_{B_R}` centred in the domain.
    Ball { radius: f64, height: f64 },
    Image(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub dim: usize,
    pub counts: [usize; 2],
    pub lengths: [f64; 2],
    pub modes: usize,
    pub amplitude: f64,
    /// `None` uses the dimension default.
    pub decay: Option<f64>,
    pub lambda: f64,
    /// `None` uses the stability bound.
    pub dt: Option<f64>,
    pub horizon: f64,
    pub scheme: Scheme,
    pub theta: f64,
    pub record_stride: Option<usize>,
    pub variant: Variant,
    pub n_paths: usize,
    pub threads: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub initial: Initial,
    pub moments: Vec<f64>,
    pub stability_separation: f64,
    pub extinction_threshold: f64,
    pub extinction_checkpoints: usize,
    pub appendix_n: usize,
    pub appendix_trials: usize,
    pub delta_lambdas: Vec<f64>,
    pub rho_random_fields: usize,
    pub rho_flow_steps: usize,
    pub denoise_output: String,
    pub dump_path: bool,
}

const KEYS: &[&str] = &[
    "grid.dim",
    "grid.n1",
    "grid.n2",
    "grid.L1",
    "grid.L2",
    "noise.K",
    "noise.amplitude",
    "noise.decay",
    "solver.lambda",
    "solver.dt",
    "solver.T",
    "solver.scheme",
    "solver.theta",
    "solver.record_stride",
    "solver.variant",
    "mc.n_paths",
    "mc.threads",
    "seed",
    "output_dir",
    "initial.kind",
    "initial.k1",
    "initial.k2",
    "initial.amplitude",
    "initial.R",
    "initial.height",
    "initial.image",
    "verify.moments",
    "verify.separation",
    "extinction.threshold",
    "extinction.checkpoints",
    "appendix.n",
    "appendix.trials",
    "appendix.delta_lambdas",
    "rho.random_fields",
    "rho.flow_steps",
    "denoise.output",
    "output.dump_path",
];

/// Parses `key = value` lines into `map`, later lines overriding earlier.
pub fn parse_into(text: &str, map: &mut BTreeMap<String, String>) -> Result<()> {
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
        insert(map, k.trim(), v.trim())?;
    }
    Ok(())
}

/// Inserts one assignment after checking the key.
pub fn insert(map: &mut BTreeMap<String, String>, key: &str, value: &str) -> Result<()> {
    if !KEYS.contains(&key) {
        return Err(Error::Config(format!("unknown key `{key}`")));
    }
    map.insert(key.to_string(), value.to_string());
    Ok(())
}

struct Reader<'a> {
    map: &'a BTreeMap<String, String>,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str).filter(|v| !v.is_empty() && *v != "auto")
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`"))),
        }
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`"))))
            .transpose()
    }

    fn list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{s}`"))))
                .collect(),
        }
    }
}

fn list_str(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_map(experiment: Experiment, map: &BTreeMap<String, String>) -> Result<Self> {
        let r = Reader { map };
        let dim = r.get("grid.dim", 2usize)?;
        if dim != 1 && dim != 2 {
            return Err(Error::Config("`grid.dim` must be 1 or 2".into()));
        }
        let n1 = r.get("grid.n1", 33usize)?;
        let n2 = if dim == 2 { r.get("grid.n2", 33usize)? } else { 1 };
        let l1 = r.get("grid.L1", 1.0f64)?;
        let l2 = if dim == 2 { r.get("grid.L2", 1.0f64)? } else { 1.0 };
        let scheme = match r.get("solver.scheme", "explicit".to_string())?.as_str() {
            "explicit" => Scheme::Explicit,
            "semi_implicit" => Scheme::SemiImplicit,
            other => return Err(Error::Config(format!("`solver.scheme`: unknown scheme `{other}`"))),
        };
        let variant = match r.get("solver.variant", "direct".to_string())?.as_str() {
            "direct" => Variant::Direct,
            "rescaled" => Variant::Rescaled,
            other => return Err(Error::Config(format!("`solver.variant`: unknown variant `{other}`"))),
        };
        let default_kind = if experiment == Experiment::Denoise { "image" } else { "eigenmode" };
        let initial = match r.get("initial.kind", default_kind.to_string())?.as_str() {
            "zeros" => Initial::Zeros,
            "eigenmode" => Initial::Eigenmode {
                k: [r.get("initial.k1", 1usize)?, if dim == 2 { r.get("initial.k2", 1usize)? } else { 1 }],
                amplitude: r.get("initial.amplitude", 1.0)?,
            },
            "ball" => Initial::Ball { radius: r.get("initial.R", 0.2)?, height: r.get("initial.height", 1.0)? },
            "image" => match r.raw("initial.image") {
                Some(p) => Initial::Image(PathBuf::from(p)),
                None => return Err(Error::Config("`initial.kind = image` needs `initial.image`".into())),
            },
            other => return Err(Error::Config(format!("`initial.kind`: unknown kind `{other}`"))),
        };
        let dump_path = match r.get("output.dump_path", "false".to_string())?.as_str() {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            other => return Err(Error::Config(format!("`output.dump_path`: expected a boolean, got `{other}`"))),
        };
        Ok(RunConfig {
            experiment,
            dim,
            counts: [n1, n2],
            lengths: [l1, l2],
            modes: r.get("noise.K", 1usize)?,
            amplitude: r.get("noise.amplitude", 0.1)?,
            decay: r.opt("noise.decay")?,
            lambda: r.get("solver.lambda", 0.1)?,
            dt: r.opt("solver.dt")?,
            horizon: r.get("solver.T", 0.05)?,
            scheme,
            theta: r.get("solver.theta", 1.0)?,
            record_stride: r.opt("solver.record_stride")?,
            variant,
            n_paths: r.get("mc.n_paths", 100usize)?,
            threads: r.get("mc.threads", 0usize)?,
            seed: r.get("seed", 0u64)?,
            output_dir: PathBuf::from(r.get("output_dir", "out".to_string())?),
            initial,
            moments: r.list("verify.moments", &[2.0, 4.0])?,
            stability_separation: r.get("verify.separation", 0.1)?,
            extinction_threshold: r.get("extinction.threshold", 1e-4)?,
            extinction_checkpoints: r.get("extinction.checkpoints", 10usize)?,
            appendix_n: r.get("appendix.n", 65usize)?,
            appendix_trials: r.get("appendix.trials", 100usize)?,
            delta_lambdas: r.list("appendix.delta_lambdas", &[0.1, 0.5])?,
            rho_random_fields: r.get("rho.random_fields", 200usize)?,
            rho_flow_steps: r.get("rho.flow_steps", 100usize)?,
            denoise_output: r.get("denoise.output", "denoised.pgm".to_string())?,
            dump_path,
        })
    }

    pub fn parse(experiment: Experiment, text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        parse_into(text, &mut map)?;
        Self::from_map(experiment, &map)
    }

    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid::new(&self.lengths[..self.dim], &self.counts[..self.dim])?)
    }

    pub fn decay(&self) -> f64 {
        self.decay.unwrap_or_else(|| default_decay(self.dim))
    }

    /// Solver parameters on `grid`, with `dt` at the stability bound unless
    /// given.
    pub fn solver_params(&self, grid: &Grid) -> Result<SolverParams> {
        let dt = self.dt.unwrap_or_else(|| SolverParams::stability_bound(grid, self.lambda));
        let mut p = SolverParams::new(self.lambda, dt, self.horizon)?.with_scheme(self.scheme).with_theta(self.theta);
        p.record_stride = self.record_stride;
        p.validate(grid)?;
        Ok(p)
    }

    /// Every key with its effective value; `dt` is written as resolved on
    /// `grid`.
    pub fn resolved(&self, grid: &Grid) -> String {
        let mut s = format!("# tvflow {} configuration, all keys resolved\n", self.experiment.name());
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("grid.dim", self.dim.to_string());
        kv("grid.n1", grid.counts()[0].to_string());
        kv("grid.n2", grid.counts().get(1).copied().unwrap_or(1).to_string());
        kv("grid.L1", grid.lengths()[0].to_string());
        kv("grid.L2", grid.lengths().get(1).copied().unwrap_or(1.0).to_string());
        kv("noise.K", self.modes.to_string());
        kv("noise.amplitude", self.amplitude.to_string());
        kv("noise.decay", self.decay().to_string());
        kv("solver.lambda", self.lambda.to_string());
        kv("solver.dt", self.dt.unwrap_or_else(|| SolverParams::stability_bound(grid, self.lambda)).to_string());
        kv("solver.T", self.horizon.to_string());
        kv("solver.scheme", match self.scheme { Scheme::Explicit => "explicit", Scheme::SemiImplicit => "semi_implicit" }.into());
        kv("solver.theta", self.theta.to_string());
        kv("solver.record_stride", self.record_stride.map_or("auto".into(), |v| v.to_string()));
        kv("solver.variant", match self.variant { Variant::Direct => "direct", Variant::Rescaled => "rescaled" }.into());
        kv("mc.n_paths", self.n_paths.to_string());
        kv("mc.threads", self.threads.to_string());
        kv("seed", self.seed.to_string());
        kv("output_dir", self.output_dir.display().to_string());
        let (kind, k1, k2, amp, radius, height, image) = match &self.initial {
            Initial::Zeros => ("zeros", 1, 1, 1.0, 0.2, 1.0, String::new()),
            Initial::Eigenmode { k, amplitude } => ("eigenmode", k[0], k[1], *amplitude, 0.2, 1.0, String::new()),
            Initial::Ball { radius, height } => ("ball", 1, 1, 1.0, *radius, *height, String::new()),
            Initial::Image(p) => ("image", 1, 1, 1.0, 0.2, 1.0, p.display().to_string()),
        };
        kv("initial.kind", kind.into());
        kv("initial.k1", k1.to_string());
        kv("initial.k2", k2.to_string());
        kv("initial.amplitude", amp.to_string());
        kv("initial.R", radius.to_string());
        kv("initial.height", height.to_string());
        kv("initial.image", image);
        kv("verify.moments", list_str(&self.moments));
        kv("verify.separation", self.stability_separation.to_string());
        kv("extinction.threshold", self.extinction_threshold.to_string());
        kv("extinction.checkpoints", self.extinction_checkpoints.to_string());
        kv("appendix.n", self.appendix_n.to_string());
        kv("appendix.trials", self.appendix_trials.to_string());
        kv("appendix.delta_lambdas", list_str(&self.delta_lambdas));
        kv("rho.random_fields", self.rho_random_fields.to_string());
        kv("rho.flow_steps", self.rho_flow_steps.to_string());
        kv("denoise.output", self.denoise_output.clone());
        kv("output.dump_path", self.dump_path.to_string());
        s
    }
}
