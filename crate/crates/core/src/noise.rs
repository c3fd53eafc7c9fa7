//! Truncated eigen-expansion Wiener process
//! `W(t, ξ) = Σ_{k ≤ K} μ_k e_k(ξ) β_k(t)` on the Dirichlet eigenbasis.
//!
//! Modes are enumerated by increasing continuum eigenvalue (ties broken
//! lexicographically on the multi-index) and weighted `μ_k = c · rank^{-s}`.
//!
//! Brownian increments are seed-addressed. Mode `m` of path `p` under master
//! seed `S` draws from a ChaCha8 stream seeded with [`sub_seed`]`(S, p, m)`:
//!
//! ```text
//! sub_seed(S, p, m) = splitmix64( splitmix64(S ^ splitmix64(p)) ^ splitmix64(m + φ) )
//! ```
//!
//! with `φ = 0x9E3779B97F4A7C15`. Each stream yields `√dt · N(0,1)` samples in
//! step order, so a path is a pure function of `(S, p, K, steps, dt)`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the Brownian stream of `mode` on path `path`.
pub fn sub_seed(seed: u64, path: u64, mode: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(path)) ^ splitmix64(mode.wrapping_add(GOLDEN)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mode {
    pub index: [usize; 2],
    pub coefficient: f64,
    pub eigenvalue: f64,
    /// `e_k` sampled at the interior nodes.
    pub samples: ScalarField,
    /// `|e_k|_∞`, analytic.
    pub sup_norm: f64,
    /// `|∇e_k|_∞`, analytic.
    pub grad_sup_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    grid: Grid,
    modes: Vec<Mode>,
    mu_field: ScalarField,
    c_inf_sq: f64,
    d_inf: f64,
    amplitude: f64,
    decay: f64,
}

/// Default decay exponent: 3 on intervals, 2 on rectangles.
pub fn default_decay(dim: usize) -> f64 {
    if dim == 1 { 3.0 } else { 2.0 }
}

/// First `count` multi-indices ordered by continuum eigenvalue, ties broken
/// lexicographically.
pub fn enumerate_modes(grid: &Grid, count: usize) -> Vec<([usize; 2], f64)> {
    if count == 0 {
        return Vec::new();
    }
    let mut candidates: Vec<([usize; 2], f64)> = if grid.dim() == 1 {
        (1..=count).map(|k| ([k, 0], grid.continuum_eigenvalue(&[k]).unwrap())).collect()
    } else {
        // any of the first `count` modes has both components <= count
        let mut v = Vec::with_capacity(count * count);
        for k1 in 1..=count {
            for k2 in 1..=count {
                v.push(([k1, k2], grid.continuum_eigenvalue(&[k1, k2]).unwrap()));
            }
        }
        v
    };
    candidates.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    candidates.truncate(count);
    candidates
}

impl NoiseModel {
    /// Builds the truncated expansion with `μ_k = amplitude · rank^{-decay}`.
    ///
    /// `|e_k|_∞ = Π √(2/L_i)` and `|∇e_k|_∞ = Π √(2/L_i) · max_i k_i π / L_i`
    /// are used in the hypothesis constants rather than sampled maxima.
    pub fn build(grid: Grid, count: usize, amplitude: f64, decay: f64) -> Result<Self> {
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(Error::NegativeAmplitude(amplitude));
        }
        if !decay.is_finite() {
            return Err(Error::InvalidParams("noise decay must be finite"));
        }
        let sup_norm: f64 = grid.lengths().iter().map(|l| libm::sqrt(2.0 / l)).product();
        let mut modes = Vec::with_capacity(count);
        for (rank, (index, eigenvalue)) in enumerate_modes(&grid, count).into_iter().enumerate() {
            let coefficient = amplitude * libm::pow((rank + 1) as f64, -decay);
            let k = &index[..grid.dim()];
            let (samples, _) = grid.eigenfunction(k)?;
            let freq = (0..grid.dim())
                .map(|a| k[a] as f64 * PI / grid.lengths()[a])
                .fold(0.0, f64::max);
            modes.push(Mode { index, coefficient, eigenvalue, samples, sup_norm, grad_sup_norm: sup_norm * freq });
        }
        let mut mu = alloc::vec![0.0; grid.len()];
        for m in &modes {
            let c2 = m.coefficient * m.coefficient;
            for (acc, e) in mu.iter_mut().zip(m.samples.values()) {
                *acc += c2 * e * e;
            }
        }
        let c_inf_sq = modes.iter().map(|m| m.coefficient * m.coefficient * m.sup_norm * m.sup_norm).fold(0.0, |a, b| a + b);
        let d_inf = modes.iter().map(|m| m.coefficient * m.grad_sup_norm).fold(0.0, |a, b| a + b);
        Ok(NoiseModel {
            grid,
            modes,
            mu_field: ScalarField::from_values(grid, mu)?,
            c_inf_sq,
            d_inf,
            amplitude,
            decay,
        })
    }

    /// The deterministic case `K = 0`.
    pub fn deterministic(grid: Grid) -> Self {
        Self::build(grid, 0, 0.0, default_decay(grid.dim())).unwrap()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    /// `μ(ξ) = Σ μ_k² e_k(ξ)²`, the quadratic variation density of `W(·, ξ)`.
    pub fn mu_field(&self) -> &ScalarField {
        &self.mu_field
    }

    /// `C²_∞ = Σ μ_k² |e_k|²_∞`
    pub fn c_inf_sq(&self) -> f64 {
        self.c_inf_sq
    }

    /// `D_∞ = Σ μ_k |∇e_k|_∞`
    pub fn d_inf(&self) -> f64 {
        self.d_inf
    }

    pub fn is_deterministic(&self) -> bool {
        self.modes.iter().all(|m| m.coefficient == 0.0)
    }

    /// Partial sums `C²_∞(K')` for `K' = 1..=K`, to monitor truncation.
    pub fn c_inf_sq_partial_sums(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.modes
            .iter()
            .map(|m| {
                acc += m.coefficient * m.coefficient * m.sup_norm * m.sup_norm;
                acc
            })
            .collect()
    }

    /// Adds `Σ_k μ_k e_k(ξ) b_k` into `out`, with `b_k = coefficients(k)`.
    pub(crate) fn accumulate(&self, coefficients: impl Fn(usize) -> f64, out: &mut [f64]) {
        for (k, m) in self.modes.iter().enumerate() {
            let c = m.coefficient * coefficients(k);
            if c == 0.0 {
                continue;
            }
            for (o, e) in out.iter_mut().zip(m.samples.values()) {
                *o += c * e;
            }
        }
    }

    /// `W_n(ξ) = Σ_k μ_k e_k(ξ) Σ_{m<n} Δβ_k^m`
    pub fn w_field(&self, path: &BrownianPath, n: usize) -> Result<ScalarField> {
        self.check_path(path)?;
        if n > path.steps {
            return Err(Error::StepOutOfRange { index: n, steps: path.steps });
        }
        let mut out = ScalarField::zeros(self.grid);
        self.accumulate(|k| path.brownian(k, n), out.values_mut());
        Ok(out)
    }

    /// `e^{±W_n}` pointwise.
    pub fn exp_w_field(&self, path: &BrownianPath, n: usize, sign: f64) -> Result<ScalarField> {
        if sign != 1.0 && sign != -1.0 {
            return Err(Error::InvalidParams("sign must be +1 or -1"));
        }
        let mut w = self.w_field(path, n)?;
        for v in w.values_mut() {
            *v = libm::exp(sign * *v);
        }
        Ok(w)
    }

    /// Increment field `ΔW_n(ξ) = Σ_k μ_k e_k(ξ) Δβ_k^n`.
    pub fn increment_field(&self, path: &BrownianPath, n: usize) -> Result<ScalarField> {
        self.check_path(path)?;
        if n >= path.steps {
            return Err(Error::StepOutOfRange { index: n, steps: path.steps });
        }
        let mut out = ScalarField::zeros(self.grid);
        self.accumulate(|k| path.increment(k, n), out.values_mut());
        Ok(out)
    }

    pub(crate) fn check_path(&self, path: &BrownianPath) -> Result<()> {
        if path.modes != self.modes.len() {
            return Err(Error::InvalidParams("Brownian path mode count differs from the noise model"));
        }
        Ok(())
    }
}

/// Per-mode Brownian increments on a uniform time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath {
    dt: f64,
    steps: usize,
    seed: u64,
    path_index: u64,
    modes: usize,
    /// mode-major: `increments[mode * steps + n]`
    increments: Vec<f64>,
}

impl BrownianPath {
    pub fn generate(seed: u64, path_index: u64, modes: usize, steps: usize, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParams("dt must be positive"));
        }
        let scale = libm::sqrt(dt);
        let mut increments = Vec::with_capacity(modes * steps);
        for m in 0..modes {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, path_index, m as u64));
            for _ in 0..steps {
                let z: f64 = StandardNormal.sample(&mut rng);
                increments.push(scale * z);
            }
        }
        Ok(BrownianPath { dt, steps, seed, path_index, modes, increments })
    }

    /// A path built from explicit increments, `increments[mode][step]`.
    pub fn from_increments(dt: f64, increments: &[Vec<f64>]) -> Result<Self> {
        let steps = increments.first().map_or(0, Vec::len);
        if increments.iter().any(|v| v.len() != steps) {
            return Err(Error::InvalidParams("every mode needs the same number of increments"));
        }
        Ok(BrownianPath {
            dt,
            steps,
            seed: 0,
            path_index: 0,
            modes: increments.len(),
            increments: increments.iter().flatten().copied().collect(),
        })
    }

    /// Sums consecutive blocks of `factor` increments: the same Brownian
    /// path observed on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps % factor != 0 {
            return Err(Error::InvalidParams("coarsening factor must divide the step count"));
        }
        let steps = self.steps / factor;
        let mut increments = Vec::with_capacity(self.modes * steps);
        for m in 0..self.modes {
            let row = &self.increments[m * self.steps..(m + 1) * self.steps];
            increments.extend(row.chunks(factor).map(|c| c.iter().sum::<f64>()));
        }
        Ok(BrownianPath {
            dt: self.dt * factor as f64,
            steps,
            seed: self.seed,
            path_index: self.path_index,
            modes: self.modes,
            increments,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn increment(&self, mode: usize, n: usize) -> f64 {
        self.increments[mode * self.steps + n]
    }

    pub fn mode_increments(&self, mode: usize) -> &[f64] {
        &self.increments[mode * self.steps..(mode + 1) * self.steps]
    }

    /// `β_k(t_n) = Σ_{m<n} Δβ_k^m`, summed left to right.
    pub fn brownian(&self, mode: usize, n: usize) -> f64 {
        self.mode_increments(mode)[..n].iter().fold(0.0, |acc, v| acc + v)
    }
}
