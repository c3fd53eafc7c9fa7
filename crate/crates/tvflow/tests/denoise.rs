use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tvflow::config::{self, Experiment, RunConfig};
use tvflow::experiments::{self, relative_l2};
use tvflow::io::{self, Image};

/// Bright disc on a dark background, away from the frame.
fn disc(width: usize, height: usize, noise: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..height)
        .flat_map(|r| (0..width).map(move |c| (r, c)))
        .map(|(r, c)| {
            let (dx, dy) = (c as f64 - width as f64 / 2.0, r as f64 - height as f64 / 2.0);
            let v = if dx.hypot(dy) < width as f64 / 4.0 { 0.8 } else { 0.3 };
            let n: f64 = StandardNormal.sample(&mut rng);
            ((v + noise * n) * 255.0).round().clamp(0.0, 255.0) as u16
        })
        .collect();
    Image { width, height, maxval: 255, pixels }
}

fn run(input: &std::path::Path, out: &std::path::Path, extra: &[(&str, &str)]) -> Image {
    let mut map = BTreeMap::new();
    config::insert(&mut map, "initial.image", &input.display().to_string()).unwrap();
    config::insert(&mut map, "output_dir", &out.display().to_string()).unwrap();
    for (k, v) in extra {
        config::insert(&mut map, k, v).unwrap();
    }
    let cfg = RunConfig::from_map(Experiment::Denoise, &map).unwrap();
    assert!(experiments::run(&cfg).unwrap().pass);
    assert!(out.join("denoised.pgm.map").exists());
    io::read_pgm(&out.join("denoised.pgm")).unwrap()
}

#[test]
fn zero_horizon_is_the_identity() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("in.pgm");
    io::write_pgm(&input, &disc(24, 16, 0.05, 1)).unwrap();
    let out = run(&input, &tmp.path().join("out"), &[("solver.T", "0")]);
    assert_eq!(std::fs::read(&input).unwrap(), io::encode_pgm(&out));
}

#[test]
fn flow_reduces_tv_and_noise() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = disc(48, 48, 0.0, 0).to_field().unwrap();
    let noisy = disc(48, 48, 0.1, 2);
    let input = tmp.path().join("noisy.pgm");
    io::write_pgm(&input, &noisy).unwrap();
    let out = run(&input, &tmp.path().join("out"), &[("solver.T", "0.002"), ("noise.K", "0"), ("solver.lambda", "0.05")]);
    let (before, after) = (noisy.to_field().unwrap(), out.to_field().unwrap());
    assert!(after.tv() < 0.5 * before.tv());
    assert!(relative_l2(&after, &clean).unwrap() < relative_l2(&before, &clean).unwrap());
}
