use proptest::prelude::*;
use tvflow_core::grid::{self, VectorField};
use tvflow_core::solver::{self, Stepper};
use tvflow_core::{BrownianPath, Grid, NoiseModel, Regularization, Scheme, ScalarField, SolverParams, Variant};

fn grid_strategy(max: usize) -> impl Strategy<Value = Grid> {
    prop_oneof![
        (2..=max, 0.5..3.0f64).prop_map(|(n, l)| Grid::line(l, n).unwrap()),
        (2..=max, 2..=max, 0.5..3.0f64, 0.5..3.0f64).prop_map(|(n1, n2, l1, l2)| Grid::rect([l1, l2], [n1, n2]).unwrap()),
    ]
}

/// A grid and `count` fields on it with entries in `[-1, 1]`.
fn fields(max: usize, count: usize) -> impl Strategy<Value = (Grid, Vec<ScalarField>)> {
    grid_strategy(max).prop_flat_map(move |g| {
        let v = proptest::collection::vec(proptest::collection::vec(-1.0..1.0f64, g.len()), count);
        (Just(g), v).prop_map(|(g, vs)| {
            let fs = vs.into_iter().map(|v| ScalarField::from_values(g, v).unwrap()).collect();
            (g, fs)
        })
    })
}

fn vec2() -> impl Strategy<Value = [f64; 2]> {
    (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(a, b)| [a, b])
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm(a: [f64; 2]) -> f64 {
    dot(a, a).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn divergence_is_minus_adjoint_of_gradient((g, fs) in fields(33, 1), seed in any::<u64>()) {
        let [c0, c1] = g.face_counts();
        let mut s = seed;
        let mut next = || {
            s = tvflow_core::noise::splitmix64(s);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let p = VectorField::from_components(g, [(0..c0).map(|_| next()).collect(), (0..c1).map(|_| next()).collect()]).unwrap();
        let u = &fs[0];
        let lhs = grid::gradient(u).inner(&p).unwrap();
        let rhs = -u.inner(&grid::divergence(&p)).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + grid::gradient(u).norm2() * p.norm2()));
    }

    #[test]
    fn tv_is_absolutely_homogeneous((_g, fs) in fields(33, 1), a in -5.0..5.0f64) {
        let u = &fs[0];
        let lhs = u.scaled(a).tv();
        prop_assert!((lhs - a.abs() * u.tv()).abs() <= 1e-12 * (1.0 + lhs));
    }

    #[test]
    fn tv_is_subadditive((_g, fs) in fields(33, 2)) {
        let s = fs[0].add_scaled(1.0, &fs[1]).unwrap();
        prop_assert!(s.tv() <= fs[0].tv() + fs[1].tv() + 1e-12);
    }

    #[test]
    fn resolvent_is_l2_contraction((_g, fs) in fields(17, 2), eps in 1e-3..10.0f64) {
        let ju = grid::resolvent(&fs[0], eps).unwrap();
        let jv = grid::resolvent(&fs[1], eps).unwrap();
        prop_assert!(ju.norm2() <= fs[0].norm2() * (1.0 + 1e-9));
        let d = ju.add_scaled(-1.0, &jv).unwrap().norm2();
        prop_assert!(d <= fs[0].add_scaled(-1.0, &fs[1]).unwrap().norm2() * (1.0 + 1e-9));
    }

    #[test]
    fn psi_is_monotone(a in vec2(), b in vec2(), lambda in 0.01..=1.0f64) {
        let r = Regularization::new(lambda).unwrap();
        let (pa, pb) = (r.psi(a), r.psi(b));
        let m = dot([pa[0] - pb[0], pa[1] - pb[1]], [a[0] - b[0], a[1] - b[1]]);
        prop_assert!(m >= -1e-12);
        prop_assert!(norm(pa) <= 1.0 + 1e-12);
    }

    #[test]
    fn gradient_of_envelope_is_psi(v in vec2(), lambda in 0.05..=1.0f64) {
        let r = Regularization::new(lambda).unwrap();
        prop_assume!((norm(v) - lambda).abs() > 1e-3);
        let h = 1e-5;
        let psi = r.psi(v);
        for axis in 0..2 {
            let (mut p, mut m) = (v, v);
            p[axis] += h;
            m[axis] -= h;
            let fd = (r.j(p) - r.j(m)) / (2.0 * h);
            prop_assert!((fd - psi[axis]).abs() <= 1e-6);
        }
    }

    #[test]
    fn psi_tilde_dominates_envelope(v in vec2(), lambda in 0.01..=1.0f64) {
        let r = Regularization::new(lambda).unwrap();
        let lhs = dot(r.psi_tilde(v), v);
        prop_assert!(lhs >= r.j(v) + lambda * dot(v, v) - 1e-12);
    }

    #[test]
    fn yosida_cross_inequality(a in vec2(), b in vec2(), lambda in 0.01..=1.0f64, eps in 0.01..=1.0f64) {
        let (rl, re) = (Regularization::new(lambda).unwrap(), Regularization::new(eps).unwrap());
        let (pa, pb) = (rl.psi(a), re.psi(b));
        let m = dot([pa[0] - pb[0], pa[1] - pb[1]], [a[0] - b[0], a[1] - b[1]]);
        prop_assert!(m >= -(lambda + eps) - 1e-12);
    }

    #[test]
    fn envelope_is_the_infimal_convolution(v in vec2(), u in vec2(), lambda in 0.01..=1.0f64) {
        let r = Regularization::new(lambda).unwrap();
        let cost = |w: [f64; 2]| norm(w) + ((v[0] - w[0]).powi(2) + (v[1] - w[1]).powi(2)) / (2.0 * lambda);
        prop_assert!(r.j(v) <= cost(u) + 1e-12);
        let psi = r.psi(v);
        let prox = [v[0] - lambda * psi[0], v[1] - lambda * psi[1]];
        prop_assert!((r.j(v) - cost(prox)).abs() <= 1e-12 * (1.0 + r.j(v)));
        prop_assert!(r.j(v) <= norm(v) && norm(v) - r.j(v) <= 0.5 * lambda + 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn zero_is_invariant(g in grid_strategy(12), k in 0usize..4, seed in any::<u64>(), semi in any::<bool>(), rescaled in any::<bool>()) {
        let model = NoiseModel::build(g, k, 0.5, 2.0).unwrap();
        let mut params = SolverParams::at_guard(&g, 0.1, 0.01).unwrap();
        if semi && !rescaled {
            params = params.with_scheme(Scheme::SemiImplicit);
        }
        let path = BrownianPath::generate(seed, 0, k, params.steps(), params.dt).unwrap();
        let variant = if rescaled { Variant::Rescaled } else { Variant::Direct };
        let traj = solver::solve(&ScalarField::zeros(g), &model, &path, &params, variant).unwrap();
        prop_assert!(traj.states.iter().all(|s| s.values().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn deterministic_flow_contracts((g, fs) in fields(12, 2), lambda in 0.05..1.0f64) {
        let model = NoiseModel::deterministic(g);
        let params = SolverParams::at_guard(&g, lambda, 0.005).unwrap().with_scheme(Scheme::SemiImplicit);
        let path = BrownianPath::generate(0, 0, 0, params.steps(), params.dt).unwrap();
        let mut a = Stepper::new(&fs[0], &model, &path, params, Variant::Direct).unwrap();
        let mut b = Stepper::new(&fs[1], &model, &path, params, Variant::Direct).unwrap();
        let mut prev = fs[0].add_scaled(-1.0, &fs[1]).unwrap().norm2();
        while !a.is_done() {
            a.advance().unwrap();
            b.advance().unwrap();
            let d = a.state().add_scaled(-1.0, b.state()).unwrap().norm2();
            prop_assert!(d <= prev * (1.0 + 1e-9) + 1e-12);
            prev = d;
        }
    }
}
