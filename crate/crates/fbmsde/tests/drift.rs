use std::f64::consts::PI;
use std::sync::Arc;

use fbmsde::cyl::{make_sequences, sample_cyl_fbm, SequencePreset};
use fbmsde::drift::*;
use fbmsde::special::gamma;
use fbmsde::TimeGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LAMBDAS: [f64; 4] = [0.5, 0.25, 0.125, 0.0625];
const SCALING: [f64; 4] = [0.4, 0.2, 0.1, 0.05];

fn example(a: f64, b: f64, offset: f64) -> DriftSpec {
    example_preset(0.5, 0.75, a, b, offset, &LAMBDAS, &SCALING).unwrap()
}

fn two_dim_example(a: f64, b: f64) -> DriftSpec {
    let p = ExampleParams {
        cf: vec![0.3, 0.1],
        df: vec![1.0, 2.0],
        scale: vec![1.0, 0.5],
        supports: vec![vec![0, 1], vec![0, 1]],
        regions: vec![
            Region::HalfSpace { normal: 0, offset: 0.0 },
            Region::HalfSpace { normal: 1, offset: 0.0 },
        ],
        a,
        b,
    };
    example_drift_s5(&p, &LAMBDAS[..2], &SCALING[..2]).unwrap()
}

fn random_points(n: usize, d: usize, r: f64, seed: u64) -> Vec<(f64, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let t = rng.random::<f64>();
            let y = (0..d).map(|_| r * (2.0 * rng.random::<f64>() - 1.0)).collect();
            (t, y)
        })
        .collect()
}

#[test]
fn continuous_family_has_finite_lipschitz_constants() {
    let spec = example(0.7, 0.7, 0.0);
    let est = lipschitz_estimate_unsmoothed(&spec, 4, 1.0).unwrap();
    assert!(est.l.iter().all(|v| v.is_finite() && *v > 0.0));
    // |∇ e^{-|z|/2}| ≤ 1/2, times C^f |a|
    for k in 0..4 {
        let cf = 0.5 * LAMBDAS[k] * 0.75f64.powi(k as i32);
        assert!(est.l[k] <= 0.5 * cf * 0.7 * (1.0 + 1e-9));
        assert!(est.l[k] >= 0.45 * cf * 0.7);
    }
}

#[test]
fn sampled_sup_matches_closed_form() {
    for (a, b) in [(1.0, -0.5), (0.3, 2.0)] {
        let spec = example(a, b, 0.0);
        let rep = validate_class_b(&spec, 2, &LAMBDAS, &SCALING, 1.0).unwrap();
        for c in &rep.components {
            let cf = 0.5 * LAMBDAS[c.k] * 0.75f64.powi(c.k as i32);
            let exact = cf * f64::max(a.abs(), b.abs());
            assert!((c.sup_measured - exact).abs() <= 0.01 * exact, "{c:?}");
        }
    }
}

#[test]
fn scaled_integral_matches_radial_oracle() {
    // With the interface through the origin each half carries half of the
    // radially symmetric integral.
    let (a, b) = (1.0, -0.5);
    let spec = two_dim_example(a, b);
    for d in 1..=2 {
        let rep = validate_class_b(&spec, d, &LAMBDAS, &SCALING, 1.0).unwrap();
        assert_eq!(rep.largest_d_tested, d);
        for c in &rep.components {
            let m = c.dims as f64;
            let Component::Example(e) = &spec.components[c.k] else { unreachable!() };
            let jac: f64 = e.support.iter().filter(|&&n| n < d).map(|&n| 1.0 / (e.scale * SCALING[n])).product();
            let radial = 2.0 * PI.powf(m / 2.0) / gamma(m / 2.0) * gamma(m) / (0.5 * e.df).powf(m);
            let exact = e.cf * 0.5 * (a.abs() + b.abs()) * jac * radial;
            assert_eq!(c.dims, d);
            assert!((c.integral_measured - exact).abs() < 1e-6 * exact, "d={d} {c:?} vs {exact}");
            assert!(c.pass);
        }
    }
}

#[test]
fn zero_drift_passes_with_full_margins() {
    let spec = DriftSpec::zero(3);
    let rep = validate_class_b(&spec, 3, &LAMBDAS, &SCALING, 1.0).unwrap();
    assert!(rep.pass);
    for c in &rep.components {
        assert_eq!(c.sup_margin(), c.sup_bound);
        assert_eq!(c.integral_margin(), c.integral_bound);
    }
}

#[test]
fn example_family_passes_validation() {
    let spec = example(1.0, -0.5, 0.2);
    let rep = validate_class_b(&spec, 3, &LAMBDAS, &SCALING, 1.0).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!(rep.components.iter().all(|c| c.method == IntegralMethod::Tensor));
}

#[test]
fn example_family_passes_with_monte_carlo_integral() {
    let spec = example(1.0, -0.5, 0.0);
    let rep = validate_class_b(&spec, 4, &LAMBDAS, &SCALING, 1.0).unwrap();
    assert!(rep.pass, "{rep:?}");
    assert!(rep.components.iter().all(|c| c.method == IntegralMethod::MonteCarlo && c.dims == 4));
}

#[test]
fn constant_drift_fails_integral_condition() {
    let mut spec = DriftSpec::new(vec![Component::Constant(1.0)]);
    spec.c_bounds = vec![10.0];
    spec.d_bounds = vec![10.0];
    // depends on no coordinate: the integral over ℝ^0 is the value itself
    let rep = validate_class_b(&spec, 1, &LAMBDAS, &SCALING, 1.0).unwrap();
    assert!(rep.components[0].dims == 0);

    let constant_in_y0 = Component::Custom {
        f: Arc::new(|_, _| 1.0),
        support: vec![0],
    };
    let mut spec = DriftSpec::new(vec![constant_in_y0]);
    spec.c_bounds = vec![10.0];
    spec.d_bounds = vec![10.0];
    let rep = validate_class_b(&spec, 1, &LAMBDAS, &SCALING, 1.0).unwrap();
    assert!(!rep.pass);
    assert_eq!(rep.components[0].method, IntegralMethod::Divergent);
}

#[test]
fn invalid_region_rejected() {
    let p = ExampleParams {
        cf: vec![0.3],
        df: vec![1.0],
        scale: vec![1.0],
        supports: vec![vec![0]],
        regions: vec![Region::HalfSpace { normal: 2, offset: 0.0 }],
        a: 1.0,
        b: 0.0,
    };
    assert!(example_drift_s5(&p, &LAMBDAS, &SCALING).is_err());
    let p = ExampleParams {
        regions: vec![Region::Ball { radius: -1.0 }],
        ..p
    };
    assert!(example_drift_s5(&p, &LAMBDAS, &SCALING).is_err());
}

#[test]
fn truncation() {
    let spec = example(1.0, -0.5, 0.0);
    let full = truncate_drift(&spec, 4).unwrap();
    let mut errs = Vec::new();
    let pts = random_points(100, 4, 2.0, 3);
    for (t, y) in &pts {
        for k in 0..4 {
            assert_eq!(full.component(k, *t, y), spec.component(k, *t, y));
        }
    }
    for d in 1..=4 {
        let tr = truncate_drift(&spec, d).unwrap();
        let mut out = [0.0; 4];
        let mut err = 0.0f64;
        for (t, y) in &pts {
            tr.eval(*t, y, &mut out);
            for k in d..4 {
                assert_eq!(out[k], 0.0);
            }
            for k in 0..4 {
                err = err.max((out[k] - spec.component(k, *t, y)).abs());
            }
        }
        errs.push(err);
    }
    assert_eq!(errs[3], 0.0);
    assert!(errs.windows(2).all(|w| w[1] <= w[0]), "{errs:?}");
}

fn bump() -> DriftSpec {
    DriftSpec::new(vec![
        Component::Bump {
            amplitude: 0.8,
            center: vec![0.3, -0.2],
            width: 0.5,
        },
        Component::Zero,
    ])
}

#[test]
fn bump_mollification_is_second_order() {
    let spec = bump();
    let pts = random_points(400, 2, 1.5, 5);
    let sup_err = |eps: f64| {
        let md = mollify(&spec, 2, eps).unwrap();
        pts.iter()
            .map(|(t, y)| (md.component(0, *t, y) - spec.component(0, *t, y)).abs())
            .fold(0.0, f64::max)
    };
    let ratio = sup_err(0.1) / sup_err(0.05);
    assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
}

#[test]
fn jump_mollified_to_midpoint_at_interface() {
    let (a, b) = (1.0, -0.5);
    let spec = example(a, b, 0.3);
    let md = mollify(&spec, 4, 0.1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for k in 0..4 {
        let Component::Example(e) = &spec.components[k] else { unreachable!() };
        for _ in 0..10 {
            let mut y: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
            y[k] = 0.3 / e.scale;
            let t = rng.random::<f64>();
            let z: f64 = y.iter().map(|v| (e.scale * v).powi(2)).sum::<f64>().sqrt();
            let expected = 0.5 * (a + b) * e.cf * (-t).exp() * (-0.5 * e.df * z).exp();
            assert!((md.component(k, t, &y) - expected).abs() < 1e-6);
        }
    }
}

#[test]
fn small_epsilon_recovers_drift_off_the_jump() {
    let spec = example(1.0, -0.5, 0.0);
    let md = mollify(&spec, 4, 1e-4).unwrap();
    let pts = random_points(100, 4, 1.0, 9);
    for (t, y) in &pts {
        for k in 0..4 {
            if y[k].abs() < 1e-2 {
                continue;
            }
            let exact = spec.component(k, *t, y);
            assert!((md.component(k, *t, y) - exact).abs() < 1e-9, "k={k}");
        }
    }
}

#[test]
fn lipschitz_scaling_and_dominance() {
    let zero = mollify(&DriftSpec::zero(3), 3, 0.1).unwrap();
    let est = lipschitz_estimate(&zero, 1.0).unwrap();
    assert!(est.l.iter().chain(&est.m).chain(&est.sampled).all(|v| *v == 0.0));

    let (a, b) = (1.0, -0.5);
    let spec = example(a, b, 0.0);
    let l1 = lipschitz_estimate(&mollify(&spec, 2, 0.02).unwrap(), 1.0).unwrap();
    let l2 = lipschitz_estimate(&mollify(&spec, 2, 0.01).unwrap(), 1.0).unwrap();
    for k in 0..2 {
        let ratio = l2.l[k] / l1.l[k];
        assert!((ratio - 2.0).abs() < 0.2, "k={k} ratio {ratio}");
        // leading term C^f |a-b| φ(0)/ε
        let Component::Example(e) = &spec.components[k] else { unreachable!() };
        let lead = e.cf * (a - b).abs() / (2.0 * PI).sqrt() / 0.01;
        assert!((l2.l[k] / lead - 1.0).abs() < 0.1);
    }
    for est in [&l1, &l2] {
        for k in 0..est.d {
            for i in 0..est.d {
                assert!(est.l[k] * est.m[i] >= est.sampled[k * est.d + i]);
            }
        }
    }
}

fn fd_jacobian_check(md: &MollifiedDrift, pts: &[(f64, Vec<f64>)], tol: f64) {
    let n = pts[0].1.len();
    let mut jac = vec![0.0; n * n];
    let (mut up, mut dn) = (vec![0.0; n], vec![0.0; n]);
    let h = 1e-5;
    for (t, y) in pts {
        md.jacobian(*t, y, &mut jac).unwrap();
        for i in 0..n {
            let mut yp = y.clone();
            yp[i] += h;
            md.eval(*t, &yp, &mut up);
            yp[i] -= 2.0 * h;
            md.eval(*t, &yp, &mut dn);
            for k in 0..n {
                let fd = (up[k] - dn[k]) / (2.0 * h);
                assert!((fd - jac[k * n + i]).abs() < tol, "k={k} i={i}: {fd} vs {}", jac[k * n + i]);
            }
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let pts = random_points(30, 2, 1.0, 4);
    fd_jacobian_check(&mollify(&bump(), 2, 0.1).unwrap(), &pts, 1e-6);
    let custom = DriftSpec::new(vec![
        Component::Custom {
            f: Arc::new(|t, y: &[f64]| (y[0] + t).sin() * (0.5 * y[1]).cos()),
            support: vec![0, 1],
        },
        Component::Custom {
            f: Arc::new(|_, y: &[f64]| (-y[0] * y[0] - y[1] * y[1]).exp()),
            support: vec![0, 1],
        },
    ]);
    fd_jacobian_check(&mollify(&custom, 2, 0.1).unwrap(), &pts, 1e-6);
    // the smoothed jump family away from the envelope kink
    let pts: Vec<_> = random_points(30, 2, 1.0, 6)
        .into_iter()
        .filter(|(_, y)| y.iter().map(|v| v * v).sum::<f64>() > 1e-2)
        .collect();
    fd_jacobian_check(&mollify(&example(1.0, -0.5, 0.1), 2, 0.1).unwrap(), &pts, 1e-6);
}

#[test]
fn generic_smoothing_limited_to_three_coordinates() {
    let c = Component::Custom {
        f: Arc::new(|_, y: &[f64]| y.iter().sum::<f64>().tanh()),
        support: vec![0, 1, 2, 3],
    };
    let spec = DriftSpec::new(vec![c]);
    assert!(matches!(mollify(&spec, 4, 0.1), Err(fbmsde::Error::Unsupported(_))));
    assert!(mollify(&spec, 3, 0.1).is_ok());
}

#[test]
fn mollified_drift_stays_in_class_b() {
    let spec = example(1.0, -0.5, 0.2);
    let md = mollify(&spec, 2, 0.1).unwrap();
    let rep = validate_class_b_mollified(&md, &LAMBDAS, &SCALING, 1.0).unwrap();
    assert!(rep.pass, "{rep:?}");
}

#[test]
fn law_distance_decreases_along_schedule() {
    let spec = example(1.0, -0.5, 0.0);
    let (hs, ws) = make_sequences(&SequencePreset::Geometric {
        h1: 0.08,
        h_ratio: 0.5,
        lambda1: 0.5,
        lambda_ratio: 0.5,
        d_max: 4,
    })
    .unwrap();
    let grid = TimeGrid::uniform(1.0, 16).unwrap();
    let ens = sample_cyl_fbm(&hs, &ws, 4, &grid, 4000, 1).unwrap();
    let x = [0.1, -0.1, 0.05, 0.0];
    let i = 8;
    let t = grid.node(i);
    let mut dists = Vec::new();
    for (d, eps) in [(1, 0.1), (2, 0.05), (4, 0.0125)] {
        let md = mollify(&spec, d, eps).unwrap();
        let (mut a, mut b) = ([0.0; 4], [0.0; 4]);
        let mut s = 0.0;
        for p in 0..ens.n_paths {
            let y: Vec<f64> = (0..4).map(|k| x[k] + ens.get(k, i, p)).collect();
            md.eval(t, &y, &mut a);
            spec.eval(t, &y, &mut b);
            s += a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
        }
        dists.push(s / ens.n_paths as f64);
    }
    assert!(dists.windows(2).all(|w| w[1] < w[0]), "{dists:?}");
}
