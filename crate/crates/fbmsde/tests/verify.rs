use fbmsde::fbm::HurstParam;
use fbmsde::rng::substream;
use fbmsde::verify::*;
use rand::Rng as _;

fn rng(k: u64) -> fbmsde::rng::Rng {
    substream(41, 7, k)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn random_spd(n: usize, r: &mut fbmsde::rng::Rng) -> Vec<Vec<f64>> {
    let g: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| r.random::<f64>() - 0.5).collect()).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| g[i][k] * g[j][k]).sum::<f64>() + if i == j { 0.5 } else { 0.0 })
                .collect()
        })
        .collect()
}

#[test]
fn shuffle_sets_small_cases() {
    let s = shuffle_enumerate(1, 1).unwrap();
    let mut p = s.permutations.clone();
    p.sort();
    assert_eq!(p, vec![vec![1, 2], vec![2, 1]]);

    let s = shuffle_enumerate(2, 1).unwrap();
    let mut p = s.permutations.clone();
    p.sort();
    assert_eq!(p, vec![vec![1, 2, 3], vec![1, 3, 2], vec![2, 3, 1]]);
    for perm in &p {
        let inv = ShuffleSet::inverse(perm);
        for (i, &e) in inv.iter().enumerate() {
            assert_eq!(perm[e - 1], i + 1);
        }
    }
}

#[test]
fn shuffle_counts_are_binomial() {
    let binom = |k: u64, j: u64| (1..=j).fold(1u64, |acc, i| acc * (k - j + i) / i);
    for m in 1..=6 {
        for n in 1..=6 {
            let s = shuffle_enumerate(m, n).unwrap();
            assert_eq!(s.permutations.len() as u64, binom((m + n) as u64, n as u64));
            assert!(s.validate());
        }
    }
    assert!(shuffle_enumerate(7, 6).is_err());
    assert!(shuffle_enumerate(0, 3).is_err());
}

#[test]
fn shuffle_identity_polynomials() {
    let fs: Vec<Box<dyn Fn(f64) -> f64 + Sync>> = vec![
        Box::new(|x| 1.0 + x),
        Box::new(|x| x * x),
        Box::new(|x| 2.0 - x),
        Box::new(|x| x.cos()),
    ];
    let refs: Vec<Integrand<'_>> = fs.iter().map(|f| f.as_ref() as Integrand<'_>).collect();
    let c = shuffle_integral_check(&refs, 0.2, 1.3, 2, 2, 16).unwrap();
    assert!(c.gap <= 1e-10 * c.lhs.abs().max(1.0), "{c:?}");

    // ∫_{s<u<t} 1 du = t - s, squared equals 2·(t-s)²/2
    let one = |_: f64| 1.0;
    let c = shuffle_integral_check(&[&one, &one], 0.0, 2.0, 1, 1, 8).unwrap();
    assert!((c.lhs - 4.0).abs() < 1e-12 && (c.rhs - 4.0).abs() < 1e-12);
}

#[test]
fn simplex_integral_volume() {
    let one = |_: f64| 1.0;
    // vol Δ^3 on [0, 2] is 2³/3!
    let v = simplex_integral(&[&one, &one, &one], 0.0, 2.0, 6);
    assert!((v - 8.0 / 6.0).abs() < 1e-13);
}

#[test]
fn shuffle_monte_carlo_agrees() {
    let f = |x: f64| 1.0 + x.sin();
    let g = |x: f64| x.exp();
    let c = shuffle_integral_check_mc(&[&f, &g, &f, &g], 0.0, 1.0, 2, 2, 40_000, &mut rng(1)).unwrap();
    assert!(c.gap <= 4.0 * c.stderr + 1e-12, "{c:?}");
}

#[test]
fn prod_sum_expands_power() {
    let (l, r) = prod_sum_check(&[0.5, 1.5, -0.25, 2.0], 5, 4).unwrap();
    assert!(rel(l, r) < 1e-13);
    let (l, r) = prod_sum_check(&[3.0, 1.0], 3, 1).unwrap();
    assert_eq!((l, r), (27.0, 27.0));
    assert!(prod_sum_check(&[1.0; 10], 7, 10).is_err());
}

#[test]
fn permanent_known_values() {
    let m = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0], vec![7.0, 8.0, 9.0]];
    assert!((permanent(&m).unwrap() - 450.0).abs() < 1e-10);
    assert!((permanent_brute_force(&m).unwrap() - 450.0).abs() < 1e-10);
    // all-ones n×n has permanent n!
    let ones = vec![vec![1.0; 6]; 6];
    assert!((permanent(&ones).unwrap() - 720.0).abs() < 1e-9);
    let id: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    assert_eq!(permanent(&id).unwrap(), 1.0);
}

#[test]
fn permanent_ryser_matches_brute_force() {
    let mut r = rng(2);
    for n in 1..=7 {
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| r.random::<f64>() * 2.0 - 1.0).collect()).collect();
        let (p, q) = (permanent(&a).unwrap(), permanent_brute_force(&a).unwrap());
        assert!((p - q).abs() <= 1e-12 * q.abs().max(1.0), "n={n}: {p} vs {q}");
    }
    assert!(permanent(&vec![vec![1.0; 13]; 13]).is_err());
}

#[test]
fn determinant_is_product_of_conditional_variances() {
    let mut r = rng(3);
    for n in 2..=5 {
        let cov = random_spd(n, &mut r);
        let c = gaussian_conditioning_check(&cov).unwrap();
        assert!(c.relative_gap < 1e-10, "{c:?}");
        assert!(c.worst_monotonicity <= 1e-12);
    }
    let cov = vec![vec![2.0, 0.6], vec![0.6, 1.0]];
    let m = nalgebra::DMatrix::from_fn(2, 2, |i, j| cov[i][j]);
    // Var(X_0 | X_1) = a - b²/c
    let v = conditional_variance(&m, 0, &[1]).unwrap();
    assert!((v - (2.0 - 0.36)).abs() < 1e-14);
}

#[test]
fn gaussian_reduction_two_dimensional() {
    let cov = vec![vec![1.5, -0.4], vec![-0.4, 0.8]];
    let sq = |v: f64| v * v;
    let c = gaussian_reduction_quadrature(&cov, &sq).unwrap();
    assert!(c.relative_gap < 1e-8, "{c:?}");
    // g ≡ 1 gives 2π/√det exactly
    let one = |_: f64| 1.0;
    let c = gaussian_reduction_quadrature(&cov, &one).unwrap();
    let det: f64 = 1.5 * 0.8 - 0.16;
    assert!(rel(c.lhs, 2.0 * std::f64::consts::PI / det.sqrt()) < 1e-9);
}

#[test]
fn gaussian_reduction_monte_carlo_three_dimensional() {
    let cov = vec![vec![1.0, 0.3, 0.1], vec![0.3, 1.2, -0.2], vec![0.1, -0.2, 0.9]];
    let g = |v: f64| (-v.abs()).exp();
    let c = gaussian_reduction_monte_carlo(&cov, &g, 100_000, &mut rng(4)).unwrap();
    assert!((c.lhs - c.rhs).abs() <= 4.0 * c.stderr, "{c:?}");
}

#[test]
fn gaussian_moment_independent_pair() {
    let cov = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let m = gaussian_moment_bounds_check(&cov, &[1, 1], 200_000, &mut rng(5)).unwrap();
    // E|X||Y| = 2/π and perm(I₂) = 1
    let exact = 2.0 / std::f64::consts::PI;
    assert!((m.moment - exact).abs() <= 4.0 * m.stderr, "{m:?}");
    assert!((m.perm - 1.0).abs() < 1e-14);
    assert!(m.moment_holds && m.perm_holds);
}

#[test]
fn gaussian_moment_correlated_and_replicated() {
    let cov = vec![vec![1.0, 0.7], vec![0.7, 2.0]];
    let rep = replicated_covariance(&cov, &[2, 1]);
    assert_eq!(rep, vec![vec![1.0, 1.0, 0.7], vec![1.0, 1.0, 0.7], vec![0.7, 0.7, 2.0]]);
    let m = gaussian_moment_bounds_check(&cov, &[2, 1], 100_000, &mut rng(6)).unwrap();
    assert!(m.moment_holds && m.perm_holds, "{m:?}");
    assert!(m.perm <= m.perm_bound);
}

#[test]
fn beta_simplex_identity() {
    let mut r = rng(7);
    for _ in 0..10 {
        let a = -0.9 + 2.5 * r.random::<f64>();
        let b = -0.9 + 2.5 * r.random::<f64>();
        let (q, e) = simplex_beta_base(a, b, 0.25, 1.4).unwrap();
        assert!(rel(q, e) < 1e-8, "a={a} b={b}: {q} vs {e}");
    }
    assert!(simplex_beta_base(-1.0, 0.0, 0.0, 1.0).is_err());
}

#[test]
fn iterated_integral_without_kernel_is_exact() {
    // ε = 0: the integral is the iterated Beta product itself
    let spec = SimplexBetaSpec {
        w: vec![0.5, -0.3],
        eps: vec![0, 0],
        h: 0.2,
        gamma: 0.1,
        theta: 0.3,
        theta_p: 0.1,
        t: 1.2,
    };
    let r = simplex_beta_check(&spec).unwrap();
    // ∫_θ^t ∫_θ^{s2} (s2-s1)^{-0.3}(s1-θ)^{0.5} = B(1.5, 0.7) ∫ (s2-θ)^{1.2}
    let b = fbmsde::special::beta(1.5, 0.7);
    let exact = b * 0.9f64.powf(2.2) / 2.2;
    assert!(rel(r.integral, exact) < 1e-7, "{r:?}");
    assert!(rel(r.iterated_bound, exact) < 1e-12);
}

#[test]
fn iterated_integral_bounds_hold() {
    for (w, eps) in [(vec![0.0], vec![1u8]), (vec![0.0, -0.2], vec![1, 0]), (vec![0.1, 0.0], vec![1, 1])] {
        let r = simplex_beta_check(&SimplexBetaSpec {
            w,
            eps,
            h: 0.15,
            gamma: 0.05,
            theta: 0.5,
            theta_p: 0.3,
            t: 1.0,
        })
        .unwrap();
        assert!(r.integral > 0.0 && r.integral <= r.iterated_bound, "{r:?}");
    }
    let bad = SimplexBetaSpec {
        w: vec![-0.6],
        eps: vec![1],
        h: 0.1,
        gamma: 0.05,
        theta: 0.5,
        theta_p: 0.3,
        t: 1.0,
    };
    assert!(simplex_beta_check(&bad).is_err());
}

#[test]
fn kernel_increment_constant_validates() {
    let h = HurstParam::new(0.2).unwrap();
    let f = kernel_increment_bound_check(h, 1.0, 0.1, 1e-3, 500, &mut rng(8)).unwrap();
    assert!(f.constant.is_finite() && f.constant > 0.0);
    assert!(f.validation_max <= f.constant * 1.05, "{f:?}");
    let g = kernel_increment_bound_check(h, 1.0, 0.1, 1e-8, 500, &mut rng(8)).unwrap();
    // the absolute increment ratio grows without bound as θ' → 0
    assert!(g.abs_max > f.abs_max);
    assert!(kernel_increment_bound_check(h, 1.0, 0.3, 1e-3, 10, &mut rng(8)).is_err());
}

#[test]
fn kernel_double_integral_converges() {
    let h = HurstParam::new(0.3).unwrap();
    let a = kernel_double_integral(h, 1.0, 0.1, 1e-5).unwrap();
    let b = kernel_double_integral(h, 1.0, 0.1, 1e-8).unwrap();
    assert!(a > 0.0 && rel(a, b) < 1e-3, "{a} vs {b}");
    // β ≥ H diverges at θ = 0
    assert!(kernel_double_integral(h, 1.0, 0.31, 1e-6).is_err());
}

#[test]
fn step_double_integral_half_indicator() {
    let beta: f64 = 0.2;
    // f = 1 on [0, ½): 2/(2β(1-2β)) (2·2^{2β-1} - 1)
    let exact = 2.0 / (2.0 * beta * (1.0 - 2.0 * beta)) * (2.0 * 0.5f64.powf(1.0 - 2.0 * beta) - 1.0);
    for cells in [vec![1.0, 0.0], vec![1.0, 1.0, 0.0, 0.0], vec![1.0; 4].into_iter().chain(vec![0.0; 4]).collect()] {
        assert!(rel(step_double_integral(&cells, beta), exact) < 1e-12);
    }
    assert_eq!(step_double_integral(&[3.0; 16], beta), 0.0);
}

#[test]
fn haar_transform_parseval_and_bound() {
    let mut r = rng(9);
    let spec = HaarCheckSpec::new(0.1, 0.3, 8).unwrap();
    let n = 1 << spec.level;
    for _ in 0..5 {
        let cells: Vec<f64> = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
        let c = haar_transform(&cells).unwrap();
        let l2 = cells.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!(rel(c.iter().map(|v| v * v).sum::<f64>(), l2) < 1e-12);
        let rep = haar_operator_check(&spec, &cells).unwrap();
        assert!(rep.lhs <= rep.rhs, "{rep:?}");
    }
    // a single Haar function is an eigenvector with eigenvalue 2^{2iα}
    let v = haar_function_cells(3, 2, spec.level);
    let rep = haar_operator_check(&spec, &v).unwrap();
    assert!(rel(rep.lhs, 2f64.powf(6.0 * spec.alpha)) < 1e-12);
    assert!(HaarCheckSpec::new(0.3, 0.2, 4).is_err());
    assert!(haar_transform(&[1.0; 3]).is_err());
}

#[test]
fn stirling_bound_examples() {
    // d = 1, |α| = 1: ln 2! against the right side
    let (l, r) = stirling_bound(&[1]).unwrap();
    assert!((l - 2f64.ln()).abs() < 1e-12 && l <= r);
    let mut g = rng(10);
    for _ in 0..50 {
        let d = g.random_range(1..=4);
        let entries: Vec<Vec<u64>> = (0..d).map(|_| (0..3).map(|_| g.random_range(0..6)).collect()).collect();
        let a = MultiIndex::new(entries).unwrap();
        if a.block_norms().contains(&0) {
            assert!(stirling_bound_check(&a).is_err());
            continue;
        }
        let (l, r) = stirling_bound_check(&a).unwrap();
        assert!(l <= r, "{a:?}");
    }
    assert!(MultiIndex::new(vec![vec![1, 2], vec![1]]).is_err());
}

#[test]
fn exact_fbm_variance() {
    let (h, n, paths) = (0.3, 32, 4000);
    let mut r = rng(11);
    let ends: Vec<f64> = (0..paths).map(|_| fbm_path_exact(h, 2.0, n, &mut r)[n]).collect();
    let m2 = ends.iter().map(|x| x * x).sum::<f64>() / paths as f64;
    let se = (ends.iter().map(|x| (x * x - m2).powi(2)).sum::<f64>() / paths as f64).sqrt() / (paths as f64).sqrt();
    assert!((m2 - 2f64.powf(2.0 * h)).abs() < 4.0 * se, "{m2} ± {se}");
}

#[test]
fn occupation_density_constant_and_bump() {
    let n = 1 << 12;
    let path = fbm_path_exact(0.35, 1.0, n, &mut rng(12));
    let one = |_: f64| 1.0;
    let c = occupation_density_check(&path, 1.0, &one, Some(&|z: f64| z), 0.25, 0.75, 64).unwrap();
    assert_eq!(c.interval, (0.25, 0.75));
    assert!(rel(c.time_integral, 0.5) < 1e-12 && rel(c.space_integral, 0.5) < 1e-12);
    assert!(rel(c.occupation.iter().sum::<f64>(), 0.5) < 1e-12);

    let centre = path[n / 3];
    let bump = move |z: f64| (-(z - centre).powi(2) / 0.18).exp();
    let b = occupation_density_check(&path, 1.0, &bump, None, 0.0, 1.0, 256).unwrap();
    assert!(b.relative_gap < 1e-2, "{b:?}");
    assert!(occupation_density_check(&path, 1.0, &one, None, 0.8, 0.2, 8).is_err());
}

#[test]
fn suite_passes_and_is_deterministic() {
    let a = run_suite(2024);
    assert!(a.all_pass(), "{:?}", a.failures());
    let mut ids: Vec<&str> = a.rows.iter().map(|r| r.check_id.as_str()).collect();
    let total = ids.len();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), total);
    assert!(!check_groups().is_empty());
    let b = run_suite(2024);
    assert_eq!(a, b);
}
