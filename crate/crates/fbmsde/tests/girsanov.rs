use fbmsde::cyl::{make_sequences, CylSampler, SequencePreset};
use fbmsde::drift::{example_preset, Component, DriftSpec};
use fbmsde::fbm::HurstParam;
use fbmsde::girsanov::*;
use fbmsde::special::{beta, gamma};
use fbmsde::{GridFunction, TimeGrid};

fn hp(h: f64) -> HurstParam {
    HurstParam::new(h).unwrap()
}

fn sequences(d: usize) -> (fbmsde::cyl::HurstSequence, fbmsde::cyl::WeightSequence) {
    make_sequences(&SequencePreset::Geometric {
        h1: 0.08,
        h_ratio: 0.5,
        lambda1: 0.5,
        lambda_ratio: 0.5,
        d_max: d,
    })
    .unwrap()
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn shift_of_zero_and_constant() {
    let grid = TimeGrid::uniform(1.0, 256).unwrap();
    for h in [0.05, 0.08, 0.3] {
        let z = shift_to_wiener(hp(h), &GridFunction::zeros(&grid));
        assert!(z.values.iter().all(|v| *v == 0.0));
        let c = 0.7;
        let v = shift_to_wiener(hp(h), &GridFunction::from_fn(&grid, |_| c));
        let norm = kernel_normalization(hp(h));
        for (i, &s) in grid.nodes().iter().enumerate().skip(1) {
            let exact = c * s.powf(0.5 - h) * beta(1.5 - h, 0.5 - h) / gamma(0.5 - h) / norm;
            assert!((v.values[i] - exact).abs() < 1e-6 * exact.abs().max(1.0), "h={h} s={s}");
        }
    }
}

#[test]
fn bounded_shift_respects_recorded_constant() {
    let grid = TimeGrid::uniform(1.0, 256).unwrap();
    for h in [0.05, 0.3] {
        let kap = shift_bound_constant(hp(h));
        for (a, w) in [(1.0, 3.0), (-0.5, 11.0), (2.0, 0.5)] {
            let u = GridFunction::from_fn(&grid, |s| a * (w * s).cos());
            let v = shift_to_wiener(hp(h), &u);
            let sup_u = u.sup_norm();
            for (i, &s) in grid.nodes().iter().enumerate().skip(1) {
                assert!(v.values[i].abs() <= kap * sup_u * s.powf(0.5 - h) * (1.0 + 1e-6));
            }
        }
    }
}

#[test]
fn zero_shift_gives_unit_weights() {
    let grid = TimeGrid::uniform(1.0, 32).unwrap();
    let inc = WienerIncrements::from_seed(&grid, 2, 100, 1);
    let shifts = ShiftProcess {
        components: vec![GridFunction::zeros(&grid); 2],
    };
    let w = stochastic_exponential(&shifts, &inc, &[hp(0.08), hp(0.04)]).unwrap();
    assert!(w.values.iter().all(|v| *v == 1.0));
}

#[test]
fn deterministic_shift_is_lognormal_with_unit_mean() {
    let grid = TimeGrid::uniform(1.0, 64).unwrap();
    let n = 100_000;
    let inc = WienerIncrements::from_seed(&grid, 2, n, 7);
    let hs = [hp(0.08), hp(0.04)];
    let shifts = ShiftProcess {
        components: vec![
            GridFunction::from_fn(&grid, |s| 0.6 * (3.0 * s).sin()),
            GridFunction::from_fn(&grid, |_| -0.3),
        ],
    };
    let w = stochastic_exponential(&shifts, &inc, &hs).unwrap();
    assert!(w.values.iter().all(|v| *v > 0.0));
    for (v, l) in w.values.iter().zip(&w.log_values) {
        assert!((v.ln() - l).abs() < 1e-12);
    }
    let (m, se) = w.mean();
    assert!((m - 1.0).abs() < 3.0 * se, "E = {m} ± {se}");

    // σ² from the same cell values the exponential uses
    let mut sigma2 = 0.0;
    for (k, u) in shifts.components.iter().enumerate() {
        let v = shift_to_wiener(hs[k], u);
        for j in 0..grid.n_cells() {
            sigma2 += (0.5 * (v.values[j] + v.values[j + 1])).powi(2) * grid.step();
        }
    }
    let (lm, lse) = mean_se(&w.log_values);
    assert!((lm + 0.5 * sigma2).abs() < 3.0 * lse, "{lm} vs {}", -0.5 * sigma2);
    let var: Vec<f64> = w.log_values.iter().map(|l| (l - lm).powi(2)).collect();
    let (vm, vse) = mean_se(&var);
    assert!((vm - sigma2).abs() < 3.0 * vse);
}

#[test]
fn log_weight_factorizes_over_components() {
    let grid = TimeGrid::uniform(1.0, 32).unwrap();
    let inc = WienerIncrements::from_seed(&grid, 3, 50, 2);
    let hs = [hp(0.08), hp(0.04), hp(0.02)];
    let us: Vec<GridFunction> = (0..3)
        .map(|k| GridFunction::from_fn(&grid, move |s| (k as f64 + 1.0) * 0.2 * (s + k as f64).cos()))
        .collect();
    let joint = stochastic_exponential(&ShiftProcess { components: us.clone() }, &inc, &hs).unwrap();
    let mut sum = vec![0.0; 50];
    for k in 0..3 {
        let single = WienerIncrements {
            grid: grid.clone(),
            d: 1,
            n_paths: 50,
            values: (0..50).flat_map(|p| inc.component(k, p).to_vec()).collect(),
        };
        let w = stochastic_exponential(&ShiftProcess { components: vec![us[k].clone()] }, &single, &hs[k..]).unwrap();
        for p in 0..50 {
            sum[p] += w.log_values[p];
        }
    }
    for p in 0..50 {
        assert!((sum[p] - joint.log_values[p]).abs() < 1e-10);
    }
}

#[test]
fn novikov_bound_properties() {
    let hs = [hp(0.08), hp(0.04), hp(0.02), hp(0.01)];
    let zero = novikov_bound(&DriftSpec::zero(4), &hs, 1.0).unwrap();
    assert_eq!(zero.bound, 1.0);

    let lambdas = [0.5, 0.25, 0.125, 0.0625];
    let scaling = [0.4, 0.2, 0.1, 0.05];
    let spec = example_preset(0.5, 0.75, 1.0, -0.5, 0.0, &lambdas, &scaling).unwrap();
    for t_end in [1.0, 2.0] {
        let nb = novikov_bound(&spec, &hs, t_end).unwrap();
        let sum_sq: f64 = spec.c_bounds.iter().map(|c| c * c).sum();
        assert!((nb.exponent - nb.constant * t_end * t_end * sum_sq).abs() < 1e-14 * nb.exponent);
        assert!(nb.direct_exponent <= nb.exponent * (1.0 + 1e-12));
        assert!(nb.bound.is_finite() && nb.bound > 1.0);

        let mut doubled = spec.clone();
        doubled.c_bounds.iter_mut().for_each(|c| *c *= 2.0);
        let nb2 = novikov_bound(&doubled, &hs, t_end).unwrap();
        assert!((nb2.exponent / nb.exponent - 4.0).abs() < 1e-12);
    }
    let mut bad = spec.clone();
    bad.c_bounds[2] = f64::INFINITY;
    assert!(novikov_bound(&bad, &hs, 1.0).is_err());
}

#[test]
fn zero_drift_estimate_is_plain_average() {
    let (h, w) = sequences(2);
    let grid = TimeGrid::uniform(1.0, 16).unwrap();
    let sampler = CylSampler::new(&h, &w, 2, &grid).unwrap();
    let x = [0.2, -0.1];
    let n = 1000;
    let est = weak_solution_estimator(&DriftSpec::zero(2), &[Phi::Coordinate(0)], &x, 1.0, &sampler, n, 4).unwrap();
    let ens = fbmsde::cyl::sample_with(&sampler, n, 4).unwrap();
    let plain = (0..n).map(|p| x[0] + ens.get(0, 16, p)).sum::<f64>() / n as f64;
    // weights are exactly one; only the summation order differs
    assert!((est[0].estimate - plain).abs() < 1e-14);
    assert_eq!(est[0].mean_weight, 1.0);
    assert_eq!(est[0].ess, n as f64);
    assert!(!est[0].ess_flag);
}

#[test]
fn constant_drift_shifts_the_mean() {
    let (h, w) = sequences(2);
    let grid = TimeGrid::uniform(1.0, 32).unwrap();
    let sampler = CylSampler::new(&h, &w, 2, &grid).unwrap();
    let c = 0.4;
    let spec = DriftSpec::new(vec![Component::Constant(c), Component::Zero]);
    let x = [0.1, 0.0];
    for t in [0.5, 1.0] {
        let est = weak_solution_estimator(&spec, &[Phi::Coordinate(0), Phi::Coordinate(1)], &x, t, &sampler, 100_000, 3).unwrap();
        assert!((est[0].estimate - (x[0] + c * t)).abs() < 3.0 * est[0].stderr, "{:?}", est[0]);
        assert!(est[1].estimate.abs() < 3.0 * est[1].stderr);
    }
}

#[test]
fn zero_weight_with_drift_is_rejected() {
    let h = fbmsde::cyl::HurstSequence::new(vec![0.08, 0.04], fbmsde::cyl::TailRule::Geometric { ratio: 0.5 }).unwrap();
    let w = fbmsde::cyl::WeightSequence::new(vec![0.5, 0.0], fbmsde::cyl::TailRule::Zero, &h).unwrap();
    let grid = TimeGrid::uniform(1.0, 8).unwrap();
    let sampler = CylSampler::new(&h, &w, 2, &grid).unwrap();
    let spec = DriftSpec::new(vec![Component::Zero, Component::Constant(1.0)]);
    let r = weak_solution_estimator(&spec, &[Phi::CoordinateSum], &[0.0, 0.0], 1.0, &sampler, 10, 1);
    assert!(r.is_err());
}

#[test]
fn weights_have_unit_mean_at_every_node() {
    let (h, w) = sequences(4);
    let grid = TimeGrid::uniform(1.0, 32).unwrap();
    let sampler = CylSampler::new(&h, &w, 4, &grid).unwrap();
    let spec = example_preset(0.5, 0.75, 1.0, -0.5, 0.0, &w.heads()[..4], &[0.4, 0.2, 0.1, 0.05]).unwrap();
    let means = weight_means(&spec, &[0.1, -0.1, 0.05, 0.0], &sampler, 50_000, 8).unwrap();
    assert_eq!(means[0], (1.0, 0.0));
    for (i, (m, se)) in means.iter().enumerate().skip(1) {
        assert!((m - 1.0).abs() <= 3.0 * se + 1e-12, "node {i}: {m} ± {se}");
    }
}

#[test]
fn standard_error_follows_monte_carlo_rate() {
    let (h, w) = sequences(2);
    let grid = TimeGrid::uniform(1.0, 16).unwrap();
    let sampler = CylSampler::new(&h, &w, 2, &grid).unwrap();
    let spec = example_preset(0.5, 0.75, 1.0, -0.5, 0.0, &w.heads()[..2], &[0.4, 0.2]).unwrap();
    let x = [0.0, 0.0];
    let se = |n| {
        weak_solution_estimator(&spec, &[Phi::CoordinateSum], &x, 1.0, &sampler, n, 21).unwrap()[0].stderr
    };
    let ratio = se(10_000) / se(40_000);
    assert!((ratio - 2.0).abs() < 0.6, "ratio {ratio}");
}

#[test]
fn phi_parsing() {
    assert_eq!(Phi::parse("coord2").unwrap().id(), "coord2");
    assert_eq!(Phi::parse("coord_sum").unwrap().id(), "coord_sum");
    assert_eq!(Phi::parse("clipped_norm_2").unwrap().eval(&[3.0, 4.0]), 2.0);
    assert!(Phi::parse("coord0").is_err());
    assert!(Phi::parse("nope").is_err());
}
