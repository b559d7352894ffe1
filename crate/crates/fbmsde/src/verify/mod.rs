//! Numerical checks of the combinatorial, Gaussian and analytic lemmas the
//! construction relies on, and a suite that runs them all.

mod analysis;
mod combinatorics;
mod gaussian;

pub use analysis::*;
pub use combinatorics::*;
pub use gaussian::*;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::Result;
use crate::fbm::HurstParam;
use crate::par;
use crate::rng::{substream, Rng, AUX_COMPONENT};
use crate::special::{binomial, factorial};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
}

impl CheckStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
        }
    }
}

/// One line of the suite report. `slack = bound - measured`; a check passes
/// when the slack is non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check_id: String,
    pub status: CheckStatus,
    pub measured: f64,
    pub bound: f64,
    pub slack: f64,
}

impl CheckRow {
    /// Row for `measured ≤ bound`.
    pub fn at_most(id: impl Into<String>, measured: f64, bound: f64) -> Self {
        let slack = bound - measured;
        Self {
            check_id: id.into(),
            status: if slack >= 0.0 { CheckStatus::Pass } else { CheckStatus::Fail },
            measured,
            bound,
            slack,
        }
    }

    /// Row that records a failed computation.
    pub fn error(id: impl Into<String>) -> Self {
        Self {
            check_id: id.into(),
            status: CheckStatus::Fail,
            measured: f64::NAN,
            bound: f64::NAN,
            slack: f64::NAN,
        }
    }
}

/// Report of a suite run.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub rows: Vec<CheckRow>,
}

impl SuiteReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.status == CheckStatus::Pass)
    }

    pub fn failures(&self) -> Vec<&CheckRow> {
        self.rows.iter().filter(|r| r.status == CheckStatus::Fail).collect()
    }
}

type Check = fn(&mut Rng) -> Result<Vec<CheckRow>>;

const CHECKS: &[(&str, Check)] = &[
    ("shuffle_sets", check_shuffle_sets),
    ("shuffle_integrals", check_shuffle_integrals),
    ("shuffle_mc", check_shuffle_mc),
    ("prod_sum", check_prod_sum),
    ("permanent", check_permanent),
    ("conditioning", check_conditioning),
    ("gaussian_reduction", check_gaussian_reduction),
    ("moments", check_moments),
    ("simplex_beta", check_simplex_beta),
    ("kernel_increment", check_kernel_increment),
    ("kernel_double_integral", check_kernel_double_integral),
    ("haar", check_haar),
    ("stirling", check_stirling),
    ("occupation", check_occupation),
];

/// Identifiers of the check groups, in report order.
pub fn check_groups() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.0).collect()
}

/// Run every check group in parallel with its own random substream and
/// collect the rows in a fixed order.
pub fn run_suite(seed: u64) -> SuiteReport {
    let groups = par::map_indexed(CHECKS.len(), |i| {
        let (name, f) = CHECKS[i];
        let mut rng = substream(seed, AUX_COMPONENT, 1000 + i as u64);
        f(&mut rng).unwrap_or_else(|_| vec![CheckRow::error(format!("{name}_error"))])
    });
    SuiteReport {
        rows: groups.into_iter().flatten().collect(),
    }
}

fn random_poly(rng: &mut Rng, degree: usize) -> Vec<f64> {
    (0..=degree).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect()
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * x + v)
}

fn check_shuffle_sets(_: &mut Rng) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for (m, n) in [(1, 1), (2, 2), (3, 2), (4, 4), (6, 6)] {
        let s = shuffle_enumerate(m, n)?;
        let expected = binomial((m + n) as u64, n as u64) as f64;
        let count = s.permutations.len() as f64;
        let gap = if s.validate() { (count - expected).abs() } else { f64::INFINITY };
        rows.push(CheckRow::at_most(format!("shuffle_count_{m}_{n}"), gap, 0.0));
    }
    for n in 1..=6 {
        let c = shuffle_enumerate(n, n)?.permutations.len() as f64;
        rows.push(CheckRow::at_most(format!("shuffle_nn_bound_{n}"), c, 4f64.powi(n as i32)));
    }
    Ok(rows)
}

fn check_shuffle_integrals(rng: &mut Rng) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let (s, t) = (0.2, 1.3);
    let one = |_: f64| 1.0;
    for (m, n) in [(1, 1), (2, 1), (2, 2), (3, 2)] {
        let fs: Vec<Integrand<'_>> = vec![&one; m + n];
        let c = shuffle_integral_check(&fs, s, t, m, n, 8)?;
        let l = t - s;
        let closed = l.powi(m as i32) / factorial(m as u64) * l.powi(n as i32) / factorial(n as u64);
        let gap = c.gap.max((c.lhs - closed).abs());
        rows.push(CheckRow::at_most(format!("shuffle_const_{m}_{n}"), gap, 1e-10));
    }
    let lin = |u: f64| u;
    let c = shuffle_integral_check(&[&lin, &lin], s, t, 1, 1, 16)?;
    rows.push(CheckRow::at_most("shuffle_linear_1_1", c.gap, 1e-8));
    for (r, (m, n)) in [(2, 1), (2, 1), (2, 1), (2, 2), (3, 2), (1, 4)].into_iter().enumerate() {
        let polys: Vec<Vec<f64>> = (0..m + n).map(|_| random_poly(rng, 3)).collect();
        let fns: Vec<Box<dyn Fn(f64) -> f64 + Sync>> = polys
            .iter()
            .map(|p| {
                let p = p.clone();
                Box::new(move |x: f64| horner(&p, x)) as Box<dyn Fn(f64) -> f64 + Sync>
            })
            .collect();
        let fs: Vec<Integrand<'_>> = fns.iter().map(|f| f.as_ref() as Integrand<'_>).collect();
        let c = shuffle_integral_check(&fs, s, t, m, n, 12)?;
        rows.push(CheckRow::at_most(format!("shuffle_poly_{m}_{n}_r{r}"), c.gap, 1e-6));
    }
    Ok(rows)
}

fn check_shuffle_mc(rng: &mut Rng) -> Result<Vec<CheckRow>> {
    let polys: Vec<Vec<f64>> = (0..6).map(|_| random_poly(rng, 2)).collect();
    let fns: Vec<Box<dyn Fn(f64) -> f64 + Sync>> = polys
        .iter()
        .map(|p| {
            let p = p.clone();
            Box::new(move |x: f64| 1.0 + 0.5 * horner(&p, x)) as Box<dyn Fn(f64) -> f64 + Sync>
        })
        .collect();
    let fs: Vec<Integrand<'_>> = fns.iter().map(|f| f.as_ref() as Integrand<'_>).collect();
    let c = shuffle_integral_check_mc(&fs, 0.0, 1.0, 3, 3, 200_000, rng)?;
    Ok(vec![CheckRow::at_most("shuffle_mc_3_3", c.gap, 3.0 * c.stderr)])
}

fn check_prod_sum(rng: &mut Rng) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let geo: Vec<f64> = (1..=10).map(|k| 2f64.powi(-k)).collect();
    let (l, r) = prod_sum_check(&geo, 3, 10)?;
    rows.push(CheckRow::at_most("prod_sum_geometric", (l - r).abs(), 1e-14 * r.abs().max(1.0)));
    let alt: Vec<f64> = (1..=12).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 } / k as f64).collect();
    let (l, r) = prod_sum_check(&alt, 4, 12)?;
    rows.push(CheckRow::at_most("prod_sum_alternating", (l - r).abs(), 1e-14));
    let rnd: Vec<f64> = (0..7).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
    let (l, r) = prod_sum_check(&rnd, 1, 7)?;
    rows.push(CheckRow::at_most("prod_sum_single", (l - r).abs(), 1e-15));
    Ok(rows)
}

fn random_matrix(rng: &mut Rng, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect()).collect()
}

/// Random positive definite matrix `G Gᵀ/k + δ I` with `G` of size `n × k`.
fn random_psd(rng: &mut Rng, n: usize, k: usize, delta: f64) -> Vec<Vec<f64>> {
    let g = random_matrix(rng, n.max(k));
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..k).map(|l| g[i][l] * g[j][l]).sum::<f64>() / k as f64 + if i == j { delta } else { 0.0 })
                .collect()
        })
        .collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn check_permanent(rng: &mut Rng) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let id: Vec<Vec<f64>> = (0..6).map(|i| (0..6).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    rows.push(CheckRow::at_most("permanent_identity", (permanent(&id)? - 1.0).abs(), 1e-12));
    let rho = 0.3;
    let p = permanent(&[vec![1.0, rho], vec![rho, 1.0]])?;
    rows.push(CheckRow::at_most("permanent_2x2", (p - (1.0 + rho * rho)).abs(), 1e-12));
    let mut worst = 0.0f64;
    for n in [5, 5, 5, 5, 5, 7, 8] {
        let a = random_matrix(rng, n);
        worst = worst.max(rel(permanent(&a)?, permanent_brute_force(&a)?));
    }
    rows.push(CheckRow::at_most("permanent_brute_force", worst, 1e-12));
    let a = random_matrix(rng, 6);
    let mut sigma: Vec<usize> = (0..6).collect();
    sigma.shuffle(rng);
    let pa: Vec<Vec<f64>> = (0..6).map(|i| (0..6).map(|j| a[sigma[i]][sigma[j]]).collect()).collect();
    rows.push(CheckRow::at_most("permanent_symmetry", rel(permanent(&pa)?, permanent(&a)?), 1e-12));
    Ok(rows)
}

fn check_conditioning(rng: &mut Rng) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let (s1, s2, rho) = (1.3, 0.7, -0.45);
    let c = vec![vec![s1 * s1, rho * s1 * s2], vec![rho * s1 * s2, s2 * s2]];
    let r = gaussian_conditioning_check(&c)?;
    let closed = s1 * s1 * s2 * s2 * (1.0 - rho * rho);
    rows.push(CheckRow::at_most("det_2x2_closed_form", rel(r.product, closed).max(rel(r.det, closed)), 1e-10));
    let (mut gap, mut mono) = (0.0f64, f64::NEG_INFINITY);
    for i in 0..20 {
        let n = 2 + i % 5;
        let c = random_psd(rng, n, n + 1, 0.05);
        let r = gaussian_conditioning_check(&c)?;
        gap = gap.max(r.relative_gap);
        let scale = (0..n).map(|j| c[j][j]).fold(0.0, f64::max);
        mono = mono.max(r.worst_monotonicity / scale);
    }
    rows.push(CheckRow::at_most("det_factorization", gap, 1e-10));
    rows.push(CheckRow::at_most("conditional_variance_monotone", mono, 1e-12));
    Ok(rows)
}

fn check_gaussian_reduction(rng: &mut Rng) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let c2 = vec![vec![1.2, 0.5], vec![0.5, 0.8]];
    let sq = |v: f64| v * v;
    let one = |_: f64| 1.0;
    let r = gaussian_reduction_quadrature(&c2, &sq)?;
    rows.push(CheckRow::at_most("gaussian_reduction_n2_square", r.relative_gap, 1e-4));
    let r = gaussian_reduction_quadrature(&c2, &one)?;
    // with g ≡ 1 both sides equal 2π / sqrt(det)
    let det: f64 = 1.2 * 0.8 - 0.25;
    let closed = 2.0 * std::f64::consts::PI / det.sqrt();
    rows.push(CheckRow::at_most("gaussian_reduction_n2_one", r.relative_gap.max(rel(r.rhs, closed)), 1e-4));
    let c3 = vec![vec![1.0, 0.3, -0.2], vec![0.3, 0.9, 0.25], vec![-0.2, 0.25, 1.1]];
    let r = gaussian_reduction_monte_carlo(&c3, &sq, 400_000, rng)?;
    rows.push(CheckRow::at_most("gaussian_reduction_n3_mc", (r.lhs - r.rhs).abs(), 3.0 * r.stderr));
    Ok(rows)
}

fn check_moments(rng: &mut Rng) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let r = gaussian_moment_bounds_check(&id, &[1, 1], 100_000, rng)?;
    rows.push(CheckRow::at_most("moment_independent_pair", r.moment - 3.0 * r.stderr, r.sqrt_perm));
    let expected = 2.0 / std::f64::consts::PI;
    rows.push(CheckRow::at_most("moment_independent_value", (r.moment - expected).abs(), 3.0 * r.stderr));
    let ones = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
    let r = gaussian_moment_bounds_check(&ones, &[1, 1], 100_000, rng)?;
    rows.push(CheckRow::at_most("moment_correlated_pair", r.moment - 3.0 * r.stderr, r.sqrt_perm));
    let (mut worst_m, mut worst_p) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..100 {
        let k = 2 + rng.random_range(0..3);
        let c = random_psd(rng, 4, k, 0.0);
        let mut alpha: Vec<u64> = (0..4).map(|_| rng.random_range(0..3)).collect();
        if alpha.iter().all(|&a| a == 0) {
            alpha[0] = 1;
        }
        let r = gaussian_moment_bounds_check(&c, &alpha, 20_000, rng)?;
        worst_m = worst_m.max((r.moment - 3.0 * r.stderr) / r.sqrt_perm);
        worst_p = worst_p.max(r.perm / r.perm_bound);
    }
    rows.push(CheckRow::at_most("moment_psd_draws", worst_m, 1.0));
    rows.push(CheckRow::at_most("permanent_psd_bound", worst_p, 1.0 + 1e-12));
    Ok(rows)
}

fn check_simplex_beta(rng: &mut Rng) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let mut cases = vec![(0.0, 0.0), (-0.3, -0.4)];
    for _ in 0..4 {
        cases.push((-0.9 + 2.4 * rng.random::<f64>(), -0.9 + 2.4 * rng.random::<f64>()));
    }
    let mut worst = 0.0f64;
    for (a, b) in cases {
        let (q, e) = simplex_beta_base(a, b, 0.3, 1.1)?;
        worst = worst.max((q - e).abs());
    }
    rows.push(CheckRow::at_most("beta_simplex_identity", worst, 1e-6));
    for (id, w, eps) in [
        ("iterative_int_n1", vec![0.0], vec![1u8]),
        ("iterative_int_n2", vec![0.0, -0.2], vec![1, 0]),
        ("iterative_int_n3", vec![-0.1, 0.0, 0.2], vec![0, 1, 0]),
        ("iterative_int_n2_both", vec![0.0, 0.0], vec![1, 1]),
    ] {
        let r = simplex_beta_check(&SimplexBetaSpec {
            w,
            eps,
            h: 0.1,
            gamma: 0.05,
            theta: 0.4,
            theta_p: 0.2,
            t: 1.0,
        })?;
        rows.push(CheckRow::at_most(id, r.integral, r.iterated_bound));
        rows.push(CheckRow::at_most(format!("{id}_gamma_ratio"), r.integral, r.bound));
    }
    Ok(rows)
}

fn check_kernel_increment(rng: &mut Rng) -> Result<Vec<CheckRow>> {
    let h = HurstParam::new(0.1)?;
    let f = kernel_increment_bound_check(h, 1.0, 0.05, 1e-3, 1000, rng)?;
    let zero = increment_envelope(0.1, 0.05, 0.5, 0.5 - 1e-300, 0.5);
    Ok(vec![
        CheckRow::at_most("kernel_increment_validation", f.validation_max, f.constant * 1.05),
        CheckRow::at_most("kernel_increment_zero", zero.abs(), 1e-12),
    ])
}

fn check_kernel_double_integral(_: &mut Rng) -> Result<Vec<CheckRow>> {
    let h = HurstParam::new(0.1)?;
    let coarse = kernel_double_integral(h, 1.0, 0.02, 1e-4)?;
    let fine = kernel_double_integral(h, 1.0, 0.02, 1e-7)?;
    Ok(vec![CheckRow::at_most("kernel_double_integral_refinement", rel(coarse, fine), 0.05)])
}

fn check_haar(rng: &mut Rng) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let spec = HaarCheckSpec::new(0.2, 0.35, 10)?;
    let n = 1usize << spec.level;
    let r = haar_operator_check(&spec, &vec![1.0; n])?;
    rows.push(CheckRow::at_most("haar_constant", (r.lhs - 1.0).abs(), 1e-12));
    rows.push(CheckRow::at_most("haar_constant_bound", r.lhs, r.rhs));
    let mut worst = 0.0f64;
    for (i, j) in [(0, 0), (1, 1), (3, 5), (6, 17)] {
        let r = haar_operator_check(&spec, &haar_function_cells(i, j, spec.level))?;
        let expected = 2f64.powf(2.0 * i as f64 * spec.alpha);
        worst = worst.max(rel(r.lhs, expected));
        rows.push(CheckRow::at_most(format!("haar_single_{i}_{j}"), r.lhs, r.rhs));
    }
    rows.push(CheckRow::at_most("haar_single_norms", worst, 1e-12));
    let mut ratio = 0.0f64;
    for _ in 0..20 {
        let terms: Vec<(f64, f64, f64)> = (1..=6)
            .map(|k| (k as f64, (2.0 * rng.random::<f64>() - 1.0) / k as f64, std::f64::consts::TAU * rng.random::<f64>()))
            .collect();
        let c0 = 2.0 * rng.random::<f64>() - 1.0;
        let hcell = 1.0 / n as f64;
        // exact cell averages of Σ a_k sin(2πkx + φ_k)
        let cells: Vec<f64> = (0..n)
            .map(|c| {
                let (a, b) = (c as f64 * hcell, (c + 1) as f64 * hcell);
                c0 + terms
                    .iter()
                    .map(|&(k, amp, ph)| {
                        let w = std::f64::consts::TAU * k;
                        amp * ((w * a + ph).cos() - (w * b + ph).cos()) / (w * hcell)
                    })
                    .sum::<f64>()
            })
            .collect();
        let r = haar_operator_check(&spec, &cells)?;
        ratio = ratio.max(r.lhs / r.rhs);
    }
    rows.push(CheckRow::at_most("haar_random_functions", ratio, 1.0));
    Ok(rows)
}

fn check_stirling(rng: &mut Rng) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    let (l, r) = stirling_bound(&[1])?;
    rows.push(CheckRow::at_most("stirling_d1_a1", l.exp(), r.exp()));
    let (l, r) = stirling_bound(&[1, 1])?;
    rows.push(CheckRow::at_most("stirling_d2_a11", l.exp(), r.exp()));
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..100 {
        let d = rng.random_range(1..=8usize);
        let n = rng.random_range(1..=3usize);
        let entries: Vec<Vec<u64>> = (0..d).map(|_| (0..n).map(|_| rng.random_range(0..=3u64)).collect()).collect();
        let mut alpha = MultiIndex::new(entries)?;
        for row in &mut alpha.entries {
            if row.iter().sum::<u64>() == 0 {
                row[0] = 1;
            }
        }
        while alpha.norm() > 20 {
            let k = alpha.entries.iter().position(|r| r.iter().sum::<u64>() > 1).unwrap_or(0);
            let j = alpha.entries[k].iter().position(|&v| v > 0).unwrap_or(0);
            alpha.entries[k][j] -= 1;
            if alpha.entries[k].iter().sum::<u64>() == 0 {
                alpha.entries[k][j] = 1;
                break;
            }
        }
        let (l, r) = stirling_bound_check(&alpha)?;
        worst = worst.max(l - r);
    }
    rows.push(CheckRow::at_most("stirling_random_log_gap", worst, 0.0));
    Ok(rows)
}

fn check_occupation(rng: &mut Rng) -> Result<Vec<CheckRow>> {
    let n = 1 << 14;
    let path = fbm_path_exact(0.25, 1.0, n, rng);
    let (theta, t) = (0.1, 1.0);
    let one = |_: f64| 1.0;
    let c = occupation_density_check(&path, 1.0, &one, Some(&|z: f64| z), theta, t, 256)?;
    let mass = c.interval.1 - c.interval.0;
    let wide_g = |z: f64| if z.abs() <= 50.0 { 1.0 } else { 0.0 };
    let w = occupation_density_check(&path, 1.0, &wide_g, None, theta, t, 256)?;
    let width = 0.3;
    let centre = path[n / 2];
    let bump = move |z: f64| (-0.5 * ((z - centre) / width).powi(2)).exp();
    let anti = move |z: f64| {
        width * (std::f64::consts::PI / 2.0).sqrt() * crate::special::erf((z - centre) / (width * std::f64::consts::SQRT_2))
    };
    let b = occupation_density_check(&path, 1.0, &bump, Some(&anti), theta, t, 256)?;
    Ok(vec![
        CheckRow::at_most(
            "occupation_constant",
            rel(c.time_integral, mass).max(rel(c.space_integral, mass)),
            1e-12,
        ),
        CheckRow::at_most(
            "occupation_wide_interval",
            rel(w.time_integral, mass).max(rel(w.space_integral, mass)),
            1e-12,
        ),
        CheckRow::at_most("occupation_gaussian_bump", b.relative_gap, 0.01),
    ])
}
