//! Gaussian moment, conditioning and occupation-density checks.

use nalgebra::{DMatrix, DVector};

use super::combinatorics::permanent;
use crate::error::{invalid, Error, Result};
use crate::quad::gauss_kronrod;
use crate::rng::{fill_normal, Rng};
use crate::special::factorial;

fn to_matrix(cov: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = cov.len();
    if n == 0 || cov.iter().any(|r| r.len() != n) {
        return Err(invalid("covariance", "must be a non-empty square matrix"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| cov[i][j]))
}

fn cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .cholesky()
        .map(|c| c.l())
        .ok_or(Error::Factorization { jitter: 0.0 })
}

/// Square root `V diag(√λ)` of a positive semidefinite matrix.
fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = m.clone().symmetric_eigen();
    let scale = e.eigenvalues.amax().max(1.0);
    if e.eigenvalues.iter().any(|&v| v < -1e-12 * scale) {
        return Err(Error::Domain("covariance is not positive semidefinite".into()));
    }
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    Ok(e.eigenvectors * d)
}

/// Outcome of [`gaussian_moment_bounds_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    /// Monte Carlo `E Π_j |X_j|^{α_j}`.
    pub moment: f64,
    pub stderr: f64,
    /// `sqrt(perm A)` for the covariance `A` of the replicated vector.
    pub sqrt_perm: f64,
    pub perm: f64,
    /// `(size A)! Π_i a_ii`.
    pub perm_bound: f64,
    /// `moment − 3·stderr ≤ sqrt_perm`.
    pub moment_holds: bool,
    pub perm_holds: bool,
}

/// Covariance of the vector holding `X_j` repeated `α_j` times.
pub fn replicated_covariance(cov: &[Vec<f64>], alpha: &[u64]) -> Vec<Vec<f64>> {
    let idx: Vec<usize> = alpha
        .iter()
        .enumerate()
        .flat_map(|(j, &a)| std::iter::repeat_n(j, a as usize))
        .collect();
    idx.iter().map(|&i| idx.iter().map(|&j| cov[i][j]).collect()).collect()
}

/// Compare `E Π|X_j|^{α_j}` with `sqrt(perm A)` and `perm A` with
/// `(size A)! Π a_ii`, where `A` is the covariance of the replicated vector.
pub fn gaussian_moment_bounds_check(cov: &[Vec<f64>], alpha: &[u64], n_mc: usize, rng: &mut Rng) -> Result<MomentReport> {
    let m = to_matrix(cov)?;
    let n = m.nrows();
    if n > 8 || alpha.len() != n {
        return Err(invalid("covariance", "size ≤ 8 with one exponent per coordinate"));
    }
    let l = psd_sqrt(&m)?;
    let rep = replicated_covariance(cov, alpha);
    let perm = permanent(&rep)?;
    let diag: f64 = (0..rep.len()).map(|i| rep[i][i]).product();
    let perm_bound = factorial(rep.len() as u64) * diag;
    let mut z = vec![0.0; n];
    let (mut s, mut ss) = (0.0, 0.0);
    for _ in 0..n_mc {
        fill_normal(rng, &mut z);
        let x = &l * DVector::from_column_slice(&z);
        let v: f64 = x.iter().zip(alpha).map(|(xi, &a)| xi.abs().powi(a as i32)).product();
        s += v;
        ss += v * v;
    }
    let nf = n_mc as f64;
    let moment = s / nf;
    let stderr = ((ss / nf - moment * moment).max(0.0) / (nf - 1.0)).sqrt();
    let sqrt_perm = perm.max(0.0).sqrt();
    Ok(MomentReport {
        moment,
        stderr,
        sqrt_perm,
        perm,
        perm_bound,
        moment_holds: moment - 3.0 * stderr <= sqrt_perm,
        perm_holds: perm <= perm_bound * (1.0 + 1e-12),
    })
}

/// `Var(X_j | X_i, i ∈ given)` by the Schur complement.
pub fn conditional_variance(cov: &DMatrix<f64>, j: usize, given: &[usize]) -> Result<f64> {
    if given.is_empty() {
        return Ok(cov[(j, j)]);
    }
    let g = DMatrix::from_fn(given.len(), given.len(), |a, b| cov[(given[a], given[b])]);
    let c = DVector::from_iterator(given.len(), given.iter().map(|&i| cov[(i, j)]));
    let lu = g.lu();
    let sol = lu.solve(&c).ok_or_else(|| Error::Domain("singular conditioning block".into()))?;
    Ok(cov[(j, j)] - c.dot(&sol))
}

/// Outcome of [`gaussian_conditioning_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningReport {
    pub det: f64,
    /// `Π_j Var(X_j | X_{<j})`.
    pub product: f64,
    pub relative_gap: f64,
    /// Largest increase of a conditional variance when a variable is added
    /// to the conditioning set; non-positive when monotonicity holds.
    pub worst_monotonicity: f64,
}

/// Determinant factorization and conditional-variance monotonicity.
pub fn gaussian_conditioning_check(cov: &[Vec<f64>]) -> Result<ConditioningReport> {
    let m = to_matrix(cov)?;
    let n = m.nrows();
    if n > 6 {
        return Err(invalid("covariance", "size ≤ 6"));
    }
    let det = m.determinant();
    if !(det > 0.0) {
        return Err(Error::Domain(format!("singular covariance, det = {det:e}")));
    }
    let mut product = 1.0;
    for j in 0..n {
        product *= conditional_variance(&m, j, &(0..j).collect::<Vec<_>>())?;
    }
    let mut worst = f64::NEG_INFINITY;
    for j in 0..n {
        let others: Vec<usize> = (0..n).filter(|&i| i != j).collect();
        // every conditioning set against each superset with one more element
        for mask in 0u32..(1 << others.len()) {
            let set: Vec<usize> = (0..others.len()).filter(|&b| mask & (1 << b) != 0).map(|b| others[b]).collect();
            let v = conditional_variance(&m, j, &set)?;
            for b in 0..others.len() {
                if mask & (1 << b) == 0 {
                    let mut big = set.clone();
                    big.push(others[b]);
                    let w = conditional_variance(&m, j, &big)?;
                    worst = worst.max(w - v);
                }
            }
        }
    }
    Ok(ConditioningReport {
        det,
        product,
        relative_gap: (det - product).abs() / det,
        worst_monotonicity: worst,
    })
}

/// Both sides of the reduction of a Gaussian integral to one dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub relative_gap: f64,
    /// Standard error of `lhs` when it was estimated by Monte Carlo.
    pub stderr: f64,
}

fn cd_rhs(g: &dyn Fn(f64) -> f64, det: f64, sigma1: f64, n: usize) -> Result<f64> {
    let tail = gauss_kronrod(|v| g(v / sigma1) * (-0.5 * v * v).exp(), -14.0, 14.0, 1e-14, 1e-12)?.value;
    Ok((2.0 * std::f64::consts::PI).powf(0.5 * (n as f64 - 1.0)) / det.sqrt() * tail)
}

/// `∫ g(v_1) e^{-½ Var(Σ v_j Z_j)} dv` against its one-dimensional reduction
/// for `n = 2` by nested quadrature.
pub fn gaussian_reduction_quadrature(cov: &[Vec<f64>], g: &(dyn Fn(f64) -> f64 + Sync)) -> Result<CdCheck> {
    let m = to_matrix(cov)?;
    if m.nrows() != 2 {
        return Err(invalid("covariance", "the quadrature variant is two-dimensional"));
    }
    let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) {
        return Err(Error::Domain("singular covariance".into()));
    }
    let sigma1 = (det / c).sqrt();
    // v_1 has marginal weight exp(-½ v_1² det/c), v_2 | v_1 is centred at -b v_1/c
    let w1 = 14.0 / sigma1;
    let w2 = 14.0 / c.sqrt();
    let lhs = gauss_kronrod(
        |v1| {
            let centre = -b * v1 / c;
            let inner = gauss_kronrod(
                |v2| (-0.5 * (a * v1 * v1 + 2.0 * b * v1 * v2 + c * v2 * v2)).exp(),
                centre - w2,
                centre + w2,
                1e-300,
                1e-12,
            )
            .map(|e| e.value)
            .unwrap_or(f64::NAN);
            g(v1) * inner
        },
        -w1,
        w1,
        1e-300,
        1e-11,
    )?
    .value;
    let rhs = cd_rhs(g, det, sigma1, 2)?;
    Ok(CdCheck {
        lhs,
        rhs,
        relative_gap: (lhs - rhs).abs() / rhs.abs(),
        stderr: 0.0,
    })
}

/// Monte Carlo variant: the left side equals `(2π)^{n/2} det(Σ)^{-1/2} E g(V_1)`
/// with `V ~ N(0, Σ^{-1})`.
pub fn gaussian_reduction_monte_carlo(cov: &[Vec<f64>], g: &dyn Fn(f64) -> f64, n_mc: usize, rng: &mut Rng) -> Result<CdCheck> {
    let m = to_matrix(cov)?;
    let n = m.nrows();
    let det = m.determinant();
    let inv = m.clone().try_inverse().ok_or_else(|| Error::Domain("singular covariance".into()))?;
    let sigma1 = (1.0 / inv[(0, 0)]).sqrt();
    let l = cholesky(&inv)?;
    let mut z = vec![0.0; n];
    let (mut s, mut ss) = (0.0, 0.0);
    for _ in 0..n_mc {
        fill_normal(rng, &mut z);
        let v1: f64 = (0..n).map(|j| l[(0, j)] * z[j]).sum();
        let x = g(v1);
        s += x;
        ss += x * x;
    }
    let nf = n_mc as f64;
    let mean = s / nf;
    let se = ((ss / nf - mean * mean).max(0.0) / (nf - 1.0)).sqrt();
    let scale = (2.0 * std::f64::consts::PI).powf(0.5 * n as f64) / det.sqrt();
    let rhs = cd_rhs(g, det, sigma1, n)?;
    let lhs = scale * mean;
    Ok(CdCheck {
        lhs,
        rhs,
        relative_gap: (lhs - rhs).abs() / rhs.abs(),
        stderr: scale * se,
    })
}

/// Exact fractional Gaussian noise with unit spacing by Durbin–Levinson.
pub fn fgn_durbin_levinson(h: f64, n: usize, rng: &mut Rng) -> Vec<f64> {
    let gamma = |k: usize| {
        let k = k as f64;
        0.5 * ((k + 1.0).powf(2.0 * h) - 2.0 * k.powf(2.0 * h) + (k - 1.0).abs().powf(2.0 * h))
    };
    let mut z = vec![0.0; n];
    fill_normal(rng, &mut z);
    let mut x = vec![0.0; n];
    let mut phi = vec![0.0; n];
    let mut prev = vec![0.0; n];
    let mut v = gamma(0);
    x[0] = v.sqrt() * z[0];
    for t in 1..n {
        let num = gamma(t) - (0..t - 1).map(|j| prev[j] * gamma(t - 1 - j)).sum::<f64>();
        let k = num / v;
        for j in 0..t - 1 {
            phi[j] = prev[j] - k * prev[t - 2 - j];
        }
        phi[t - 1] = k;
        v *= 1.0 - k * k;
        let mean: f64 = (0..t).map(|j| phi[j] * x[t - 1 - j]).sum();
        x[t] = mean + v.sqrt() * z[t];
        prev[..t].copy_from_slice(&phi[..t]);
    }
    x
}

/// fBm on `[0, t_end]` at `n + 1` nodes from exact fGn.
pub fn fbm_path_exact(h: f64, t_end: f64, n: usize, rng: &mut Rng) -> Vec<f64> {
    let scale = (t_end / n as f64).powf(h);
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    let mut acc = 0.0;
    for v in fgn_durbin_levinson(h, n, rng) {
        acc += scale * v;
        out.push(acc);
    }
    out
}

/// Outcome of [`occupation_density_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationCheck {
    /// `∫_θ^t g(B_s) ds` by the trapezoid rule.
    pub time_integral: f64,
    /// `∫ g(z) L̂(z) dz` with the binned occupation density.
    pub space_integral: f64,
    pub relative_gap: f64,
    /// Occupation time in each bin.
    pub occupation: Vec<f64>,
    pub bin_edges: Vec<f64>,
    /// The interval actually used, after snapping `θ` and `t` to grid nodes.
    pub interval: (f64, f64),
}

/// Compare the time integral of `g` along a path with the space integral
/// against the histogram occupation density. The path is linearly
/// interpolated between nodes; each segment spreads its duration over the
/// bins it crosses.
pub fn occupation_density_check(
    path: &[f64],
    t_end: f64,
    g: &(dyn Fn(f64) -> f64 + Sync),
    g_antiderivative: Option<&dyn Fn(f64) -> f64>,
    theta: f64,
    t: f64,
    bins: usize,
) -> Result<OccupationCheck> {
    let n = path.len() - 1;
    let h = t_end / n as f64;
    if !(0.0 <= theta && theta < t && t <= t_end) || bins == 0 {
        return Err(invalid("theta", "need 0 ≤ θ < t ≤ T and at least one bin"));
    }
    let i0 = (theta / h).round() as usize;
    let i1 = (t / h).round() as usize;
    let seg = &path[i0..=i1];
    let lo = seg.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = seg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 1e-9 * (hi - lo).max(1.0);
    let (lo, hi) = (lo - pad, hi + pad);
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|b| lo + b as f64 * width).collect();
    let mut occ = vec![0.0; bins];
    let bin_of = |x: f64| (((x - lo) / width) as usize).min(bins - 1);
    let mut time_integral = 0.0;
    for w in seg.windows(2) {
        time_integral += 0.5 * h * (g(w[0]) + g(w[1]));
        let (a, b) = if w[0] <= w[1] { (w[0], w[1]) } else { (w[1], w[0]) };
        if b - a < 1e-300 {
            occ[bin_of(a)] += h;
            continue;
        }
        let (ba, bb) = (bin_of(a), bin_of(b));
        for (k, o) in occ.iter_mut().enumerate().take(bb + 1).skip(ba) {
            let l = a.max(edges[k]);
            let r = b.min(edges[k + 1]);
            if r > l {
                *o += h * (r - l) / (b - a);
            }
        }
    }
    let mut space_integral = 0.0;
    for (k, o) in occ.iter().enumerate() {
        if *o == 0.0 {
            continue;
        }
        let avg = match g_antiderivative {
            Some(gi) => (gi(edges[k + 1]) - gi(edges[k])) / width,
            None => gauss_kronrod(g, edges[k], edges[k + 1], 1e-15, 1e-12)?.value / width,
        };
        space_integral += avg * o;
    }
    Ok(OccupationCheck {
        time_integral,
        space_integral,
        relative_gap: (time_integral - space_integral).abs() / time_integral.abs().max(f64::MIN_POSITIVE),
        occupation: occ,
        bin_edges: edges,
        interval: (i0 as f64 * h, i1 as f64 * h),
    })
}
