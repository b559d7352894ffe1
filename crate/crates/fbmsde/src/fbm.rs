//! Scalar fractional Brownian motion with Hurst index below one half.

use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;
use crate::par;
use crate::quad::gauss_kronrod;
use crate::rng::{fill_normal, substream};
use crate::special::{beta, beta_reg};
use nalgebra::DMatrix;

/// Hurst index `H` in `(0, 1/2)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct HurstParam(f64);

impl HurstParam {
    pub fn new(h: f64) -> Result<Self> {
        if h > 0.0 && h < 0.5 {
            Ok(Self(h))
        } else {
            Err(invalid("H", format!("must lie in (0, 1/2), got {h}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `R_H(t, s) = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2`.
pub fn covariance(h: HurstParam, t: f64, s: f64) -> Result<f64> {
    if !(t >= 0.0 && s >= 0.0) {
        return Err(Error::Domain(format!("negative time ({t}, {s})")));
    }
    Ok(cov(h.0, t, s))
}

pub(crate) fn cov(h: f64, t: f64, s: f64) -> f64 {
    let e = 2.0 * h;
    0.5 * (t.powf(e) + s.powf(e) - (t - s).abs().powf(e))
}

/// Normalizing constant `c_H` of the Volterra kernel.
pub fn c_factor(h: HurstParam) -> f64 {
    let h = h.0;
    (2.0 * h / ((1.0 - 2.0 * h) * beta(1.0 - 2.0 * h, h + 0.5))).sqrt()
}

/// Interior integral `∫_s^t u^{H-3/2} (u-s)^{H-1/2} du` by adaptive quadrature.
///
/// With `w = (u - s)^{H+1/2}` the integrand becomes
/// `(s + w^{1/(H+1/2)})^{H-3/2} / (H+1/2)`, which is bounded on the whole range.
fn interior_integral(h: f64, t: f64, s: f64) -> Result<f64> {
    let p = h + 0.5;
    let upper = (t - s).powf(p);
    let e = gauss_kronrod(
        |w| (s + w.powf(1.0 / p)).powf(h - 1.5),
        0.0,
        upper,
        0.0,
        1e-12,
    )?;
    Ok(e.value / p)
}

/// Volterra kernel `K_H(t, s)` for `0 < s < t`.
pub fn kernel_k(h: HurstParam, t: f64, s: f64) -> Result<f64> {
    if !(s > 0.0 && s < t) {
        return Err(Error::Domain(format!(
            "kernel needs 0 < s < t, got t={t}, s={s}"
        )));
    }
    let hv = h.0;
    let lead = (t / s).powf(hv - 0.5) * (t - s).powf(hv - 0.5);
    let tail = (0.5 - hv) * s.powf(0.5 - hv) * interior_integral(hv, t, s)?;
    Ok(c_factor(h) * (lead + tail))
}

/// Kernel profile `k(x) = K_H(1, x)` through the regularized incomplete beta
/// function. `omx` must equal `1 - x` and is passed separately so it can be
/// computed without cancellation.
pub(crate) fn kernel_profile(h: f64, c_h: f64, b0: f64, x: f64, omx: f64) -> f64 {
    // a gap summed from pieces can round just past 1
    let omx = omx.min(1.0);
    let lead = x.powf(0.5 - h) * omx.powf(h - 0.5);
    // 1 - I_x(1-2H, H+1/2) = I_{1-x}(H+1/2, 1-2H)
    let upper = beta_reg(h + 0.5, 1.0 - 2.0 * h, omx);
    c_h * (lead + (0.5 - h) * x.powf(h - 0.5) * b0 * upper)
}

/// `K_H(t, s) = t^{H-1/2} k(s/t)` evaluated through the closed-form profile.
pub fn kernel_k_closed_form(h: HurstParam, t: f64, s: f64) -> Result<f64> {
    if !(s > 0.0 && s < t) {
        return Err(Error::Domain(format!(
            "kernel needs 0 < s < t, got t={t}, s={s}"
        )));
    }
    let hv = h.0;
    let b0 = beta(1.0 - 2.0 * hv, hv + 0.5);
    let x = s / t;
    Ok(t.powf(hv - 0.5) * kernel_profile(hv, c_factor(h), b0, x, (t - s) / t))
}

/// Closed-form kernel with the gap `t - s` passed separately, for callers that
/// know it more accurately than the difference of the two times.
pub fn kernel_k_with_gap(h: HurstParam, t: f64, s: f64, gap: f64) -> Result<f64> {
    if !(s > 0.0 && gap > 0.0 && t > 0.0) {
        return Err(Error::Domain(format!(
            "kernel needs 0 < s < t, got t={t}, s={s}, gap={gap}"
        )));
    }
    let hv = h.0;
    let b0 = beta(1.0 - 2.0 * hv, hv + 0.5);
    Ok(t.powf(hv - 0.5) * kernel_profile(hv, c_factor(h), b0, s / t, gap / t))
}

/// How a kernel cell is collapsed to one matrix entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellRule {
    /// `(1/h) ∫_cell K(t_i, u) du`.
    CellAverage,
    /// `sqrt((1/h) ∫_cell K(t_i, u)^2 du)`.
    L2Cell,
}

/// Integrate `g` over `[a, b] ⊂ [0, 1]` where `g(x, 1-x)` may carry integrable
/// power singularities `x^qa` at 0 and `(1-x)^qb` at 1.
fn integrate_profile(
    g: &impl Fn(f64, f64) -> f64,
    a: f64,
    b: f64,
    qa: Option<f64>,
    qb: Option<f64>,
) -> Result<f64> {
    const TOL: f64 = 1e-11;
    match (qa, qb) {
        (Some(_), Some(_)) => {
            let m = 0.5 * (a + b);
            Ok(integrate_profile(g, a, m, qa, None)? + integrate_profile(g, m, b, None, qb)?)
        }
        (Some(q), None) => {
            // x = y^{1/(q+1)}, dx = y^{1/(q+1)-1} dy / (q+1)
            let r = 1.0 / (q + 1.0);
            let lo = a.powf(q + 1.0);
            let hi = b.powf(q + 1.0);
            let e = gauss_kronrod(
                |y| {
                    // x^{q+1} = y, so the integrand is r·g(x)·x^{-q}; that
                    // product is smooth, and x is kept off 0 when y^r underflows
                    let x = y.powf(r).max(f64::MIN_POSITIVE);
                    r * g(x, 1.0 - x) * x.powf(-q)
                },
                lo,
                hi,
                0.0,
                TOL,
            )?;
            Ok(e.value)
        }
        (None, Some(q)) => {
            let r = 1.0 / (q + 1.0);
            let lo = (1.0 - b).powf(q + 1.0);
            let hi = (1.0 - a).powf(q + 1.0);
            let e = gauss_kronrod(
                |y| {
                    let omx = y.powf(r).max(f64::MIN_POSITIVE);
                    r * g(1.0 - omx, omx) * omx.powf(-q)
                },
                lo,
                hi,
                0.0,
                TOL,
            )?;
            Ok(e.value)
        }
        (None, None) => Ok(gauss_kronrod(|x| g(x, 1.0 - x), a, b, 0.0, TOL)?.value),
    }
}

/// Lower-triangular discretization of `K_H` on a grid.
///
/// Row `i` (node `t_i`, `1 ≤ i ≤ N`) and column `j` (cell `(t_{j-1}, t_j]`)
/// hold the entry for `j ≤ i`; the `s = 0` column is not part of the matrix.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub h: HurstParam,
    pub grid: TimeGrid,
    pub cell_rule: CellRule,
    pub c_h: f64,
    entries: Vec<f64>,
}

impl KernelMatrix {
    pub fn n(&self) -> usize {
        self.grid.n_cells()
    }

    /// Entries `(i, 1..=i)` for `1 ≤ i ≤ N`.
    pub fn row(&self, i: usize) -> &[f64] {
        let start = (i - 1) * i / 2;
        &self.entries[start..start + i]
    }

    /// Entry `(i, j)`; zero above the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j > i || j == 0 || i == 0 {
            0.0
        } else {
            self.row(i)[j - 1]
        }
    }

    /// `B_{t_i} = Σ_j M_ij ΔW_j` for all nodes; `out[0] = 0`.
    pub fn apply(&self, increments: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        for i in 1..=self.n() {
            out[i] = self
                .row(i)
                .iter()
                .zip(&increments[..i])
                .map(|(m, w)| m * w)
                .sum();
        }
    }
}

/// Build the kernel matrix for `H` on `grid`.
pub fn kernel_matrix(h: HurstParam, grid: &TimeGrid, cell_rule: CellRule) -> Result<KernelMatrix> {
    let hv = h.value();
    let c_h = c_factor(h);
    let b0 = beta(1.0 - 2.0 * hv, hv + 0.5);
    let n = grid.n_cells();
    let step = grid.step();
    let k = move |x: f64, omx: f64| kernel_profile(hv, c_h, b0, x, omx);
    let (q0, q1) = match cell_rule {
        CellRule::CellAverage => (hv - 0.5, hv - 0.5),
        CellRule::L2Cell => (2.0 * hv - 1.0, 2.0 * hv - 1.0),
    };
    let rows = par::map_indexed(n, |r| -> Result<Vec<f64>> {
        let i = r + 1;
        let t = grid.node(i);
        let fi = i as f64;
        let mut row = Vec::with_capacity(i);
        for j in 1..=i {
            let a = (j - 1) as f64 / fi;
            let b = j as f64 / fi;
            let qa = (j == 1).then_some(q0);
            let qb = (j == i).then_some(q1);
            let v = match cell_rule {
                CellRule::CellAverage => {
                    t.powf(hv + 0.5) * integrate_profile(&k, a, b, qa, qb)? / step
                }
                CellRule::L2Cell => {
                    let sq = |x: f64, omx: f64| {
                        let v = k(x, omx);
                        v * v
                    };
                    (t.powf(2.0 * hv) * integrate_profile(&sq, a, b, qa, qb)? / step).sqrt()
                }
            };
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::NonFinite(format!("kernel cell ({i}, {j}) = {v}")));
            }
            row.push(v);
        }
        Ok(row)
    });
    let mut entries = Vec::with_capacity(n * (n + 1) / 2);
    for row in rows {
        entries.extend(row?);
    }
    Ok(KernelMatrix {
        h,
        grid: grid.clone(),
        cell_rule,
        c_h,
        entries,
    })
}

/// Monte Carlo paths of a scalar process, one row per path.
#[derive(Debug, Clone)]
pub struct ScalarPath {
    pub grid: TimeGrid,
    pub n_paths: usize,
    /// Row-major `n_paths × (N + 1)`.
    pub values: Vec<f64>,
}

impl ScalarPath {
    pub fn path(&self, p: usize) -> &[f64] {
        let w = self.grid.len();
        &self.values[p * w..(p + 1) * w]
    }
}

/// Sampling scheme for fBm paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMethod {
    /// Kernel matrix applied to Wiener increments.
    Kernel(CellRule),
    /// Exact covariance factorization.
    Cholesky,
}

enum Factor {
    Kernel(KernelMatrix),
    /// Packed lower Cholesky factor, same layout as the kernel matrix.
    Cholesky(Vec<f64>),
}

/// Reusable path generator for one Hurst index and grid.
pub struct FbmSampler {
    grid: TimeGrid,
    factor: Factor,
}

/// Jitter values added to the covariance diagonal, in order, before giving up.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-14, 1e-13, 1e-12, 1e-11, 1e-10];

fn cholesky_packed(h: f64, grid: &TimeGrid) -> Result<Vec<f64>> {
    let n = grid.n_cells();
    let t = grid.nodes();
    let cov_m = DMatrix::from_fn(n, n, |i, j| cov(h, t[i + 1], t[j + 1]));
    for &jit in &JITTER_LADDER {
        let mut m = cov_m.clone();
        for i in 0..n {
            m[(i, i)] += jit;
        }
        if let Some(ch) = m.cholesky() {
            let l = ch.l();
            let mut packed = Vec::with_capacity(n * (n + 1) / 2);
            for i in 0..n {
                for j in 0..=i {
                    packed.push(l[(i, j)]);
                }
            }
            return Ok(packed);
        }
    }
    Err(Error::Factorization {
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1],
    })
}

impl FbmSampler {
    pub fn new(h: HurstParam, grid: &TimeGrid, method: SampleMethod) -> Result<Self> {
        let factor = match method {
            SampleMethod::Kernel(rule) => Factor::Kernel(kernel_matrix(h, grid, rule)?),
            SampleMethod::Cholesky => Factor::Cholesky(cholesky_packed(h.value(), grid)?),
        };
        Ok(Self {
            grid: grid.clone(),
            factor,
        })
    }

    pub fn from_kernel(km: KernelMatrix) -> Self {
        Self {
            grid: km.grid.clone(),
            factor: Factor::Kernel(km),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn kernel(&self) -> Option<&KernelMatrix> {
        match &self.factor {
            Factor::Kernel(k) => Some(k),
            Factor::Cholesky(_) => None,
        }
    }

    /// Draw the standard normals of one path into `z` (length `N`).
    pub fn draw_normals(seed: u64, component: u64, path: u64, z: &mut [f64]) {
        let mut rng = substream(seed, component, path);
        fill_normal(&mut rng, z);
    }

    /// Map standard normals `z` (length `N`) to a path `out` (length `N+1`).
    /// For the kernel method the Wiener increments are `sqrt(step)·z`.
    pub fn path_from_normals(&self, z: &[f64], out: &mut [f64]) {
        let n = self.grid.n_cells();
        out[0] = 0.0;
        match &self.factor {
            Factor::Kernel(k) => {
                let sh = self.grid.step().sqrt();
                for i in 1..=n {
                    let s: f64 = k.row(i).iter().zip(&z[..i]).map(|(m, w)| m * w).sum();
                    out[i] = s * sh;
                }
            }
            Factor::Cholesky(l) => {
                for i in 1..=n {
                    let start = (i - 1) * i / 2;
                    out[i] = l[start..start + i]
                        .iter()
                        .zip(&z[..i])
                        .map(|(a, b)| a * b)
                        .sum();
                }
            }
        }
    }

    /// Path number `path` of substream `component` under `seed`.
    pub fn sample_path(&self, seed: u64, component: u64, path: u64, out: &mut [f64]) {
        let mut z = vec![0.0; self.grid.n_cells()];
        Self::draw_normals(seed, component, path, &mut z);
        self.path_from_normals(&z, out);
    }
}

/// Sample `n_paths` fBm paths; deterministic in `(seed, method)`.
pub fn sample_fbm(
    h: HurstParam,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    method: SampleMethod,
) -> Result<ScalarPath> {
    if n_paths == 0 {
        return Err(invalid("n_paths", "must be at least 1"));
    }
    let sampler = FbmSampler::new(h, grid, method)?;
    let w = grid.len();
    let rows = par::map_indexed(n_paths, |p| {
        let mut out = vec![0.0; w];
        sampler.sample_path(seed, 0, p as u64, &mut out);
        out
    });
    Ok(ScalarPath {
        grid: grid.clone(),
        n_paths,
        values: rows.concat(),
    })
}

/// Conditional variance together with a flag telling whether near-dependent
/// conditioning directions were dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalVariance {
    pub value: f64,
    pub regularized: bool,
}

/// Relative pivot threshold below which a conditioning direction is treated
/// as linearly dependent on the ones already used.
pub const PIVOT_JITTER: f64 = 1e-12;

/// `Var(X_target | X_S)` for a centered Gaussian vector with covariance `c`,
/// by Schur complement with symmetric (largest-diagonal) pivoting.
pub fn gaussian_conditional_variance(c: &DMatrix<f64>, target: usize, cond: &[usize]) -> ConditionalVariance {
    let mut idx: Vec<usize> = cond.to_vec();
    idx.push(target);
    let m = idx.len();
    let mut a = DMatrix::from_fn(m, m, |i, j| c[(idx[i], idx[j])]);
    let scale = (0..m).fold(0.0f64, |s, i| s.max(a[(i, i)].abs())).max(f64::MIN_POSITIVE);
    let mut remaining: Vec<usize> = (0..m - 1).collect();
    let mut regularized = false;
    let t = m - 1;
    while !remaining.is_empty() {
        let (pos, &p) = remaining
            .iter()
            .enumerate()
            .max_by(|x, y| a[(*x.1, *x.1)].total_cmp(&a[(*y.1, *y.1)]))
            .expect("non-empty");
        let d = a[(p, p)];
        if d <= PIVOT_JITTER * scale {
            regularized = true;
            break;
        }
        remaining.swap_remove(pos);
        let col: Vec<f64> = (0..m).map(|i| a[(i, p)]).collect();
        let mut live = remaining.clone();
        live.push(t);
        for &i in &live {
            let f = col[i] / d;
            if f == 0.0 {
                continue;
            }
            for &j in &live {
                a[(i, j)] -= f * col[j];
            }
        }
    }
    ConditionalVariance {
        value: a[(t, t)].max(0.0),
        regularized,
    }
}

/// `Var(B_t | B_{s}, s ∈ cond_times)` for arbitrary (possibly repeated) times.
pub fn conditional_variance_at(h: HurstParam, target_time: f64, cond_times: &[f64]) -> ConditionalVariance {
    let mut times = cond_times.to_vec();
    times.push(target_time);
    let m = times.len();
    let c = DMatrix::from_fn(m, m, |i, j| cov(h.value(), times[i], times[j]));
    let cond: Vec<usize> = (0..m - 1).collect();
    gaussian_conditional_variance(&c, m - 1, &cond)
}

/// `Var(B_{t_i} | B_{t_j}, j ∈ conditioning)` on grid nodes.
pub fn conditional_variance(
    h: HurstParam,
    grid: &TimeGrid,
    target_index: usize,
    conditioning: &[usize],
) -> Result<ConditionalVariance> {
    if conditioning.contains(&target_index) {
        return Err(invalid("conditioning", "must not contain the target index"));
    }
    if target_index >= grid.len() || conditioning.iter().any(|&j| j >= grid.len()) {
        return Err(invalid("index", "outside the grid"));
    }
    let times: Vec<f64> = conditioning.iter().map(|&j| grid.node(j)).collect();
    Ok(conditional_variance_at(h, grid.node(target_index), &times))
}

/// Empirical local non-determinism constant.
#[derive(Debug, Clone, PartialEq)]
pub struct LndConstants {
    pub h: HurstParam,
    pub r: f64,
    pub estimate: f64,
    /// Number of grid cells used, recorded with the estimate.
    pub grid_cells: usize,
    pub grid_t_end: f64,
}

/// `min_t Var(B_t | B_s, |t - s| ≥ r) / r^{2H}` over grid nodes `t ≥ r`.
pub fn estimate_lnd_constant(h: HurstParam, grid: &TimeGrid, r: f64) -> Result<LndConstants> {
    if !(r > 0.0 && r <= grid.t_end()) {
        return Err(invalid("r", format!("must lie in (0, T], got {r}")));
    }
    let nodes = grid.nodes();
    let n = grid.n_cells();
    let all = DMatrix::from_fn(n + 1, n + 1, |i, j| cov(h.value(), nodes[i], nodes[j]));
    let targets: Vec<usize> = (1..=n).filter(|&i| nodes[i] >= r * (1.0 - 1e-12)).collect();
    let tol = 1e-12 * grid.step();
    let vals = par::map_indexed(targets.len(), |k| {
        let i = targets[k];
        let cond: Vec<usize> = (1..=n)
            .filter(|&j| (nodes[i] - nodes[j]).abs() >= r - tol)
            .collect();
        if cond.is_empty() {
            None
        } else {
            Some(gaussian_conditional_variance(&all, i, &cond).value)
        }
    });
    let est = vals
        .into_iter()
        .flatten()
        .fold(f64::INFINITY, f64::min);
    if !est.is_finite() {
        return Err(Error::Domain(format!(
            "grid with {n} cells has no conditioning nodes at distance {r}"
        )));
    }
    Ok(LndConstants {
        h,
        r,
        estimate: est / r.powf(2.0 * h.value()),
        grid_cells: n,
        grid_t_end: grid.t_end(),
    })
}

/// `∫_0^{t∧s} K_H(t,u) K_H(s,u) du` by double-exponential quadrature; equals
/// `R_H(t, s)` when the kernel is right.
pub fn kernel_covariance_quadrature(h: HurstParam, t: f64, s: f64) -> Result<f64> {
    let (hi, lo) = if t >= s { (t, s) } else { (s, t) };
    if lo <= 0.0 {
        return Ok(0.0);
    }
    let hv = h.value();
    let c_h = c_factor(h);
    let b0 = beta(1.0 - 2.0 * hv, hv + 0.5);
    let kk = |tt: f64, u: f64, gap: f64| tt.powf(hv - 0.5) * kernel_profile(hv, c_h, b0, u / tt, gap / tt);
    let e = crate::quad::tanh_sinh(
        |u, _dl, dr| kk(hi, u, hi - lo + dr) * kk(lo, u, dr),
        0.0,
        lo,
        1e-10,
    )?;
    Ok(e.value)
}

/// Largest relative gap between the covariance of the kernel-method law,
/// `step · Σ_k M_ik M_jk`, and `R_H(t_i, t_j)`, restricted to `i, j ≥ from`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LawDiscrepancy {
    pub max_relative: f64,
    pub at: (usize, usize),
}

pub fn kernel_law_discrepancy(km: &KernelMatrix, from: usize) -> LawDiscrepancy {
    let n = km.n();
    let step = km.grid.step();
    let mut worst = LawDiscrepancy {
        max_relative: 0.0,
        at: (0, 0),
    };
    for i in from.max(1)..=n {
        for j in from.max(1)..=i {
            let c: f64 = km.row(j).iter().zip(km.row(i)).map(|(a, b)| a * b).sum::<f64>() * step;
            let r = cov(km.h.value(), km.grid.node(i), km.grid.node(j));
            let e = (c - r).abs() / r;
            if e > worst.max_relative {
                worst = LawDiscrepancy {
                    max_relative: e,
                    at: (i, j),
                };
            }
        }
    }
    worst
}
