//! Shifts of the driving Wiener processes, stochastic exponentials and the
//! reweighted weak-solution estimator.

use std::sync::Arc;

use crate::cyl::CylSampler;
use crate::drift::{Drift, DriftSpec};
use crate::error::{invalid, Error, Result};
use crate::fbm::{c_factor, HurstParam, KernelMatrix};
use crate::fraccalc::kh_inverse_ac;
use crate::grid::{GridFunction, TimeGrid};
use crate::par;
use crate::special::{beta, gamma};

/// `c_H Γ(H+1/2)`: ratio between `∫_0^t K_H(t,s)φ(s)ds` and the
/// fractional-calculus form of `K_H`.
pub fn kernel_normalization(h: HurstParam) -> f64 {
    c_factor(h) * gamma(h.value() + 0.5)
}

/// `v = K_H^{-1}(∫_0^· u)`, normalized so that `∫_0^t K_H(t,s) v(s) ds = ∫_0^t u`.
pub fn shift_to_wiener(h: HurstParam, u: &GridFunction) -> GridFunction {
    let n = kernel_normalization(h);
    kh_inverse_ac(h, u).map(|_, v| v / n)
}

/// `κ_H` with `|shift_to_wiener(u)(s)| ≤ κ_H ‖u‖_∞ s^{1/2-H}`; equality for
/// constant `u`.
pub fn shift_bound_constant(h: HurstParam) -> f64 {
    let hv = h.value();
    beta(1.5 - hv, 0.5 - hv) / gamma(0.5 - hv) / kernel_normalization(h)
}

/// Deterministic or per-path shift `u_k` of each component.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftProcess {
    pub components: Vec<GridFunction>,
}

impl ShiftProcess {
    pub fn d(&self) -> usize {
        self.components.len()
    }
}

/// Wiener increments `ΔW` per path and component.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerIncrements {
    pub grid: TimeGrid,
    pub d: usize,
    pub n_paths: usize,
    /// `values[(p·d + k)·N + j]` is the increment over cell `j+1`.
    pub values: Vec<f64>,
}

impl WienerIncrements {
    /// Increments drawn from the same substreams the cylindrical sampler uses.
    pub fn from_seed(grid: &TimeGrid, d: usize, n_paths: usize, seed: u64) -> Self {
        let n = grid.n_cells();
        let sh = grid.step().sqrt();
        let rows = par::map_indexed(n_paths, |p| {
            let mut z = vec![0.0; d * n];
            for k in 0..d {
                crate::fbm::FbmSampler::draw_normals(seed, k as u64, p as u64, &mut z[k * n..(k + 1) * n]);
            }
            z.iter_mut().for_each(|v| *v *= sh);
            z
        });
        Self {
            grid: grid.clone(),
            d,
            n_paths,
            values: rows.concat(),
        }
    }

    pub fn component(&self, k: usize, p: usize) -> &[f64] {
        let n = self.grid.n_cells();
        let s = (p * self.d + k) * n;
        &self.values[s..s + n]
    }
}

/// Per-path stochastic exponentials.
#[derive(Debug, Clone, PartialEq)]
pub struct GirsanovWeight {
    pub values: Vec<f64>,
    pub log_values: Vec<f64>,
    pub t_end: f64,
}

impl GirsanovWeight {
    /// Mean and standard error of the weights.
    pub fn mean(&self) -> (f64, f64) {
        mean_stderr(&self.values)
    }
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// `log ℰ = Σ_k [-Σ_j v_k ΔW_j - ½ Σ_j v_k² h]` with `v_k = shift_to_wiener(u_k)`
/// averaged over each cell.
pub fn stochastic_exponential(shifts: &ShiftProcess, inc: &WienerIncrements, hursts: &[HurstParam]) -> Result<GirsanovWeight> {
    if shifts.d() != inc.d || hursts.len() < inc.d {
        return Err(invalid(
            "shifts",
            format!("{} shifts, {} increment components, {} Hurst indices", shifts.d(), inc.d, hursts.len()),
        ));
    }
    if shifts.components.iter().any(|u| u.grid != inc.grid) {
        return Err(invalid("shifts", "grid differs from the increments"));
    }
    let n = inc.grid.n_cells();
    let step = inc.grid.step();
    let mut cells = Vec::with_capacity(inc.d);
    for (k, u) in shifts.components.iter().enumerate() {
        let v = shift_to_wiener(hursts[k], u);
        let c: Vec<f64> = (0..n).map(|j| 0.5 * (v.values[j] + v.values[j + 1])).collect();
        if c.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("shift of component {k}")));
        }
        cells.push(c);
    }
    let logs = par::map_indexed(inc.n_paths, |p| {
        let mut s = 0.0;
        for (k, v) in cells.iter().enumerate() {
            let dw = inc.component(k, p);
            for j in 0..n {
                s += -v[j] * dw[j] - 0.5 * v[j] * v[j] * step;
            }
        }
        s
    });
    Ok(GirsanovWeight {
        values: logs.iter().map(|l| l.exp()).collect(),
        log_values: logs,
        t_end: inc.grid.t_end(),
    })
}

/// Result of [`novikov_bound`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NovikovBound {
    /// `C` in `exp{C T² Σ C_k²}`.
    pub constant: f64,
    pub exponent: f64,
    /// `Σ_k ½ C_k² κ_k² T^{2-2H_k}/(2-2H_k)`, never larger than `exponent`.
    pub direct_exponent: f64,
    pub bound: f64,
}

/// Bound on `E exp{½ ∫_0^T |v|²}` for shifts `|u_k| ≤ C_k`.
pub fn novikov_bound(spec: &DriftSpec, hursts: &[HurstParam], t_end: f64) -> Result<NovikovBound> {
    let d = spec.d_max().min(hursts.len());
    let cs = &spec.c_bounds[..d];
    if let Some(c) = cs.iter().find(|c| !c.is_finite()) {
        return Err(Error::Domain(format!("sum of C_k^2 diverges (C_k = {c})")));
    }
    let mut constant = 0.0f64;
    let mut direct = 0.0;
    for k in 0..d {
        let hv = hursts[k].value();
        let kap = shift_bound_constant(hursts[k]);
        let ck = 0.5 * kap * kap / (2.0 - 2.0 * hv);
        constant = constant.max(ck * t_end.powf(-2.0 * hv));
        direct += ck * cs[k] * cs[k] * t_end.powf(2.0 - 2.0 * hv);
    }
    let sum_sq: f64 = cs.iter().map(|c| c * c).sum();
    let exponent = constant * t_end * t_end * sum_sq;
    let bound = exponent.exp();
    if !bound.is_finite() {
        return Err(Error::NonFinite(format!("Novikov exponent {exponent}")));
    }
    Ok(NovikovBound {
        constant,
        exponent,
        direct_exponent: direct,
        bound,
    })
}

pub type PhiFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Test functionals `φ: ℝ^d → ℝ`.
#[derive(Clone)]
pub enum Phi {
    /// `y_i`.
    Coordinate(usize),
    /// `Σ_i y_i`.
    CoordinateSum,
    /// `min(|y|, clip)`.
    ClippedNorm(f64),
    Custom { id: String, f: PhiFn },
}

impl std::fmt::Debug for Phi {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Phi({})", self.id())
    }
}

impl Phi {
    pub fn id(&self) -> String {
        match self {
            Phi::Coordinate(i) => format!("coord{}", i + 1),
            Phi::CoordinateSum => "coord_sum".into(),
            Phi::ClippedNorm(c) => format!("clipped_norm_{c}"),
            Phi::Custom { id, .. } => id.clone(),
        }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            Phi::Coordinate(i) => y.get(*i).copied().unwrap_or(0.0),
            Phi::CoordinateSum => y.iter().sum(),
            Phi::ClippedNorm(c) => y.iter().map(|v| v * v).sum::<f64>().sqrt().min(*c),
            Phi::Custom { f, .. } => f(y),
        }
    }

    /// Parse `coordN` (from 1), `coord_sum`, `clipped_norm` or `clipped_norm_C`.
    pub fn parse(s: &str) -> Result<Phi> {
        if s == "coord_sum" {
            return Ok(Phi::CoordinateSum);
        }
        if s == "clipped_norm" {
            return Ok(Phi::ClippedNorm(1.0));
        }
        if let Some(c) = s.strip_prefix("clipped_norm_") {
            if let Ok(v) = c.parse::<f64>() {
                if v > 0.0 {
                    return Ok(Phi::ClippedNorm(v));
                }
            }
        }
        if let Some(i) = s.strip_prefix("coord") {
            if let Ok(i) = i.parse::<usize>() {
                if i >= 1 {
                    return Ok(Phi::Coordinate(i - 1));
                }
            }
        }
        Err(invalid("phi", format!("unknown functional `{s}`")))
    }
}

/// Forward substitution for `h·M·v = c` on nodes `1..=n`, where `M` is the
/// sampler's kernel matrix; `v` is the density of the Wiener shift per cell.
pub fn discrete_shift(km: &KernelMatrix, cumulative: &[f64], v: &mut [f64]) {
    let h = km.grid.step();
    for i in 1..=cumulative.len() {
        let row = km.row(i);
        let s: f64 = row[..i - 1].iter().zip(&v[..i - 1]).map(|(m, x)| m * x).sum();
        v[i - 1] = (cumulative[i - 1] / h - s) / row[i - 1];
    }
}

/// Workspace for one reweighted path.
pub struct PathScratch {
    pub z: Vec<f64>,
    pub noise: Vec<f64>,
    /// Per-cell contributions to `log ℰ`, summed over components.
    pub cell_log: Vec<f64>,
    b: Vec<f64>,
    y: Vec<f64>,
    cum: Vec<f64>,
    v: Vec<f64>,
}

impl PathScratch {
    pub fn new(sampler: &CylSampler) -> Self {
        let d = sampler.d();
        let n = sampler.grid.n_cells();
        Self {
            z: vec![0.0; d * n],
            noise: vec![0.0; d * (n + 1)],
            cell_log: vec![0.0; n],
            b: vec![0.0; d * n],
            y: vec![0.0; d],
            cum: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// Draw path `p`, then return `log ℰ` up to node `it` for the shift that turns
/// `x + 𝔹` into a solution with left-point drift. After the call
/// `scratch.z` and `scratch.noise` hold the normals and the weighted path.
pub fn path_log_weight(
    drift: &dyn Drift,
    sampler: &CylSampler,
    x: &[f64],
    it: usize,
    seed: u64,
    p: usize,
    s: &mut PathScratch,
) -> Result<f64> {
    let d = sampler.d();
    let n = sampler.grid.n_cells();
    let w = n + 1;
    sampler.sample(seed, p, &mut s.z, &mut s.noise);
    for l in 0..it {
        for k in 0..d {
            s.y[k] = x[k] + s.noise[k * w + l];
        }
        let t = sampler.grid.node(l);
        drift.eval(t, &s.y, &mut s.b[l * d..(l + 1) * d]);
    }
    let h = sampler.grid.step();
    let sh = h.sqrt();
    s.cell_log[..it].iter_mut().for_each(|v| *v = 0.0);
    for k in 0..d {
        let lam = sampler.lambdas[k];
        let mut acc = 0.0;
        let mut nonzero = false;
        for l in 0..it {
            let b = s.b[l * d + k];
            nonzero |= b != 0.0;
            acc += h * b;
            s.cum[l] = acc;
        }
        if !nonzero {
            continue;
        }
        if lam == 0.0 {
            return Err(invalid(
                "lambda",
                format!("component {} has zero weight but nonzero drift", k + 1),
            ));
        }
        for c in &mut s.cum[..it] {
            *c /= lam;
        }
        let km = sampler
            .component(k)
            .kernel()
            .ok_or_else(|| Error::Unsupported("reweighting needs a kernel-method sampler".into()))?;
        discrete_shift(km, &s.cum[..it], &mut s.v[..it]);
        // theorem convention with u = -b/λ: log ℰ = Σ v ΔW - ½ Σ v² h
        let z = &s.z[k * n..k * n + it];
        for j in 0..it {
            let vj = s.v[j];
            s.cell_log[j] += vj * sh * z[j] - 0.5 * vj * vj * h;
        }
    }
    let log_w: f64 = s.cell_log[..it].iter().sum();
    if !log_w.is_finite() {
        return Err(Error::NonFinite(format!("log-weight on path {p}")));
    }
    Ok(log_w)
}

/// Weighted Monte Carlo estimate of `E φ(X_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakEstimate {
    pub phi_id: String,
    pub t: f64,
    pub d: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// `(Σ w)² / Σ w²`.
    pub ess: f64,
    /// Set when the effective sample size is below 10% of the paths.
    pub ess_flag: bool,
    pub mean_weight: f64,
    pub weight_stderr: f64,
}

/// Fraction of `n_paths` below which the effective sample size is flagged.
pub const ESS_FLAG_FRACTION: f64 = 0.1;

/// Node index of time `t`, which must lie on the grid.
pub fn node_index(grid: &TimeGrid, t: f64) -> Result<usize> {
    let i = grid.nearest_index(t);
    if (grid.node(i) - t).abs() > 1e-9 * grid.t_end().max(1.0) {
        return Err(invalid("t", format!("{t} is not a grid node")));
    }
    Ok(i)
}

#[derive(Clone)]
struct Acc {
    sum: Vec<f64>,
    sum2: Vec<f64>,
    w: f64,
    w2: f64,
}

impl Acc {
    fn new(m: usize) -> Self {
        Self {
            sum: vec![0.0; m],
            sum2: vec![0.0; m],
            w: 0.0,
            w2: 0.0,
        }
    }

    fn merge(&mut self, o: Acc) {
        for (a, b) in self.sum.iter_mut().zip(o.sum) {
            *a += b;
        }
        for (a, b) in self.sum2.iter_mut().zip(o.sum2) {
            *a += b;
        }
        self.w += o.w;
        self.w2 += o.w2;
    }
}

/// Reweighted estimator: simulate `x + 𝔹` under the base measure, weight
/// each path by the stochastic exponential of `b/λ` and average `φ`.
pub fn weak_solution_estimator(
    drift: &dyn Drift,
    phis: &[Phi],
    x: &[f64],
    t: f64,
    sampler: &CylSampler,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<WeakEstimate>> {
    let d = sampler.d();
    if x.len() != d {
        return Err(invalid("x", format!("length {} for {d} components", x.len())));
    }
    if n_paths < 2 {
        return Err(invalid("n_paths", "need at least 2 paths"));
    }
    let it = node_index(&sampler.grid, t)?;
    let w = sampler.grid.len();
    let m = phis.len();
    let acc = par::map_indexed(n_paths.div_ceil(par::CHUNK), |c| -> Result<Acc> {
        let mut s = PathScratch::new(sampler);
        let mut acc = Acc::new(m);
        let mut y = vec![0.0; d];
        for p in c * par::CHUNK..((c + 1) * par::CHUNK).min(n_paths) {
            let lw = path_log_weight(drift, sampler, x, it, seed, p, &mut s)?;
            let wt = lw.exp();
            for k in 0..d {
                y[k] = x[k] + s.noise[k * w + it];
            }
            for (j, phi) in phis.iter().enumerate() {
                let v = phi.eval(&y) * wt;
                acc.sum[j] += v;
                acc.sum2[j] += v * v;
            }
            acc.w += wt;
            acc.w2 += wt * wt;
        }
        Ok(acc)
    });
    let mut total = Acc::new(m);
    for a in acc {
        total.merge(a?);
    }
    let nf = n_paths as f64;
    let se = |s: f64, s2: f64| ((s2 - s * s / nf) / (nf - 1.0) / nf).max(0.0).sqrt();
    let ess = total.w * total.w / total.w2;
    Ok(phis
        .iter()
        .enumerate()
        .map(|(j, phi)| WeakEstimate {
            phi_id: phi.id(),
            t: sampler.grid.node(it),
            d,
            estimate: total.sum[j] / nf,
            stderr: se(total.sum[j], total.sum2[j]),
            n_paths,
            seed,
            ess,
            ess_flag: ess < ESS_FLAG_FRACTION * nf,
            mean_weight: total.w / nf,
            weight_stderr: se(total.w, total.w2),
        })
        .collect())
}

/// `E[ℰ_t]` with its standard error at every grid node, from one ensemble.
pub fn weight_means(drift: &dyn Drift, x: &[f64], sampler: &CylSampler, n_paths: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    let w = sampler.grid.len();
    let parts = par::map_indexed(n_paths.div_ceil(par::CHUNK), |c| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut s = PathScratch::new(sampler);
        let (mut a, mut b) = (vec![0.0; w], vec![0.0; w]);
        for p in c * par::CHUNK..((c + 1) * par::CHUNK).min(n_paths) {
            path_log_weight(drift, sampler, x, w - 1, seed, p, &mut s)?;
            let mut lw = 0.0;
            for it in 0..w {
                if it > 0 {
                    lw += s.cell_log[it - 1];
                }
                let wt = f64::exp(lw);
                a[it] += wt;
                b[it] += wt * wt;
            }
        }
        Ok((a, b))
    });
    let (mut a, mut b) = (vec![0.0; w], vec![0.0; w]);
    for part in parts {
        let (pa, pb) = part?;
        for i in 0..w {
            a[i] += pa[i];
            b[i] += pb[i];
        }
    }
    let nf = n_paths as f64;
    Ok((0..w)
        .map(|i| {
            let m = a[i] / nf;
            let var = ((b[i] - nf * m * m) / (nf - 1.0)).max(0.0);
            (m, (var / nf).sqrt())
        })
        .collect())
}
