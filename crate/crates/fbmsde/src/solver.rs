//! Picard solver on the truncated space, Malliavin derivatives through the
//! linearized equation, and the `(d, ε)` convergence experiment.
//!
//! Path arrays are component-major: `path[k·(N+1) + i]` is coordinate `k`
//! at node `i`.

use crate::cyl::{CylEnsemble, CylSampler};
use crate::drift::{mollify, Drift, DriftSpec, MollifiedDrift};
use crate::error::{invalid, Error, Result};
use crate::fbm::{kernel_k_with_gap, HurstParam, KernelMatrix};
use crate::girsanov::{node_index, path_log_weight, PathScratch, Phi};
use crate::grid::TimeGrid;
use crate::par;
use crate::quad::tanh_sinh;

/// Time quadrature of the drift integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QuadRule {
    #[default]
    Trapezoid,
    /// `∫_{cell} b ≈ h·b(left node)`; explicit and adapted.
    LeftEndpoint,
}

/// First Picard iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialIterate {
    /// `Y⁰ = x + 𝔹`.
    #[default]
    Noise,
    /// `Y⁰ ≡ x`.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardOptions {
    /// Stop once `sup_i |Y^{n}_i - Y^{n-1}_i| ≤ tol` on the path.
    pub tol: f64,
    pub max_iter: usize,
    pub rule: QuadRule,
    pub init: InitialIterate,
    /// Run exactly this many updates and skip the tolerance test.
    pub fixed_iterations: Option<usize>,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            rule: QuadRule::Trapezoid,
            init: InitialIterate::Noise,
            fixed_iterations: None,
        }
    }
}

/// Scratch and outcome of one pathwise solve.
struct PathSolver {
    d: usize,
    w: usize,
    y: Vec<f64>,
    b: Vec<f64>,
    pt: Vec<f64>,
    /// Squared differences per (iteration, node).
    diffs: Vec<f64>,
    iterations: usize,
    converged: bool,
}

impl PathSolver {
    fn new(d: usize, w: usize) -> Self {
        Self {
            d,
            w,
            y: vec![0.0; d * w],
            b: vec![0.0; d * w],
            pt: vec![0.0; d],
            diffs: Vec::new(),
            iterations: 0,
            converged: false,
        }
    }

    /// Iterate on one path; the solution is left in `self.y`.
    fn solve(&mut self, drift: &dyn Drift, x: &[f64], noise: &[f64], grid: &TimeGrid, o: &PicardOptions) {
        let (d, w) = (self.d, self.w);
        let h = grid.step();
        for k in 0..d {
            for i in 0..w {
                self.y[k * w + i] = match o.init {
                    InitialIterate::Noise => x[k] + noise[k * w + i],
                    InitialIterate::Constant => x[k],
                };
            }
        }
        self.diffs.clear();
        self.iterations = 0;
        self.converged = false;
        let limit = o.fixed_iterations.unwrap_or(o.max_iter);
        let mut out = vec![0.0; d];
        while self.iterations < limit {
            for i in 0..w {
                for k in 0..d {
                    self.pt[k] = self.y[k * w + i];
                }
                drift.eval(grid.node(i), &self.pt, &mut out);
                for k in 0..d {
                    self.b[k * w + i] = out[k];
                }
            }
            let base = self.diffs.len();
            self.diffs.resize(base + w, 0.0);
            let mut sup = 0.0f64;
            for k in 0..d {
                let mut acc = 0.0;
                for i in 0..w {
                    if i > 0 {
                        acc += match o.rule {
                            QuadRule::Trapezoid => 0.5 * h * (self.b[k * w + i - 1] + self.b[k * w + i]),
                            QuadRule::LeftEndpoint => h * self.b[k * w + i - 1],
                        };
                    }
                    let new = x[k] + noise[k * w + i] + acc;
                    let diff = new - self.y[k * w + i];
                    self.diffs[base + i] += diff * diff;
                    self.y[k * w + i] = new;
                }
            }
            for i in 0..w {
                sup = sup.max(self.diffs[base + i]);
            }
            self.iterations += 1;
            if o.fixed_iterations.is_none() && sup.sqrt() <= o.tol {
                self.converged = true;
                break;
            }
        }
        if o.fixed_iterations.is_some() {
            self.converged = true;
        }
    }
}

/// Summed squared iterate differences over paths, per (iteration, node).
#[derive(Debug, Clone, Default)]
struct ResidualAcc {
    sums: Vec<f64>,
    max_iterations: usize,
    failed: usize,
}

impl ResidualAcc {
    fn add(&mut self, s: &PathSolver) {
        if self.sums.len() < s.diffs.len() {
            self.sums.resize(s.diffs.len(), 0.0);
        }
        for (a, b) in self.sums.iter_mut().zip(&s.diffs) {
            *a += b;
        }
        self.max_iterations = self.max_iterations.max(s.iterations);
        if !s.converged {
            self.failed += 1;
        }
    }

    fn merge(&mut self, o: ResidualAcc) {
        if self.sums.len() < o.sums.len() {
            self.sums.resize(o.sums.len(), 0.0);
        }
        for (a, b) in self.sums.iter_mut().zip(o.sums) {
            *a += b;
        }
        self.max_iterations = self.max_iterations.max(o.max_iterations);
        self.failed += o.failed;
    }

    /// `r_n = max_i sqrt(mean_p |Y^n_i - Y^{n-1}_i|²)` for `n = 1, 2, …`.
    fn history(&self, w: usize, n_paths: usize) -> Vec<f64> {
        self.sums
            .chunks(w)
            .map(|c| c.iter().map(|v| (v / n_paths as f64).sqrt()).fold(0.0, f64::max))
            .collect()
    }
}

/// Converged Picard solutions for every path of a noise ensemble.
#[derive(Debug, Clone)]
pub struct SolutionEnsemble {
    pub x: Vec<f64>,
    pub grid: TimeGrid,
    pub d: usize,
    pub n_paths: usize,
    pub drift: MollifiedDrift,
    pub noise: CylEnsemble,
    pub options: PicardOptions,
    /// Largest number of updates any path needed.
    pub iterations_used: usize,
    pub final_residual: f64,
    pub residual_history: Vec<f64>,
    paths: Vec<f64>,
}

impl SolutionEnsemble {
    pub fn path(&self, p: usize) -> &[f64] {
        let s = self.d * self.grid.len();
        &self.paths[p * s..(p + 1) * s]
    }

    pub fn get(&self, k: usize, i: usize, p: usize) -> f64 {
        self.path(p)[k * self.grid.len() + i]
    }
}

fn check_x(x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(invalid("x", format!("length {} for {d} components", x.len())));
    }
    Ok(())
}

fn non_convergence(acc: &ResidualAcc, w: usize, n: usize) -> Error {
    let history = acc.history(w, n);
    Error::NonConvergence {
        iterations: acc.max_iterations,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    }
}

/// Solve `X = x + ∫ b(s, X_s) ds + 𝔹` pathwise by Picard iteration.
pub fn picard_solve(md: &MollifiedDrift, x: &[f64], noise: &CylEnsemble, opts: &PicardOptions) -> Result<SolutionEnsemble> {
    let d = noise.d;
    check_x(x, d)?;
    let grid = &noise.grid;
    let w = grid.len();
    let n = noise.n_paths;
    let chunks = par::map_indexed(n.div_ceil(par::CHUNK), |c| {
        let mut s = PathSolver::new(d, w);
        let mut acc = ResidualAcc::default();
        let mut out = Vec::new();
        for p in c * par::CHUNK..((c + 1) * par::CHUNK).min(n) {
            s.solve(md, x, noise.path(p), grid, opts);
            acc.add(&s);
            out.extend_from_slice(&s.y);
        }
        (out, acc)
    });
    let mut acc = ResidualAcc::default();
    let mut paths = Vec::with_capacity(n * d * w);
    for (o, a) in chunks {
        paths.extend(o);
        acc.merge(a);
    }
    if acc.failed > 0 {
        return Err(non_convergence(&acc, w, n));
    }
    let history = acc.history(w, n);
    Ok(SolutionEnsemble {
        x: x.to_vec(),
        grid: grid.clone(),
        d,
        n_paths: n,
        drift: md.clone(),
        noise: noise.clone(),
        options: *opts,
        iterations_used: acc.max_iterations,
        final_residual: history.last().copied().unwrap_or(0.0),
        residual_history: history,
        paths,
    })
}

/// Residuals `r_n` between successive iterates.
pub fn picard_residual_curve(sol: &SolutionEnsemble) -> Vec<f64> {
    sol.residual_history.clone()
}

/// Fit of `r_n ≈ (A t)^{n+1}/(n+1)!` and the decay pattern of `r_{n+1}/r_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorialFit {
    /// Fitted `A`.
    pub a: f64,
    pub ratios: Vec<f64>,
    /// `r_{n+1}/r_n` shows a decreasing trend over the residuals above the
    /// rounding floor.
    pub super_geometric: bool,
}

/// Fit the factorial envelope to the residuals above `floor`.
pub fn fit_factorial(residuals: &[f64], t: f64, floor: f64) -> FactorialFit {
    let used: Vec<(usize, f64)> = residuals
        .iter()
        .copied()
        .enumerate()
        .take_while(|(_, r)| *r > floor)
        .collect();
    let ratios: Vec<f64> = used.windows(2).map(|w| w[1].1 / w[0].1).collect();
    // least squares of log(r_n (n+1)!) = (n+1) log(A t), through the origin
    let (mut num, mut den) = (0.0, 0.0);
    for &(i, r) in &used {
        let n1 = (i + 2) as f64;
        let lf: f64 = (1..=(i + 2)).map(|j| (j as f64).ln()).sum();
        num += n1 * (r.ln() + lf);
        den += n1 * n1;
    }
    let a = if den > 0.0 { (num / den).exp() / t } else { 0.0 };
    let super_geometric = ratios.len() >= 2 && {
        let falling = ratios.windows(2).filter(|w| w[1] < w[0]).count();
        ratios[ratios.len() - 1] < ratios[0] && 2 * falling >= ratios.len() - 1
    };
    FactorialFit {
        a,
        ratios,
        super_geometric,
    }
}

/// Per-path view handed to the streaming solver callbacks.
pub struct PathView<'a> {
    pub p: usize,
    pub noise: &'a [f64],
    pub solution: &'a [f64],
    pub iterations: usize,
}

/// Summary returned with streamed results.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSummary {
    pub residual_history: Vec<f64>,
    pub iterations_used: usize,
}

/// Solve every path of `sampler` without storing the ensemble and map each
/// solved path through `f`.
pub fn picard_stream<T: Send>(
    drift: &dyn Drift,
    x: &[f64],
    sampler: &CylSampler,
    n_paths: usize,
    seed: u64,
    opts: &PicardOptions,
    f: impl Fn(&PathView<'_>) -> T + Sync + Send,
) -> Result<(Vec<T>, StreamSummary)> {
    let d = sampler.d();
    check_x(x, d)?;
    let grid = &sampler.grid;
    let w = grid.len();
    let n = grid.n_cells();
    let chunks = par::map_indexed(n_paths.div_ceil(par::CHUNK), |c| {
        let mut s = PathSolver::new(d, w);
        let mut acc = ResidualAcc::default();
        let mut z = vec![0.0; d * n];
        let mut noise = vec![0.0; d * w];
        let mut out = Vec::new();
        for p in c * par::CHUNK..((c + 1) * par::CHUNK).min(n_paths) {
            sampler.sample(seed, p, &mut z, &mut noise);
            s.solve(drift, x, &noise, grid, opts);
            acc.add(&s);
            out.push(f(&PathView {
                p,
                noise: &noise,
                solution: &s.y,
                iterations: s.iterations,
            }));
        }
        (out, acc)
    });
    let mut acc = ResidualAcc::default();
    let mut all = Vec::with_capacity(n_paths);
    for (o, a) in chunks {
        all.extend(o);
        acc.merge(a);
    }
    if acc.failed > 0 {
        return Err(non_convergence(&acc, w, n_paths));
    }
    Ok((
        all,
        StreamSummary {
            residual_history: acc.history(w, n_paths),
            iterations_used: acc.max_iterations,
        },
    ))
}

/// Mean and standard error.
pub fn mean_stderr(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let m = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (m, 0.0);
    }
    let v = xs.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Estimates of `E φ(X_t)` with standard errors from a streamed solve.
pub fn picard_expectations(
    drift: &dyn Drift,
    phis: &[Phi],
    x: &[f64],
    t: f64,
    sampler: &CylSampler,
    n_paths: usize,
    seed: u64,
    opts: &PicardOptions,
) -> Result<(Vec<(f64, f64)>, StreamSummary)> {
    let it = node_index(&sampler.grid, t)?;
    let w = sampler.grid.len();
    let d = sampler.d();
    let (vals, summary) = picard_stream(drift, x, sampler, n_paths, seed, opts, |v| {
        let y: Vec<f64> = (0..d).map(|k| v.solution[k * w + it]).collect();
        phis.iter().map(|p| p.eval(&y)).collect::<Vec<f64>>()
    })?;
    let est = (0..phis.len())
        .map(|j| mean_stderr(vals.iter().map(move |v| v[j])))
        .collect();
    Ok((est, summary))
}

/// `D_s^m X_t` on nodes after `s` for every path.
#[derive(Debug, Clone, PartialEq)]
pub struct MalliavinBlock {
    pub s_index: usize,
    /// Direction, from 0.
    pub m: usize,
    pub d: usize,
    pub n_paths: usize,
    /// Nodes `s_index+1 ..= N`.
    pub n_nodes: usize,
    values: Vec<f64>,
}

impl MalliavinBlock {
    /// Component `k` at node `i > s_index` on path `p`.
    pub fn get(&self, p: usize, k: usize, i: usize) -> f64 {
        if i <= self.s_index {
            return 0.0;
        }
        self.values[(p * self.d + k) * self.n_nodes + (i - self.s_index - 1)]
    }
}

/// Forcing of the linearized equation in direction `m`.
struct Forcing {
    /// Value at nodes `s+1..=N`.
    at_node: Vec<f64>,
    /// `∫_{cell} (1-ξ) F` and `∫_{cell} ξ F` for cells `s+1..=N`.
    left: Vec<f64>,
    right: Vec<f64>,
}

/// Point forcing `λ K_H(·, s)`, with exact cell integrals of the singular
/// kernel.
fn point_forcing(h: HurstParam, lambda: f64, grid: &TimeGrid, s_index: usize) -> Result<Forcing> {
    let n = grid.n_cells();
    let s = grid.node(s_index);
    let step = grid.step();
    let mut f = Forcing {
        at_node: Vec::with_capacity(n - s_index),
        left: Vec::with_capacity(n - s_index),
        right: Vec::with_capacity(n - s_index),
    };
    for c in s_index + 1..=n {
        let (a, b) = (grid.node(c - 1), grid.node(c));
        let first = c == s_index + 1;
        let gap = |u: f64, da: f64| if first { da } else { u - s };
        let i0 = tanh_sinh(|u, da, _| kernel_k_with_gap(h, u, s, gap(u, da)).unwrap_or(0.0), a, b, 1e-12)?;
        let i1 = tanh_sinh(|u, da, _| da / step * kernel_k_with_gap(h, u, s, gap(u, da)).unwrap_or(0.0), a, b, 1e-12)?;
        f.left.push(lambda * (i0.value - i1.value));
        f.right.push(lambda * i1.value);
        f.at_node.push(lambda * kernel_k_with_gap(h, b, s, (c - s_index) as f64 * step)?);
    }
    Ok(f)
}

/// Forcing of the window-averaged direction `1_{[s, s+δ]}/δ` with `δ` equal
/// to `cells` grid cells: `F_i = (λ/cells) Σ_{j ∈ window, j ≤ i} M_ij`.
fn window_forcing(km: &KernelMatrix, lambda: f64, s_index: usize, cells: usize, rule: QuadRule) -> Forcing {
    let n = km.n();
    let step = km.grid.step();
    let last = (s_index + cells).min(n);
    let at = |i: usize| -> f64 {
        if i <= s_index {
            return 0.0;
        }
        let hi = i.min(last);
        (s_index + 1..=hi).map(|j| km.get(i, j)).sum::<f64>() * lambda / cells as f64
    };
    let mut f = Forcing {
        at_node: Vec::new(),
        left: Vec::new(),
        right: Vec::new(),
    };
    for c in s_index + 1..=n {
        let (fl, fr) = (at(c - 1), at(c));
        f.at_node.push(fr);
        match rule {
            QuadRule::Trapezoid => {
                f.left.push(0.5 * step * fl);
                f.right.push(0.5 * step * fr);
            }
            QuadRule::LeftEndpoint => {
                f.left.push(step * fl);
                f.right.push(0.0);
            }
        }
    }
    f
}

/// Solve `A x = r` in place for a small dense system.
fn solve_small(a: &mut [f64], r: &mut [f64], n: usize) -> Result<()> {
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if a[piv * n + col] == 0.0 {
            return Err(Error::Domain("singular step matrix in the linearized equation".into()));
        }
        if piv != col {
            for j in 0..n {
                a.swap(col * n + j, piv * n + j);
            }
            r.swap(col, piv);
        }
        for i in col + 1..n {
            let f = a[i * n + col] / a[col * n + col];
            if f != 0.0 {
                for j in col..n {
                    a[i * n + j] -= f * a[col * n + j];
                }
                r[i] -= f * r[col];
            }
        }
    }
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i * n + j] * r[j]).sum();
        r[i] = (r[i] - s) / a[i * n + i];
    }
    Ok(())
}

/// March the linear equation `D_t = ∫_s^t J(u) D_u du + F(t) e_m` along one
/// solved path. Returns `D` at nodes `s+1..=N`, component-major.
fn march_linear(
    drift: &dyn Drift,
    path: &[f64],
    grid: &TimeGrid,
    d: usize,
    s_index: usize,
    m: usize,
    f: &Forcing,
    rule: QuadRule,
) -> Result<Vec<f64>> {
    let w = grid.len();
    let n = grid.n_cells();
    let h = grid.step();
    let nn = n - s_index;
    let mut out = vec![0.0; d * nn];
    let mut y = vec![0.0; d];
    let mut jac_prev = vec![0.0; d * d];
    let mut jac = vec![0.0; d * d];
    let at = |i: usize, y: &mut [f64]| {
        for k in 0..d {
            y[k] = path[k * w + i];
        }
    };
    at(s_index, &mut y);
    drift.jacobian(grid.node(s_index), &y, &mut jac_prev)?;
    let mut z_prev = vec![0.0; d];
    let mut a = vec![0.0; d * d];
    let mut r = vec![0.0; d];
    for (c, i) in (s_index + 1..=n).enumerate() {
        at(i, &mut y);
        drift.jacobian(grid.node(i), &y, &mut jac)?;
        match rule {
            QuadRule::Trapezoid => {
                for k in 0..d {
                    let jz: f64 = (0..d).map(|l| jac_prev[k * d + l] * z_prev[l]).sum();
                    r[k] = z_prev[k] + 0.5 * h * jz + jac_prev[k * d + m] * f.left[c] + jac[k * d + m] * f.right[c];
                    for l in 0..d {
                        a[k * d + l] = if k == l { 1.0 } else { 0.0 } - 0.5 * h * jac[k * d + l];
                    }
                }
                solve_small(&mut a, &mut r, d)?;
            }
            QuadRule::LeftEndpoint => {
                for k in 0..d {
                    let jz: f64 = (0..d).map(|l| jac_prev[k * d + l] * z_prev[l]).sum();
                    r[k] = z_prev[k] + h * jz + jac_prev[k * d + m] * f.left[c];
                }
            }
        }
        for k in 0..d {
            let v = r[k] + if k == m { f.at_node[c] } else { 0.0 };
            out[k * nn + c] = v;
        }
        z_prev.copy_from_slice(&r);
        std::mem::swap(&mut jac, &mut jac_prev);
    }
    Ok(out)
}

fn check_direction(sol: &SolutionEnsemble, s_index: usize, m: usize) -> Result<()> {
    if m >= sol.d {
        return Err(invalid("m", format!("direction {m} outside 0..{}", sol.d)));
    }
    if s_index == 0 || s_index >= sol.grid.n_cells() {
        return Err(invalid("s_index", format!("must lie in 1..{}", sol.grid.n_cells())));
    }
    Ok(())
}

/// `D_s^m X_t` for all paths by forward time-stepping of the linearized
/// equation with the solver's quadrature rule.
pub fn malliavin_derivative(sol: &SolutionEnsemble, s_index: usize, m: usize) -> Result<MalliavinBlock> {
    check_direction(sol, s_index, m)?;
    let h = HurstParam::new(sol.noise.hursts[m])?;
    let forcing = point_forcing(h, sol.noise.lambdas[m], &sol.grid, s_index)?;
    let rule = sol.options.rule;
    let blocks = par::map_indexed(sol.n_paths, |p| {
        march_linear(&sol.drift, sol.path(p), &sol.grid, sol.d, s_index, m, &forcing, rule)
    });
    let mut values = Vec::with_capacity(sol.n_paths * sol.d * (sol.grid.n_cells() - s_index));
    for b in blocks {
        values.extend(b?);
    }
    Ok(MalliavinBlock {
        s_index,
        m,
        d: sol.d,
        n_paths: sol.n_paths,
        n_nodes: sol.grid.n_cells() - s_index,
        values,
    })
}

/// First two terms of the series for `D_s^m X_t`: the forcing plus one
/// application of the Jacobian integral, on one path.
pub fn malliavin_two_term(sol: &SolutionEnsemble, p: usize, s_index: usize, m: usize) -> Result<Vec<f64>> {
    check_direction(sol, s_index, m)?;
    let h = HurstParam::new(sol.noise.hursts[m])?;
    let f = point_forcing(h, sol.noise.lambdas[m], &sol.grid, s_index)?;
    let (d, w) = (sol.d, sol.grid.len());
    let path = sol.path(p);
    let n = sol.grid.n_cells();
    let nn = n - s_index;
    let mut out = vec![0.0; d * nn];
    let mut y = vec![0.0; d];
    let mut jp = vec![0.0; d * d];
    let mut jc = vec![0.0; d * d];
    let load = |i: usize, y: &mut [f64]| (0..d).for_each(|k| y[k] = path[k * w + i]);
    load(s_index, &mut y);
    sol.drift.jacobian(sol.grid.node(s_index), &y, &mut jp)?;
    let mut acc = vec![0.0; d];
    for (c, i) in (s_index + 1..=n).enumerate() {
        load(i, &mut y);
        sol.drift.jacobian(sol.grid.node(i), &y, &mut jc)?;
        for k in 0..d {
            acc[k] += jp[k * d + m] * f.left[c] + jc[k * d + m] * f.right[c];
            out[k * nn + c] = acc[k] + if k == m { f.at_node[c] } else { 0.0 };
        }
        std::mem::swap(&mut jp, &mut jc);
    }
    Ok(out)
}

/// Outcome of [`malliavin_fd_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct FdCheck {
    /// `max |FD - D̄| / max |D̄|` over nodes after `s` and all components.
    pub relative_error: f64,
    /// The bump is so small that rounding in `X^h - X` is not negligible.
    pub noise_floor: bool,
    /// Finite differences, component-major over nodes `s+1..=N`.
    pub finite_difference: Vec<f64>,
    /// Window-averaged linearized solution, same layout.
    pub linearized: Vec<f64>,
}

/// Perturb `W^{(m)}` of path `p` along `1_{[s, s+δ]}/δ` (`δ = window`
/// cells) by `bump`, re-solve, and compare `(X^h - X)/h` with the linearized
/// equation driven by the same direction.
pub fn malliavin_fd_check(sol: &SolutionEnsemble, p: usize, s_index: usize, m: usize, bump: f64, window: usize) -> Result<FdCheck> {
    check_direction(sol, s_index, m)?;
    if !(bump > 0.0) || window == 0 {
        return Err(invalid("bump", "bump and window must be positive"));
    }
    let h = HurstParam::new(sol.noise.hursts[m])?;
    let grid = &sol.grid;
    let km = crate::fbm::kernel_matrix(h, grid, crate::fbm::CellRule::L2Cell)?;
    let (d, w) = (sol.d, grid.len());
    let n = grid.n_cells();
    let lam = sol.noise.lambdas[m];
    let rule = sol.options.rule;
    let forcing = window_forcing(&km, lam, s_index, window, rule);

    let tight = PicardOptions {
        tol: 0.0,
        max_iter: 2000,
        fixed_iterations: None,
        ..sol.options
    };
    let solve_tight = |noise: &[f64]| -> Vec<f64> {
        let mut s = PathSolver::new(d, w);
        let mut o = tight;
        // iterate to a floating-point fixed point or until the update stalls
        o.tol = 1e-15 * (1.0 + noise.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        s.solve(&sol.drift, &sol.x, noise, grid, &o);
        s.y
    };
    let base_noise = sol.noise.path(p).to_vec();
    let mut bumped = base_noise.clone();
    for i in s_index + 1..=n {
        bumped[m * w + i] += bump * forcing.at_node[i - s_index - 1];
    }
    let x0 = solve_tight(&base_noise);
    let x1 = solve_tight(&bumped);
    let nn = n - s_index;
    let mut fd = vec![0.0; d * nn];
    for k in 0..d {
        for c in 0..nn {
            let i = s_index + 1 + c;
            fd[k * nn + c] = (x1[k * w + i] - x0[k * w + i]) / bump;
        }
    }
    let lin = march_linear(&sol.drift, &x0, grid, d, s_index, m, &forcing, rule)?;
    let scale = lin.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let err = fd.iter().zip(&lin).fold(0.0f64, |a, (u, v)| a.max((u - v).abs()));
    let xmax = x0.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let rounding = 4.0 * f64::EPSILON * xmax / bump;
    Ok(FdCheck {
        relative_error: if scale > 0.0 { err / scale } else { err },
        noise_floor: rounding > 1e-3 * scale,
        finite_difference: fd,
        linearized: lin,
    })
}

/// One `(d, ε)` row of the convergence experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergeRow {
    pub d: usize,
    pub eps: f64,
    pub t: f64,
    pub phi_id: String,
    pub value: f64,
    pub stderr: f64,
    pub target: f64,
    pub target_stderr: f64,
    pub gap: f64,
    /// Standard error of the paired difference.
    pub gap_stderr: f64,
}

/// Picard estimates along a `(d, ε)` schedule against the reweighted
/// estimator for the unsmoothed drift, all on common random numbers.
///
/// Every solve runs in the sampler's full dimension; truncation to `d`
/// zeroes the drift components and coordinates from `d` on, and `φ` always
/// sees all coordinates.
pub fn converge_experiment(
    spec: &DriftSpec,
    schedule: &[(usize, f64)],
    t: f64,
    phis: &[Phi],
    x: &[f64],
    sampler: &CylSampler,
    n_paths: usize,
    seed: u64,
    opts: &PicardOptions,
) -> Result<Vec<ConvergeRow>> {
    let d = sampler.d();
    check_x(x, d)?;
    if n_paths < 2 {
        return Err(invalid("n_paths", "need at least 2 paths"));
    }
    let it = node_index(&sampler.grid, t)?;
    let w = sampler.grid.len();
    let drifts: Vec<MollifiedDrift> = schedule
        .iter()
        .map(|&(ds, eps)| mollify(spec, ds.min(d), eps))
        .collect::<Result<_>>()?;
    let np = phis.len();
    let ns = schedule.len();
    let chunks = par::map_indexed(n_paths.div_ceil(par::CHUNK), |c| -> Result<Vec<Vec<f64>>> {
        let mut scratch = PathScratch::new(sampler);
        let mut solver = PathSolver::new(d, w);
        let mut y = vec![0.0; d];
        let mut rows = Vec::new();
        for p in c * par::CHUNK..((c + 1) * par::CHUNK).min(n_paths) {
            let lw = path_log_weight(spec, sampler, x, it, seed, p, &mut scratch)?;
            let wt = lw.exp();
            let mut row = Vec::with_capacity(np * (ns + 1));
            for k in 0..d {
                y[k] = x[k] + scratch.noise[k * w + it];
            }
            row.extend(phis.iter().map(|f| f.eval(&y) * wt));
            for md in &drifts {
                solver.solve(md, x, &scratch.noise, &sampler.grid, opts);
                if !solver.converged {
                    return Err(Error::NonConvergence {
                        iterations: solver.iterations,
                        residual: f64::NAN,
                        history: Vec::new(),
                    });
                }
                for k in 0..d {
                    y[k] = solver.y[k * w + it];
                }
                row.extend(phis.iter().map(|f| f.eval(&y)));
            }
            rows.push(row);
        }
        Ok(rows)
    });
    let mut rows = Vec::with_capacity(n_paths);
    for c in chunks {
        rows.extend(c?);
    }
    let mut out = Vec::with_capacity(ns * np);
    for (si, &(ds, eps)) in schedule.iter().enumerate() {
        for (j, phi) in phis.iter().enumerate() {
            let col = (si + 1) * np + j;
            let (target, target_stderr) = mean_stderr(rows.iter().map(|r| r[j]));
            let (value, stderr) = mean_stderr(rows.iter().map(|r| r[col]));
            let (gap, gap_stderr) = mean_stderr(rows.iter().map(|r| r[col] - r[j]));
            out.push(ConvergeRow {
                d: ds,
                eps,
                t: sampler.grid.node(it),
                phi_id: phi.id(),
                value,
                stderr,
                target,
                target_stderr,
                gap,
                gap_stderr,
            });
        }
    }
    Ok(out)
}
