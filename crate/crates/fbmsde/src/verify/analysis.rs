//! Simplex Beta integrals, kernel increments and the Haar operator bound.

use crate::error::{invalid, Error, Result};
use crate::fbm::{c_factor, kernel_k_with_gap, HurstParam};
use crate::quad::{gauss_legendre, gauss_legendre_on, tanh_sinh};
use crate::special::ln_gamma;

/// `∫_θ^{s_2} (s_2-s_1)^a (s_1-θ)^b ds_1` by tanh-sinh and by the Beta formula.
pub fn simplex_beta_base(a: f64, b: f64, theta: f64, s2: f64) -> Result<(f64, f64)> {
    if !(a > -1.0 && b > -1.0) || !(s2 > theta) {
        return Err(invalid("a", "need a, b > -1 and s2 > θ"));
    }
    let q = tanh_sinh(|_, da, db| db.powf(a) * da.powf(b), theta, s2, 1e-13)?.value;
    let exact = (ln_gamma(a + 1.0) + ln_gamma(b + 1.0) - ln_gamma(a + b + 2.0)).exp() * (s2 - theta).powf(a + b + 1.0);
    Ok((q, exact))
}

/// `(K_H(s,θ) - K_H(s,θ'))` with the gap `s - θ` supplied.
fn increment(h: HurstParam, s: f64, theta: f64, theta_p: f64, gap: f64) -> f64 {
    let a = kernel_k_with_gap(h, s, theta, gap).unwrap_or(f64::NAN);
    let b = kernel_k_with_gap(h, s, theta_p, gap + (theta - theta_p)).unwrap_or(f64::NAN);
    a - b
}

/// Right side of the increment bound without its constant:
/// `((θ-θ')/(θθ'))^γ θ^{H-½-γ} (s-θ)^{H-½-γ}`.
pub fn increment_envelope(h: f64, gamma_exp: f64, theta: f64, theta_p: f64, gap: f64) -> f64 {
    ((theta - theta_p) / (theta * theta_p)).powf(gamma_exp) * theta.powf(h - 0.5 - gamma_exp) * gap.powf(h - 0.5 - gamma_exp)
}

const GRID: usize = 240;

/// Fitted constant `C` in `K_H(t,θ) - K_H(t,θ') ≤ C c_H envelope`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementFit {
    /// Largest ratio on a log grid in `u = t-θ'` and `r = (t-θ)/u`, divided by `c_H`.
    pub constant: f64,
    /// Largest ratio over random validation pairs, divided by `c_H`.
    pub validation_max: f64,
    /// Largest ratio of `|K_H(t,θ) - K_H(t,θ')|`; unbounded as `θ' → 0`.
    pub abs_max: f64,
    pub pairs: usize,
}

/// Fit the constant of the signed increment bound on a grid over
/// `lower ≤ θ' < θ < t` and check it on `pairs` log-uniform random pairs.
/// The supremum is approached as both points tend to `t`.
pub fn kernel_increment_bound_check(
    h: HurstParam,
    t: f64,
    gamma_exp: f64,
    lower: f64,
    pairs: usize,
    rng: &mut crate::rng::Rng,
) -> Result<IncrementFit> {
    use rand::Rng as _;
    let hv = h.value();
    if !(gamma_exp > 0.0 && gamma_exp < hv) || !(lower > 0.0 && lower < t) {
        return Err(invalid("gamma", "need 0 < γ < H and 0 < lower < t"));
    }
    let ch = c_factor(h);
    let draw = |rng: &mut crate::rng::Rng| {
        let lu = |rng: &mut crate::rng::Rng| (lower.ln() + (t.ln() - lower.ln()) * rng.random::<f64>()).exp();
        let (mut a, mut b) = (lu(rng), lu(rng));
        while a == b {
            b = lu(rng);
        }
        if a < b {
            std::mem::swap(&mut a, &mut b);
        }
        // a = θ > b = θ'; keep θ a little below t so the gap is resolvable
        (a.min(t * (1.0 - 1e-9)), b)
    };
    let ratio = |theta: f64, theta_p: f64| {
        let gap = t - theta;
        let inc = increment(h, t, theta, theta_p, gap);
        let env = ch * increment_envelope(hv, gamma_exp, theta, theta_p, gap);
        (inc / env, inc.abs() / env)
    };
    let mut constant = 0.0f64;
    let (u_lo, u_hi) = ((1e-12 * t).ln(), (t - lower).ln());
    for i in 0..=GRID {
        let u = (u_lo + (u_hi - u_lo) * i as f64 / GRID as f64).exp();
        for j in 0..=GRID {
            let r = (-18.0 * (1.0 - j as f64 / GRID as f64)).exp() * (1.0 - 1e-9);
            if (1.0 - r) * u < 1e-9 * t {
                continue;
            }
            let (theta, theta_p) = (t - r * u, t - u);
            let inc = kernel_k_with_gap(h, t, theta, r * u)? - kernel_k_with_gap(h, t, theta_p, u)?;
            constant = constant.max(inc / (ch * increment_envelope(hv, gamma_exp, theta, theta_p, r * u)));
        }
    }
    let (mut validation_max, mut abs_max) = (f64::NEG_INFINITY, 0.0f64);
    for _ in 0..pairs {
        let (th, tp) = draw(rng);
        let (r, ra) = ratio(th, tp);
        if !r.is_finite() {
            return Err(Error::NonFinite(format!("increment ratio at θ={th}, θ'={tp}")));
        }
        abs_max = abs_max.max(ra);
        validation_max = validation_max.max(r);
    }
    Ok(IncrementFit {
        constant,
        validation_max,
        abs_max,
        pairs,
    })
}

/// `∫_0^t∫_0^t |K_H(t,θ) - K_H(t,θ')|² / |θ-θ'|^{1+2β} dθ' dθ` by nested
/// tanh-sinh over the half `θ' < θ`. Near `θ = 0` the kernel is replaced by
/// its leading power `A θ^e`, whose contribution is integrated in closed form.
pub fn kernel_double_integral(h: HurstParam, t: f64, beta: f64, rel_tol: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 0.5) {
        return Err(invalid("beta", "need 0 < β < 1/2"));
    }
    let e = h.value() - 0.5;
    let tail_power = 2.0 * e - 2.0 * beta + 1.0;
    if tail_power <= 0.0 {
        return Err(invalid("beta", "need β < H for a finite integral"));
    }
    let theta_min = 1e-12 * t;
    let failed = std::cell::Cell::new(false);
    let outer = tanh_sinh(
        |_, dm, gap_t| {
            let theta = theta_min + dm;
            let kt = kernel_k_with_gap(h, t, theta, gap_t).unwrap_or(f64::NAN);
            // the integrand vanishes like dist^{1-2β} on the diagonal, where the
            // kernel difference is pure rounding, so that sliver is dropped
            let cut = 1e-9 * theta;
            match tanh_sinh(
                |tp, _, db| {
                    let dist = cut + db;
                    let kp = kernel_k_with_gap(h, t, tp, gap_t + dist).unwrap_or(f64::NAN);
                    (kt - kp).powi(2) / dist.powf(1.0 + 2.0 * beta)
                },
                0.0,
                theta - cut,
                rel_tol,
            ) {
                Ok(e) => e.value,
                Err(_) => {
                    failed.set(true);
                    f64::NAN
                }
            }
        },
        theta_min,
        t,
        rel_tol,
    )?;
    if failed.get() || !outer.value.is_finite() {
        return Err(Error::Quadrature("kernel double integral".into()));
    }
    let s0 = 1e-40 * t;
    let amp = kernel_k_with_gap(h, t, s0, t - s0)? * s0.powf(-e);
    let shape = tanh_sinh(
        |u, _, du| {
            let diff = if du < 0.5 { -(e * (-du).ln_1p()).exp_m1() } else { 1.0 - u.powf(e) };
            (diff / du).powi(2) * du.powf(1.0 - 2.0 * beta)
        },
        0.0,
        1.0,
        rel_tol,
    )?
    .value;
    let tail = amp * amp * shape * theta_min.powf(tail_power) / tail_power;
    Ok(2.0 * (outer.value + tail))
}

/// Tanh-sinh in gap coordinates over `(0, span)`, split at the interior gaps
/// `breaks`. The integrand receives `(gap, span - gap)`.
fn split_tanh_sinh(f: &dyn Fn(f64, f64) -> f64, span: f64, breaks: &[f64], tol: f64) -> f64 {
    // inner integrals scale like a positive power of the span
    if span < 1e-40 {
        return 0.0;
    }
    let mut pts = vec![0.0];
    pts.extend(breaks.iter().copied().filter(|&b| b > 0.0 && b < span));
    pts.push(span);
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let off_b = span - b;
        if b - a <= 1e-9 * span {
            // sliver next to a sign change; the kernel is pure rounding at this scale
            let m = 0.5 * (b - a);
            total += (b - a) * f(a + m, off_b + m);
            continue;
        }
        match tanh_sinh(|_, da, db| f(a + da, off_b + db), a, b, tol) {
            Ok(e) => total += e.value,
            Err(_) if span < 1e-12 => {
                let rule = gauss_legendre(24);
                total += gauss_legendre_on(|x| f(x, span - x), a, b, &rule);
            }
            Err(_) => return f64::NAN,
        }
    }
    total
}

/// `∫_{Δ^n_{θ,t}} Π_j g_j(s_j) |s_j - s_{j-1}|^{w_j} ds` with `s_0 = θ`,
/// where `g_j` takes the gap `s - θ` and may have kinks at the gaps `breaks`.
fn iterated_simplex(gs: &[&dyn Fn(f64) -> f64], w: &[f64], span: f64, breaks: &[f64], tol: f64) -> Result<f64> {
    struct Ctx<'a> {
        gs: &'a [&'a dyn Fn(f64) -> f64],
        w: &'a [f64],
        breaks: &'a [f64],
        tol: f64,
    }
    // J_j(g) = g_j(g) ∫_0^g (g - u)^{w_j} J_{j-1}(u) du, J_0(g) = g_0(g) g^{w_0}
    fn level(c: &Ctx<'_>, j: usize, gap: f64) -> f64 {
        let g = (c.gs[j])(gap);
        if j == 0 {
            return g * gap.powf(c.w[0]);
        }
        let f = |u: f64, d: f64| d.powf(c.w[j]) * level(c, j - 1, u);
        g * split_tanh_sinh(&f, gap, c.breaks, c.tol)
    }
    let c = Ctx { gs, w, breaks, tol };
    let n = gs.len();
    let v = split_tanh_sinh(&|g, _| level(&c, n - 1, g), span, breaks, tol);
    if !v.is_finite() {
        return Err(Error::Quadrature("iterated simplex integral".into()));
    }
    Ok(v)
}

/// Gaps `s - θ` at which `K_H(s,θ) - K_H(s,θ')` changes sign on `(θ, t)`.
fn increment_roots(h: HurstParam, theta: f64, theta_p: f64, t: f64) -> Vec<f64> {
    let f = |gap: f64| increment(h, theta + gap, theta, theta_p, gap);
    let span = t - theta;
    let gaps: Vec<f64> = (0..=600).map(|k| span * 10f64.powf(-10.0 * (1.0 - k as f64 / 600.0))).collect();
    let mut roots = Vec::new();
    for w in gaps.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        let (mut fa, fb) = (f(a), f(b));
        if fa == 0.0 || fa.signum() == fb.signum() {
            continue;
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            let fm = f(m);
            if fm.signum() == fa.signum() {
                a = m;
                fa = fm;
            } else {
                b = m;
            }
            if b - a <= 1e-15 * b {
                break;
            }
        }
        roots.push(0.5 * (a + b));
    }
    roots
}

/// Parameters of the iterated-integral bound.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexBetaSpec {
    pub w: Vec<f64>,
    pub eps: Vec<u8>,
    pub h: f64,
    pub gamma: f64,
    pub theta: f64,
    pub theta_p: f64,
    pub t: f64,
}

/// Outcome of [`simplex_beta_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexBetaReport {
    /// Integral of `Π |K_H(s_j,θ) - K_H(s_j,θ')|^{ε_j} |s_j-s_{j-1}|^{w_j}`.
    pub integral: f64,
    /// Pointwise constant `C` fitted on `(θ, t)`, including `c_H`.
    pub constant: f64,
    /// Bound with the printed `Π_γ(n)`.
    pub bound: f64,
    /// Bound with the product of Beta factors produced by iterating the
    /// base identity.
    pub iterated_bound: f64,
}

fn pi_gamma(w: &[f64], eps: &[u8], shift: f64) -> f64 {
    let n = w.len() as f64;
    let num: f64 = w.iter().map(|wj| ln_gamma(wj + 1.0)).sum();
    let se: f64 = eps.iter().map(|&e| e as f64).sum();
    let arg = w.iter().sum::<f64>() + shift * se + n;
    if arg <= 0.0 {
        return f64::NAN;
    }
    (num - ln_gamma(arg)).exp()
}

/// Exact value of `∫_{Δ^n_{θ,t}} Π (s_j-θ)^{shift ε_j} |s_j - s_{j-1}|^{w_j} ds`
/// divided by `(t-θ)^{Σ(w_j + shift ε_j) + n}`.
fn iterated_beta(w: &[f64], eps: &[u8], shift: f64) -> f64 {
    // each step integrates (s_{j+1}-s_j)^{w_{j+1}} (s_j-θ)^{e_j} ds_j
    let mut e = w[0] + shift * eps[0] as f64;
    let mut log = 0.0;
    for j in 1..w.len() {
        log += ln_gamma(e + 1.0) + ln_gamma(w[j] + 1.0) - ln_gamma(e + w[j] + 2.0);
        e = e + w[j] + 1.0 + shift * eps[j] as f64;
    }
    // final ∫_θ^t (s-θ)^e ds
    (log - (e + 1.0).ln()).exp()
}

/// Check the iterated simplex bound with a kernel-increment constant fitted
/// pointwise on `(θ, t)`.
pub fn simplex_beta_check(spec: &SimplexBetaSpec) -> Result<SimplexBetaReport> {
    let n = spec.w.len();
    if n == 0 || n > 3 || spec.eps.len() != n {
        return Err(invalid("w", "need 1 ≤ n ≤ 3 exponents and matching ε"));
    }
    let shift = spec.h - 0.5 - spec.gamma;
    for (j, (&w, &e)) in spec.w.iter().zip(&spec.eps).enumerate() {
        if !(w + shift * e as f64 > -1.0) || !(w > -1.0) {
            return Err(invalid("w", format!("exponent constraint violated at j={}", j + 1)));
        }
    }
    if !(0.0 < spec.theta_p && spec.theta_p < spec.theta && spec.theta < spec.t) {
        return Err(invalid("theta", "need 0 < θ' < θ < t"));
    }
    let h = HurstParam::new(spec.h)?;
    let (theta, tp) = (spec.theta, spec.theta_p);
    // pointwise constant on a log grid of gaps
    let span = spec.t - theta;
    let mut constant = 0.0f64;
    for k in 0..=400 {
        let gap = span * 10f64.powf(-8.0 * (1.0 - k as f64 / 400.0));
        let inc = increment(h, theta + gap, theta, tp, gap).abs();
        let env = increment_envelope(spec.h, spec.gamma, theta, tp, gap);
        constant = constant.max(inc / env);
    }
    let kernel = |gap: f64| increment(h, theta + gap, theta, tp, gap).abs();
    let one = |_: f64| 1.0;
    let gs: Vec<&dyn Fn(f64) -> f64> = spec
        .eps
        .iter()
        .map(|&e| if e == 1 { &kernel as &dyn Fn(f64) -> f64 } else { &one as &dyn Fn(f64) -> f64 })
        .collect();
    let roots = increment_roots(h, theta, tp, spec.t);
    let integral = iterated_simplex(&gs, &spec.w, span, &roots, 1e-8)?;
    let se: f64 = spec.eps.iter().map(|&e| e as f64).sum();
    let prefactor = (constant * ((theta - tp) / (theta * tp)).powf(spec.gamma) * theta.powf(shift)).powf(se);
    let power = span.powf(spec.w.iter().sum::<f64>() + shift * se + n as f64);
    Ok(SimplexBetaReport {
        integral,
        constant,
        bound: prefactor * pi_gamma(&spec.w, &spec.eps, shift) * power,
        iterated_bound: prefactor * iterated_beta(&spec.w, &spec.eps, shift) * power,
    })
}

/// Parameters of the Haar operator bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaarCheckSpec {
    pub alpha: f64,
    pub beta: f64,
    /// Dyadic resolution: functions are step functions on `2^level` cells.
    pub level: u32,
}

impl HaarCheckSpec {
    pub fn new(alpha: f64, beta: f64, level: u32) -> Result<Self> {
        if !(0.0 < alpha && alpha < beta && beta < 0.5) {
            return Err(invalid("alpha", "need 0 < α < β < 1/2"));
        }
        if level == 0 || level > 12 {
            return Err(invalid("level", "resolution level must lie in 1..=12"));
        }
        Ok(Self { alpha, beta, level })
    }
}

/// Orthonormal Haar coefficients of a step function on `2^J` equal cells:
/// `out[0]` is the mean, level `i` occupies `out[2^i .. 2^{i+1}]`.
pub fn haar_transform(cells: &[f64]) -> Result<Vec<f64>> {
    let n = cells.len();
    if !n.is_power_of_two() || n < 2 {
        return Err(invalid("cells", "length must be a power of two ≥ 2"));
    }
    let j = n.trailing_zeros();
    // work with cell integrals, merging pairs upward
    let mut cur: Vec<f64> = cells.iter().map(|v| v / n as f64).collect();
    let mut out = vec![0.0; n];
    for i in (0..j).rev() {
        let half = cur.len() / 2;
        let norm = (1u64 << i) as f64;
        let mut next = Vec::with_capacity(half);
        for k in 0..half {
            let (l, r) = (cur[2 * k], cur[2 * k + 1]);
            // ψ_{i,k} = 2^{i/2} on the left half, -2^{i/2} on the right
            out[(1 << i) + k] = norm.sqrt() * (l - r);
            next.push(l + r);
        }
        cur = next;
    }
    out[0] = cur[0];
    Ok(out)
}

/// `∫_0^1∫_0^1 |f(t)-f(u)|²/|t-u|^{1+2β}` for a step function on equal cells,
/// exact cell by cell.
pub fn step_double_integral(cells: &[f64], beta: f64) -> f64 {
    let n = cells.len();
    let h = 1.0 / n as f64;
    let g = |x: f64| if x == 0.0 { 0.0 } else { x.powf(1.0 - 2.0 * beta) / (2.0 * beta * (1.0 - 2.0 * beta)) };
    // weight for two unit cells k apart, scaled by h^{1-2β}
    let wk: Vec<f64> = (0..n)
        .map(|k| if k == 0 { 0.0 } else { -(g(k as f64 + 1.0) - 2.0 * g(k as f64) + g(k as f64 - 1.0)) })
        .collect();
    let scale = h.powf(1.0 - 2.0 * beta);
    let mut total = 0.0;
    for p in 0..n {
        for q in p + 1..n {
            let d = cells[p] - cells[q];
            total += d * d * wk[q - p];
        }
    }
    2.0 * scale * total
}

/// Outcome of [`haar_operator_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaarReport {
    /// `‖A_α f‖²`.
    pub lhs: f64,
    /// `2(‖f‖² + (1-2^{-2(β-α)})^{-1} ∫∫ …)`.
    pub rhs: f64,
    pub l2_norm_sq: f64,
    pub double_integral: f64,
}

/// Apply `A_α` to a step function and compare with the fractional Sobolev
/// bound.
pub fn haar_operator_check(spec: &HaarCheckSpec, cells: &[f64]) -> Result<HaarReport> {
    if cells.len() != 1usize << spec.level {
        return Err(invalid("cells", format!("expected 2^{} cells", spec.level)));
    }
    let c = haar_transform(cells)?;
    let mut lhs = c[0] * c[0];
    for i in 0..spec.level {
        let f = 2f64.powf(2.0 * i as f64 * spec.alpha);
        lhs += f * c[(1 << i)..(2 << i)].iter().map(|v| v * v).sum::<f64>();
    }
    let l2 = cells.iter().map(|v| v * v).sum::<f64>() / cells.len() as f64;
    let di = step_double_integral(cells, spec.beta);
    let rhs = 2.0 * (l2 + di / (1.0 - 2f64.powf(-2.0 * (spec.beta - spec.alpha))));
    Ok(HaarReport {
        lhs,
        rhs,
        l2_norm_sq: l2,
        double_integral: di,
    })
}

/// Cell averages of the Haar function `v_s`, `s = 2^i + j`, on `2^level` cells.
pub fn haar_function_cells(i: u32, j: usize, level: u32) -> Vec<f64> {
    let n = 1usize << level;
    let per = n >> i;
    let amp = 2f64.powf(0.5 * i as f64);
    (0..n)
        .map(|k| {
            if k / per != j {
                0.0
            } else if k % per < per / 2 {
                amp
            } else {
                -amp
            }
        })
        .collect()
}
