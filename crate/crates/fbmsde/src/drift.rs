//! Drift classes, the exponential half-space family, truncation and Gaussian
//! mollification.
//!
//! Coordinates and components are indexed from 0. A drift evaluated at a
//! vector `y` treats every coordinate beyond `y.len()` as zero.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng as _;

use crate::error::{invalid, Error, Result};
use crate::quad::{gauss_hermite_normal, gauss_kronrod};
use crate::rng::{substream, AUX_COMPONENT};
use crate::special::{gamma, normal_cdf, normal_pdf};

/// Anything that maps `(t, y)` to drift components.
pub trait Drift: Send + Sync {
    /// Number of components the drift represents.
    fn dim(&self) -> usize;

    /// Write `b_k(t, y)` for `k < out.len()`; components past [`Drift::dim`]
    /// are zero.
    fn eval(&self, t: f64, y: &[f64], out: &mut [f64]);

    /// Row-major Jacobian `jac[k·n + i] = ∂b_k/∂y_i` with `n = y.len()`.
    fn jacobian(&self, t: f64, y: &[f64], jac: &mut [f64]) -> Result<()>;
}

/// Region `A` of the exponential family, in the projected coordinates `z`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    /// `{z : z_normal ≥ offset}`.
    HalfSpace { normal: usize, offset: f64 },
    /// `{z : |z| ≤ radius}`.
    Ball { radius: f64 },
}

/// `C·e^{-t}·e^{-D|z|/2}·(a 1_A(z) + b 1_{A^c}(z))` with `z = 𝒟·(y_n)_{n ∈ N}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleComponent {
    pub cf: f64,
    pub df: f64,
    pub scale: f64,
    pub support: Vec<usize>,
    pub region: Region,
    pub a: f64,
    pub b: f64,
}

pub type DriftFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// One drift component `b_k`.
#[derive(Clone)]
pub enum Component {
    Zero,
    Constant(f64),
    /// `Σ_i c_i y_i`.
    Linear(Vec<f64>),
    /// `A exp(-|y - c|²/(2w²))` over the first `center.len()` coordinates.
    Bump { amplitude: f64, center: Vec<f64>, width: f64 },
    Example(ExampleComponent),
    /// Arbitrary map depending only on the coordinates in `support`.
    Custom { f: DriftFn, support: Vec<usize> },
}

impl std::fmt::Debug for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Component::Zero => write!(f, "Zero"),
            Component::Constant(c) => write!(f, "Constant({c})"),
            Component::Linear(c) => write!(f, "Linear({c:?})"),
            Component::Bump {
                amplitude,
                center,
                width,
            } => write!(f, "Bump({amplitude}, {center:?}, {width})"),
            Component::Example(e) => write!(f, "{e:?}"),
            Component::Custom { support, .. } => write!(f, "Custom(support {support:?})"),
        }
    }
}

#[inline]
fn coord(y: &[f64], lim: usize, i: usize) -> f64 {
    if i < lim && i < y.len() {
        y[i]
    } else {
        0.0
    }
}

impl ExampleComponent {
    fn norm(&self, y: &[f64], lim: usize) -> f64 {
        self.support
            .iter()
            .map(|&n| (self.scale * coord(y, lim, n)).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn envelope(&self, t: f64, norm: f64) -> f64 {
        self.cf * (-t).exp() * (-0.5 * self.df * norm).exp()
    }

    fn in_region(&self, y: &[f64], lim: usize, norm: f64) -> bool {
        match self.region {
            Region::HalfSpace { normal, offset } => self.scale * coord(y, lim, normal) >= offset,
            Region::Ball { radius } => norm <= radius,
        }
    }

    fn eval(&self, t: f64, y: &[f64], lim: usize) -> f64 {
        let n = self.norm(y, lim);
        let c = if self.in_region(y, lim, n) { self.a } else { self.b };
        self.envelope(t, n) * c
    }

    /// `∂_i` of the envelope, zero at the kink `z = 0`.
    fn envelope_grad(&self, env: f64, norm: f64, y: &[f64], lim: usize, i: usize) -> f64 {
        if norm == 0.0 || i >= lim || !self.support.contains(&i) {
            return 0.0;
        }
        -env * 0.5 * self.df * self.scale * self.scale * coord(y, lim, i) / norm
    }

    /// Effective radius of `e^{-D|z|/2}` in `y` units at relative level `cut`.
    fn radius(&self, cut: f64) -> f64 {
        if self.df * self.scale > 0.0 {
            -2.0 * cut.ln() / (self.df * self.scale)
        } else {
            1.0
        }
    }
}

impl Component {
    /// Coordinates the component depends on.
    pub fn support(&self) -> Vec<usize> {
        match self {
            Component::Zero | Component::Constant(_) => Vec::new(),
            Component::Linear(c) => (0..c.len()).filter(|&i| c[i] != 0.0).collect(),
            Component::Bump { center, .. } => (0..center.len()).collect(),
            Component::Example(e) => e.support.clone(),
            Component::Custom { support, .. } => support.clone(),
        }
    }

    fn eval(&self, t: f64, y: &[f64], lim: usize) -> f64 {
        match self {
            Component::Zero => 0.0,
            Component::Constant(c) => *c,
            Component::Linear(c) => c.iter().enumerate().map(|(i, ci)| ci * coord(y, lim, i)).sum(),
            Component::Bump {
                amplitude,
                center,
                width,
            } => {
                let r2: f64 = center
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (coord(y, lim, i) - c).powi(2))
                    .sum();
                amplitude * (-r2 / (2.0 * width * width)).exp()
            }
            Component::Example(e) => e.eval(t, y, lim),
            Component::Custom { f, .. } => {
                if lim >= y.len() {
                    f(t, y)
                } else {
                    let mut yt = y.to_vec();
                    yt[lim..].iter_mut().for_each(|v| *v = 0.0);
                    f(t, &yt)
                }
            }
        }
    }

    /// Analytic gradient where available; `None` for custom maps.
    fn grad(&self, t: f64, y: &[f64], lim: usize, out: &mut [f64]) -> Option<()> {
        out.iter_mut().for_each(|v| *v = 0.0);
        let n = out.len();
        match self {
            Component::Zero | Component::Constant(_) => {}
            Component::Linear(c) => {
                for i in 0..n.min(lim).min(c.len()) {
                    out[i] = c[i];
                }
            }
            Component::Bump { center, width, .. } => {
                let v = self.eval(t, y, lim);
                for i in 0..n.min(lim).min(center.len()) {
                    out[i] = -v * (coord(y, lim, i) - center[i]) / (width * width);
                }
            }
            Component::Example(e) => {
                // one-sided: the jump across the interface is not represented
                let norm = e.norm(y, lim);
                let v = e.eval(t, y, lim);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = e.envelope_grad(v, norm, y, lim, i);
                }
            }
            Component::Custom { .. } => return None,
        }
        Some(())
    }
}

/// Membership tags for the drift classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftClass {
    /// Bounded with integrable scaled sections.
    B,
    /// Lipschitz components with summable constants.
    L,
    /// Lipschitz with vanishing constants.
    L0,
}

/// A drift with declared class bounds.
#[derive(Debug, Clone)]
pub struct DriftSpec {
    pub components: Vec<Component>,
    /// Declared `C_k` with `sup |b_k| ≤ C_k λ_k`.
    pub c_bounds: Vec<f64>,
    /// Declared `D_k` for the scaled integral condition.
    pub d_bounds: Vec<f64>,
    /// Optional declared `(L_k, M_i)`.
    pub lipschitz: Option<(Vec<f64>, Vec<f64>)>,
    pub tags: Vec<DriftClass>,
    /// Components and coordinates from this index on are ignored.
    pub truncation: Option<usize>,
}

impl DriftSpec {
    /// Drift without declared bounds; `C_k = D_k = ∞`.
    pub fn new(components: Vec<Component>) -> Self {
        let n = components.len();
        Self {
            components,
            c_bounds: vec![f64::INFINITY; n],
            d_bounds: vec![f64::INFINITY; n],
            lipschitz: None,
            tags: Vec::new(),
            truncation: None,
        }
    }

    /// The zero drift in `d_max` components, in every class with zero bounds.
    pub fn zero(d_max: usize) -> Self {
        Self {
            components: vec![Component::Zero; d_max],
            c_bounds: vec![0.0; d_max],
            d_bounds: vec![0.0; d_max],
            lipschitz: Some((vec![0.0; d_max], vec![0.0; d_max])),
            tags: vec![DriftClass::B, DriftClass::L, DriftClass::L0],
            truncation: None,
        }
    }

    pub fn d_max(&self) -> usize {
        self.components.len()
    }

    fn limit(&self) -> usize {
        self.truncation.unwrap_or(usize::MAX)
    }

    /// `b_k(t, y)`.
    pub fn component(&self, k: usize, t: f64, y: &[f64]) -> f64 {
        let lim = self.limit();
        if k >= lim || k >= self.components.len() {
            0.0
        } else {
            self.components[k].eval(t, y, lim)
        }
    }
}

impl Drift for DriftSpec {
    fn dim(&self) -> usize {
        self.components.len().min(self.limit())
    }

    fn eval(&self, t: f64, y: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.component(k, t, y);
        }
    }

    fn jacobian(&self, t: f64, y: &[f64], jac: &mut [f64]) -> Result<()> {
        let n = y.len();
        let lim = self.limit();
        jac.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..n.min(self.dim()) {
            self.components[k]
                .grad(t, y, lim, &mut jac[k * n..(k + 1) * n])
                .ok_or_else(|| Error::Unsupported("Jacobian of a custom drift".into()))?;
        }
        Ok(())
    }
}

/// Parameters of the exponential half-space / ball family.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleParams {
    pub cf: Vec<f64>,
    pub df: Vec<f64>,
    /// Scale `𝒟_k^A` of the projection `A_k`.
    pub scale: Vec<f64>,
    /// Projection sets `N_k`.
    pub supports: Vec<Vec<usize>>,
    /// Region per component.
    pub regions: Vec<Region>,
    pub a: f64,
    pub b: f64,
}

/// Surface measure of the unit sphere in `ℝ^m` times `∫_0^∞ r^{m-1} e^{-c r} dr`.
fn radial_exp_integral(m: usize, c: f64) -> f64 {
    let mf = m as f64;
    2.0 * PI.powf(mf / 2.0) / gamma(mf / 2.0) * gamma(mf) / c.powf(mf)
}

/// Build the exponential family. `lambdas` and `scaling` (`λ_n √𝔎_{H_n}` per
/// coordinate) fix the declared `C_k` and `D_k`.
pub fn example_drift_s5(p: &ExampleParams, lambdas: &[f64], scaling: &[f64]) -> Result<DriftSpec> {
    let d = p.cf.len();
    for (name, len) in [
        ("df", p.df.len()),
        ("scale", p.scale.len()),
        ("supports", p.supports.len()),
        ("regions", p.regions.len()),
    ] {
        if len != d {
            return Err(invalid("example", format!("{name} has {len} entries, cf has {d}")));
        }
    }
    if lambdas.len() < d {
        return Err(invalid("lambdas", format!("need {d} weights")));
    }
    let mut components = Vec::with_capacity(d);
    let mut c_bounds = Vec::with_capacity(d);
    let mut d_bounds = Vec::with_capacity(d);
    let amax = p.a.abs().max(p.b.abs());
    for k in 0..d {
        let (cf, df, sc) = (p.cf[k], p.df[k], p.scale[k]);
        if !(cf >= 0.0 && df > 0.0 && sc > 0.0) {
            return Err(invalid("example", format!("component {k}: need C ≥ 0, D > 0, scale > 0")));
        }
        let support = p.supports[k].clone();
        if support.is_empty() {
            return Err(invalid("supports", format!("component {k} has an empty projection set")));
        }
        match p.regions[k] {
            Region::HalfSpace { normal, offset } => {
                if !support.contains(&normal) || !offset.is_finite() {
                    return Err(invalid(
                        "region",
                        format!("component {k}: half-space normal {normal} must lie in the projection set"),
                    ));
                }
            }
            Region::Ball { radius } => {
                if !(radius > 0.0 && radius.is_finite()) {
                    return Err(invalid("region", format!("component {k}: ball radius {radius}")));
                }
            }
        }
        let lam = lambdas[k];
        if lam <= 0.0 && cf > 0.0 {
            return Err(invalid("lambdas", format!("component {k} has zero weight but nonzero drift")));
        }
        let lam = if lam > 0.0 { lam } else { 1.0 };
        c_bounds.push(cf * amax / lam);
        // max over truncation levels of the envelope bound
        let mut sorted = support.clone();
        sorted.sort_unstable();
        let mut worst = cf * amax;
        let mut jac = 1.0;
        for (m, &n) in sorted.iter().enumerate() {
            let s = scaling.get(n).copied().unwrap_or(0.0);
            if s <= 0.0 {
                return Err(invalid("scaling", format!("coordinate {n} needs a positive scale")));
            }
            jac /= sc * s;
            worst = worst.max(cf * amax * jac * radial_exp_integral(m + 1, 0.5 * df));
        }
        d_bounds.push(worst / lam);
        components.push(Component::Example(ExampleComponent {
            cf,
            df,
            scale: sc,
            support,
            region: p.regions[k],
            a: p.a,
            b: p.b,
        }));
    }
    Ok(DriftSpec {
        components,
        c_bounds,
        d_bounds,
        lipschitz: None,
        tags: vec![DriftClass::B],
        truncation: None,
    })
}

/// Preset of the exponential family: `C_k^f = c0 λ_k ρ^{k}`, `D^f = 𝒟 = 1`,
/// projection onto all `d_max` coordinates, half-space normal to coordinate
/// `k` at `offset`.
pub fn example_preset(
    c0: f64,
    rho: f64,
    a: f64,
    b: f64,
    offset: f64,
    lambdas: &[f64],
    scaling: &[f64],
) -> Result<DriftSpec> {
    let d = lambdas.len();
    let params = ExampleParams {
        cf: (0..d).map(|k| c0 * lambdas[k] * rho.powi(k as i32)).collect(),
        df: vec![1.0; d],
        scale: vec![1.0; d],
        supports: vec![(0..d).collect(); d],
        regions: (0..d).map(|k| Region::HalfSpace { normal: k, offset }).collect(),
        a,
        b,
    };
    example_drift_s5(&params, lambdas, scaling)
}

/// Keep components and coordinates `0..d`.
pub fn truncate_drift(spec: &DriftSpec, d: usize) -> Result<DriftSpec> {
    if d == 0 {
        return Err(invalid("d", "must be at least 1"));
    }
    let mut out = spec.clone();
    out.truncation = Some(spec.truncation.map_or(d, |t| t.min(d)));
    Ok(out)
}

/// Gauss–Hermite points per dimension for quadrature convolution.
pub const GH_POINTS: usize = 16;
/// Largest number of coordinates smoothed by quadrature convolution.
pub const GH_MAX_DIM: usize = 3;

/// Gaussian smoothing `b^{d,ε} = (π_d b(·, π_d ·)) * φ_ε`.
#[derive(Debug, Clone)]
pub struct MollifiedDrift {
    pub base: DriftSpec,
    pub d: usize,
    pub epsilon: f64,
    /// Active coordinates per component, those of its support below `d`.
    active: Vec<Vec<usize>>,
    gh: (Vec<f64>, Vec<f64>),
}

/// Smooth the truncated drift with a centred Gaussian of standard deviation `eps`.
pub fn mollify(spec: &DriftSpec, d: usize, eps: f64) -> Result<MollifiedDrift> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid("epsilon", format!("must be positive, got {eps}")));
    }
    let base = truncate_drift(spec, d)?;
    let lim = base.limit();
    let mut active = Vec::with_capacity(base.d_max());
    for (k, c) in base.components.iter().enumerate() {
        let act: Vec<usize> = c.support().into_iter().filter(|&i| i < lim).collect();
        let generic = match c {
            Component::Custom { .. } => true,
            Component::Example(e) => matches!(e.region, Region::Ball { .. }),
            _ => false,
        };
        if generic && k < lim && act.len() > GH_MAX_DIM {
            return Err(Error::Unsupported(format!(
                "quadrature smoothing of component {k} over {} coordinates (at most {GH_MAX_DIM})",
                act.len()
            )));
        }
        active.push(act);
    }
    Ok(MollifiedDrift {
        base,
        d,
        epsilon: eps,
        active,
        gh: gauss_hermite_normal(GH_POINTS),
    })
}

impl MollifiedDrift {
    fn lim(&self) -> usize {
        self.base.limit()
    }

    /// Tensor Gauss–Hermite average of `g(y + ε z)` over the active coordinates,
    /// together with the score-form gradient when `grad` is given.
    fn gh_smooth(
        &self,
        act: &[usize],
        y: &[f64],
        g: impl Fn(&[f64]) -> f64,
        mut grad: Option<&mut [f64]>,
    ) -> f64 {
        let m = act.len();
        let (x, w) = &self.gh;
        let np = x.len();
        let total = np.pow(m as u32);
        let mut yy = y.to_vec();
        let mut value = 0.0;
        if let Some(gr) = grad.as_deref_mut() {
            gr.iter_mut().for_each(|v| *v = 0.0);
        }
        for idx in 0..total {
            let mut rem = idx;
            let mut weight = 1.0;
            for &c in act {
                let j = rem % np;
                rem /= np;
                if c < yy.len() {
                    yy[c] = y[c] + self.epsilon * x[j];
                }
                weight *= w[j];
            }
            let v = weight * g(&yy);
            value += v;
            if let Some(gr) = grad.as_deref_mut() {
                let mut rem = idx;
                for &c in act {
                    let j = rem % np;
                    rem /= np;
                    if c < gr.len() {
                        gr[c] += v * x[j] / self.epsilon;
                    }
                }
            }
        }
        value
    }

    fn component_value(&self, k: usize, t: f64, y: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let lim = self.lim();
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        if k >= lim || k >= self.base.components.len() {
            return 0.0;
        }
        let eps = self.epsilon;
        match &self.base.components[k] {
            c @ (Component::Zero | Component::Constant(_) | Component::Linear(_)) => {
                if let Some(g) = grad {
                    c.grad(t, y, lim, g);
                }
                c.eval(t, y, lim)
            }
            Component::Bump {
                amplitude,
                center,
                width,
            } => {
                let m = self.active[k].len() as f64;
                let s2 = width * width + eps * eps;
                let r2: f64 = center
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (coord(y, lim, i) - c).powi(2))
                    .sum();
                let v = amplitude * (width * width / s2).powf(m / 2.0) * (-r2 / (2.0 * s2)).exp();
                if let Some(g) = grad {
                    for i in 0..g.len().min(lim).min(center.len()) {
                        g[i] = -v * (coord(y, lim, i) - center[i]) / s2;
                    }
                }
                v
            }
            Component::Example(e) => match e.region {
                Region::HalfSpace { normal, offset } => {
                    let norm = e.norm(y, lim);
                    let env = e.envelope(t, norm);
                    let (coef, dcoef) = if normal < lim {
                        let u = (coord(y, lim, normal) - offset / e.scale) / eps;
                        let p = normal_cdf(u);
                        (e.a * p + e.b * (1.0 - p), (e.a - e.b) * normal_pdf(u) / eps)
                    } else {
                        (if 0.0 >= offset { e.a } else { e.b }, 0.0)
                    };
                    if let Some(g) = grad {
                        for (i, gi) in g.iter_mut().enumerate() {
                            *gi = e.envelope_grad(env, norm, y, lim, i) * coef;
                        }
                        if normal < g.len() && normal < lim {
                            g[normal] += env * dcoef;
                        }
                    }
                    env * coef
                }
                Region::Ball { .. } => self.smoothed(k, t, y, grad),
            },
            Component::Custom { .. } => self.smoothed(k, t, y, grad),
        }
    }

    /// Quadrature convolution of component `k`; `y` is padded with zeros so
    /// every active coordinate can be displaced.
    fn smoothed(&self, k: usize, t: f64, y: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let act = &self.active[k];
        let c = &self.base.components[k];
        let lim = self.lim();
        let need = act.iter().map(|&i| i + 1).max().unwrap_or(0);
        if y.len() >= need {
            self.gh_smooth(act, y, |yy| c.eval(t, yy, lim), grad)
        } else {
            let mut padded = y.to_vec();
            padded.resize(need, 0.0);
            let mut g = vec![0.0; need];
            let v = self.gh_smooth(act, &padded, |yy| c.eval(t, yy, lim), Some(&mut g));
            if let Some(out) = grad {
                let n = out.len();
                out.copy_from_slice(&g[..n]);
            }
            v
        }
    }

    /// Component `k` of the smoothed drift.
    pub fn component(&self, k: usize, t: f64, y: &[f64]) -> f64 {
        self.component_value(k, t, y, None)
    }
}

impl Drift for MollifiedDrift {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, t: f64, y: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.component_value(k, t, y, None);
        }
    }

    fn jacobian(&self, t: f64, y: &[f64], jac: &mut [f64]) -> Result<()> {
        let n = y.len();
        let mut row = vec![0.0; n.max(self.lim().min(self.d))];
        for k in 0..n {
            self.component_value(k, t, y, Some(&mut row));
            jac[k * n..(k + 1) * n].copy_from_slice(&row[..n]);
        }
        Ok(())
    }
}

/// Sampled sup of `|∂_i b_k|` and its rank-one dominating factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzEstimate {
    pub d: usize,
    /// Row-major `d × d` sampled sups `G_{ki}`.
    pub sampled: Vec<f64>,
    pub l: Vec<f64>,
    pub m: Vec<f64>,
}

impl LipschitzEstimate {
    fn from_sampled(d: usize, sampled: Vec<f64>) -> Self {
        let l: Vec<f64> = (0..d)
            .map(|k| sampled[k * d..(k + 1) * d].iter().copied().fold(0.0, f64::max))
            .collect();
        let m = (0..d)
            .map(|i| {
                (0..d)
                    .filter(|&k| l[k] > 0.0)
                    .map(|k| sampled[k * d + i] / l[k])
                    .fold(0.0, f64::max)
            })
            .collect();
        Self { d, sampled, l, m }
    }
}

/// Per-coordinate half-width of the box holding the effective support, and
/// interface positions worth sampling densely.
fn sampling_box(spec: &DriftSpec, d: usize, eps: f64) -> (Vec<f64>, Vec<(usize, f64)>) {
    let mut radius = vec![1.0f64; d];
    let mut interfaces = Vec::new();
    for c in spec.components.iter().take(d) {
        match c {
            Component::Example(e) => {
                let r = e.radius(1e-8) + 5.0 * eps;
                for &n in &e.support {
                    if n < d {
                        radius[n] = radius[n].max(r);
                    }
                }
                if let Region::HalfSpace { normal, offset } = e.region {
                    if normal < d {
                        interfaces.push((normal, offset / e.scale));
                    }
                }
            }
            Component::Bump { center, width, .. } => {
                for (i, c0) in center.iter().enumerate().take(d) {
                    radius[i] = radius[i].max(c0.abs() + 6.0 * width + 5.0 * eps);
                }
            }
            _ => {}
        }
    }
    (radius, interfaces)
}

const LIP_SAMPLES: usize = 20_000;

fn lipschitz_sampled(drift: &dyn Drift, base: &DriftSpec, d: usize, t_end: f64, eps: f64, seed: u64) -> Result<LipschitzEstimate> {
    let (radius, interfaces) = sampling_box(base, d, eps);
    let mut rng = substream(seed, AUX_COMPONENT, 1);
    let mut g = vec![0.0; d * d];
    let mut jac = vec![0.0; d * d];
    let mut y = vec![0.0; d];
    let offsets = [0.0, 0.25, -0.25, 0.5, -0.5, 1.0, -1.0];
    for s in 0..LIP_SAMPLES {
        let t = if s % 4 == 0 { 0.0 } else { rng.random::<f64>() * t_end };
        // shrink the box geometrically for part of the samples to resolve the origin
        let shrink = if s % 3 == 0 { 10f64.powf(-6.0 * rng.random::<f64>()) } else { 1.0 };
        for i in 0..d {
            y[i] = (2.0 * rng.random::<f64>() - 1.0) * radius[i] * shrink;
        }
        if !interfaces.is_empty() && s % 2 == 1 {
            let (n, pos) = interfaces[(s / 2) % interfaces.len()];
            y[n] = pos + offsets[(s / 2) % offsets.len()] * eps;
        }
        drift.jacobian(t, &y, &mut jac)?;
        for (gi, ji) in g.iter_mut().zip(&jac) {
            *gi = f64::max(*gi, ji.abs());
        }
    }
    Ok(LipschitzEstimate::from_sampled(d, g))
}

/// Sampled Lipschitz constants of a mollified drift on `[0, t_end]`.
pub fn lipschitz_estimate(md: &MollifiedDrift, t_end: f64) -> Result<LipschitzEstimate> {
    lipschitz_sampled(md, &md.base, md.d, t_end, md.epsilon, 0x11)
}

/// Sampled Lipschitz constants of an unsmoothed drift in `d` coordinates.
/// Jumps are invisible to the gradient, so this is meaningful only for
/// continuous drifts.
pub fn lipschitz_estimate_unsmoothed(spec: &DriftSpec, d: usize, t_end: f64) -> Result<LipschitzEstimate> {
    let t = truncate_drift(spec, d)?;
    lipschitz_sampled(&t, &t, d, t_end, 0.0, 0x12)
}

/// How the scaled integral of a component was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntegralMethod {
    /// No coordinate enters; the value is a point evaluation.
    Point,
    Tensor,
    MonteCarlo,
    /// Decay probe showed the integrand is not integrable.
    Divergent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentMargin {
    pub k: usize,
    pub sup_measured: f64,
    pub sup_bound: f64,
    pub integral_measured: f64,
    pub integral_stderr: f64,
    pub integral_bound: f64,
    /// Number of coordinates integrated at the worst truncation level.
    pub dims: usize,
    pub method: IntegralMethod,
    pub pass: bool,
}

impl ComponentMargin {
    pub fn sup_margin(&self) -> f64 {
        self.sup_bound - self.sup_measured
    }

    pub fn integral_margin(&self) -> f64 {
        self.integral_bound - self.integral_measured
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassBReport {
    pub components: Vec<ComponentMargin>,
    /// The integral condition was checked for truncation levels `1..=largest_d_tested`.
    pub largest_d_tested: usize,
    pub pass: bool,
}

const SUP_T_POINTS: usize = 9;
const MC_SAMPLES: usize = 200_000;

/// Check both class-𝔅 conditions for components `0..d` with weights
/// `lambdas` and coordinate scaling `scaling[n] = λ_n √𝔎_{H_n}`.
///
/// The integral over `ℝ^{d'}` only runs over the coordinates the component
/// depends on; along the others the integrand is constant.
pub fn validate_class_b(
    spec: &DriftSpec,
    d: usize,
    lambdas: &[f64],
    scaling: &[f64],
    t_end: f64,
) -> Result<ClassBReport> {
    let t = truncate_drift(spec, d)?;
    validate_with(&|k, s, y| t.component(k, s, y), spec, d, lambdas, scaling, t_end)
}

/// [`validate_class_b`] for the smoothed drift against the bounds declared
/// for its base.
pub fn validate_class_b_mollified(md: &MollifiedDrift, lambdas: &[f64], scaling: &[f64], t_end: f64) -> Result<ClassBReport> {
    validate_with(&|k, s, y| md.component(k, s, y), &md.base, md.d, lambdas, scaling, t_end)
}

type ComponentEval<'a> = dyn Fn(usize, f64, &[f64]) -> f64 + 'a;

fn validate_with(
    eval: &ComponentEval<'_>,
    spec: &DriftSpec,
    d: usize,
    lambdas: &[f64],
    scaling: &[f64],
    t_end: f64,
) -> Result<ClassBReport> {
    if scaling.len() < d || lambdas.len() < d {
        return Err(invalid("scaling", format!("need {d} entries")));
    }
    if let Some(s) = scaling[..d].iter().find(|s| !(**s > 0.0)) {
        return Err(invalid("scaling", format!("entries must be positive, got {s}")));
    }
    let ts: Vec<f64> = (0..SUP_T_POINTS)
        .map(|i| t_end * i as f64 / (SUP_T_POINTS - 1) as f64)
        .collect();
    let (radius, interfaces) = sampling_box(spec, d, 0.0);
    let mut comps = Vec::new();
    for k in 0..d.min(spec.d_max()) {
        let c = &spec.components[k];
        let lam = lambdas[k];
        let sup_bound = spec.c_bounds[k] * lam;
        let integral_bound = spec.d_bounds[k] * lam;
        let sup_measured = sampled_sup(eval, k, d, &ts, &radius, &interfaces);
        let mut support: Vec<usize> = c.support().into_iter().filter(|&n| n < d).collect();
        support.sort_unstable();
        let mut best = (0.0f64, 0.0f64, 0usize, IntegralMethod::Point);
        for m in 0..=support.len() {
            // levels d' whose active set is the first m support coordinates
            let act = &support[..m];
            let (v, se, method) = scaled_integral(eval, spec, k, act, scaling, &ts)?;
            if v > best.0 || m == 0 {
                best = (v, se, m, method);
            }
        }
        let tol = 1e-9 * integral_bound.abs().max(1e-300);
        let int_ok = match best.3 {
            IntegralMethod::Divergent => false,
            IntegralMethod::MonteCarlo => best.0 - 3.0 * best.1 <= integral_bound + tol,
            _ => best.0 <= integral_bound * (1.0 + 1e-6) + tol,
        };
        let sup_ok = sup_measured <= sup_bound * (1.0 + 1e-9) + 1e-300;
        comps.push(ComponentMargin {
            k,
            sup_measured,
            sup_bound,
            integral_measured: best.0,
            integral_stderr: best.1,
            integral_bound,
            dims: best.2,
            method: best.3,
            pass: sup_ok && int_ok,
        });
    }
    let pass = comps.iter().all(|c| c.pass);
    Ok(ClassBReport {
        components: comps,
        largest_d_tested: d,
        pass,
    })
}

fn sampled_sup(eval: &ComponentEval<'_>, k: usize, d: usize, ts: &[f64], radius: &[f64], interfaces: &[(usize, f64)]) -> f64 {
    let mut rng = substream(0x5u64, AUX_COMPONENT, k as u64);
    let mut y = vec![0.0; d];
    let mut best = ts.iter().map(|&s| eval(k, s, &y).abs()).fold(0.0, f64::max);
    for s in 0..LIP_SAMPLES {
        let shrink = 10f64.powf(-12.0 * rng.random::<f64>());
        for i in 0..d {
            y[i] = (2.0 * rng.random::<f64>() - 1.0) * radius[i] * shrink;
        }
        if !interfaces.is_empty() && s % 2 == 1 {
            let (n, pos) = interfaces[(s / 2) % interfaces.len()];
            let side = if s % 4 == 1 { 1.0 } else { -1.0 };
            y[n] = pos + side * 1e-12 * (1.0 + pos.abs());
        }
        for &s in ts {
            best = best.max(eval(k, s, &y).abs());
        }
    }
    best
}

/// `∫_{ℝ^m} sup_t |b_k(t, S y)|` over the coordinates `act` (all others zero).
fn scaled_integral(eval: &ComponentEval<'_>, spec: &DriftSpec, k: usize, act: &[usize], scaling: &[f64], ts: &[f64]) -> Result<(f64, f64, IntegralMethod)> {
    let n_coords = act.iter().copied().max().map_or(0, |m| m + 1);
    let f = |z: &[f64]| -> f64 {
        let mut y = vec![0.0; n_coords];
        for (j, &c) in act.iter().enumerate() {
            y[c] = scaling[c] * z[j];
        }
        ts.iter().map(|&t| eval(k, t, &y).abs()).fold(0.0, f64::max)
    };
    let m = act.len();
    if m == 0 {
        return Ok((f(&[]), 0.0, IntegralMethod::Point));
    }
    // decay probe: an integrable section must fall faster than |z|^{-m}
    let far = 1e8;
    let scale0 = f(&vec![0.0; m]).max(1e-300);
    for j in 0..=m {
        let z: Vec<f64> = (0..m)
            .map(|i| if j == m || i == j { far } else { 0.0 })
            .collect();
        for sign in [1.0, -1.0] {
            let zs: Vec<f64> = z.iter().map(|v| v * sign).collect();
            if f(&zs) * far.powi(m as i32) > 1e-3 * scale0 {
                return Ok((f64::INFINITY, 0.0, IntegralMethod::Divergent));
            }
        }
    }
    // break points per axis: the origin and the interface, in z units
    let mut breaks: Vec<Vec<f64>> = vec![vec![0.0]; m];
    if let Component::Example(e) = &spec.components[k] {
        if let Region::HalfSpace { normal, offset } = e.region {
            if let Some(j) = act.iter().position(|&c| c == normal) {
                breaks[j].push(offset / (e.scale * scaling[normal]));
            }
        }
    }
    let length: Vec<f64> = act
        .iter()
        .map(|&c| match &spec.components[k] {
            Component::Example(e) => e.radius(1e-3) / scaling[c],
            Component::Bump { width, .. } => 3.0 * width / scaling[c],
            _ => 1.0 / scaling[c],
        })
        .collect();
    if m <= GH_MAX_DIM {
        let v = nested_line_integral(&f, m, &breaks, &length)?;
        Ok((v, 0.0, IntegralMethod::Tensor))
    } else {
        let (v, se) = laplace_mc(&f, &length, k as u64);
        Ok((v, se, IntegralMethod::MonteCarlo))
    }
}

/// Iterated adaptive quadrature over `ℝ^m`, each axis split at its break
/// points and mapped to finite intervals by `y = b ± L·u/(1-u)`.
fn nested_line_integral(f: &dyn Fn(&[f64]) -> f64, m: usize, breaks: &[Vec<f64>], length: &[f64]) -> Result<f64> {
    fn level(f: &dyn Fn(&[f64]) -> f64, prefix: &[f64], m: usize, breaks: &[Vec<f64>], length: &[f64]) -> Result<f64> {
        let j = prefix.len();
        if j == m {
            return Ok(f(prefix));
        }
        let inner = |y: f64| -> f64 {
            let mut z = prefix.to_vec();
            z.push(y);
            level(f, &z, m, breaks, length).unwrap_or(f64::NAN)
        };
        let run = |g: &dyn Fn(f64) -> f64, a: f64, b: f64| -> Result<f64> {
            let e = gauss_kronrod(g, a, b, 1e-13, 1e-8)?;
            if e.value.is_finite() {
                Ok(e.value)
            } else {
                Err(Error::Quadrature("non-finite inner integral".into()))
            }
        };
        let mut b = breaks[j].clone();
        b.sort_by(f64::total_cmp);
        b.dedup();
        let l = length[j];
        let (first, last) = (b[0], b[b.len() - 1]);
        let mut total = run(&|u: f64| inner(first - l * u / (1.0 - u)) * l / ((1.0 - u) * (1.0 - u)), 0.0, 1.0)?;
        for w in b.windows(2) {
            total += run(&inner, w[0], w[1])?;
        }
        total += run(&|u: f64| inner(last + l * u / (1.0 - u)) * l / ((1.0 - u) * (1.0 - u)), 0.0, 1.0)?;
        Ok(total)
    }
    level(f, &[], m, breaks, length)
}

/// Importance sampling from a product of Laplace densities with the given scales.
fn laplace_mc(f: &dyn Fn(&[f64]) -> f64, length: &[f64], stream: u64) -> (f64, f64) {
    let m = length.len();
    let mut rng = substream(0x1a91ace, AUX_COMPONENT, stream);
    let mut z = vec![0.0; m];
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..MC_SAMPLES {
        let mut dens = 1.0;
        for i in 0..m {
            // Laplace scale chosen wider than the envelope so the ratio stays bounded
            let b = length[i] * (m as f64).sqrt();
            let u: f64 = rng.random::<f64>() - 0.5;
            z[i] = -b * u.signum() * (1.0 - 2.0 * u.abs()).ln();
            dens *= (-z[i].abs() / b).exp() / (2.0 * b);
        }
        let w = f(&z) / dens;
        s += w;
        s2 += w * w;
    }
    let n = MC_SAMPLES as f64;
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}
