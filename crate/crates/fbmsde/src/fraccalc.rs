//! Riemann–Liouville fractional calculus on uniform grids.
//!
//! Integrals use product integration: the data are interpolated piecewise
//! linearly and the kernel `(x - y)^{α-1}` is integrated exactly on each
//! cell. The default derivative inverts that discrete integral exactly
//! (product-integration solution of the Abel equation), so the two discrete
//! operators are mutual inverses; the Marchaud-type rule is kept as an
//! alternative.

use crate::error::{invalid, Error, Result};
use crate::fbm::HurstParam;
use crate::grid::{GridFunction, TimeGrid};
use crate::par;
use crate::quad::gauss_kronrod;
use crate::special::{beta, beta_reg, gamma};

/// Order `α` of a fractional operator.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct FracOrder(f64);

impl FracOrder {
    /// Order for an integral: `α > 0`.
    pub fn integral(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha.is_finite() {
            Ok(Self(alpha))
        } else {
            Err(invalid("alpha", format!("integral order must be positive, got {alpha}")))
        }
    }

    /// Order for a derivative: `0 < α < 1`.
    pub fn derivative(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self(alpha))
        } else {
            Err(invalid("alpha", format!("derivative order must lie in (0, 1), got {alpha}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Left-sided operators integrate from the first node, right-sided ones
/// towards the last node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Derivative discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DerivativeRule {
    /// Exact inverse of the discrete fractional integral.
    #[default]
    AbelInversion,
    /// Marchaud representation with exact cell kernel integrals.
    Marchaud,
}

/// Derivative values with a flag for values that blew up (node 0 when `f(0) ≠ 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct FracDerivative {
    pub function: GridFunction,
    pub non_finite: bool,
}

fn reflect(v: &[f64]) -> Vec<f64> {
    v.iter().rev().copied().collect()
}

/// Product-trapezoid weights `a_{j,n}` for `I^α` at node `n`, scaled by
/// `h^α / Γ(α+2)` by the caller.
struct TrapWeights {
    alpha: f64,
    /// `k^{α+1}` for `k = 0..=N`.
    pw: Vec<f64>,
}

impl TrapWeights {
    fn new(alpha: f64, n: usize) -> Self {
        let pw = (0..=n).map(|k| (k as f64).powf(alpha + 1.0)).collect();
        Self { alpha, pw }
    }

    fn first(&self, n: usize) -> f64 {
        let nf = n as f64;
        self.pw[n - 1] - (nf - self.alpha - 1.0) * nf.powf(self.alpha)
    }

    /// Weight of node `j` with `1 ≤ j < n`, depends on `k = n - j ≥ 1`.
    fn interior(&self, k: usize) -> f64 {
        self.pw[k + 1] - 2.0 * self.pw[k] + self.pw[k - 1]
    }
}

fn integral_left(alpha: f64, h: f64, f: &[f64]) -> Vec<f64> {
    let n = f.len() - 1;
    let w = TrapWeights::new(alpha, n);
    let scale = h.powf(alpha) / gamma(alpha + 2.0);
    let mut out = vec![0.0; n + 1];
    for m in 1..=n {
        let mut s = w.first(m) * f[0] + f[m];
        for j in 1..m {
            s += w.interior(m - j) * f[j];
        }
        out[m] = s * scale;
    }
    out
}

/// Riemann–Liouville fractional integral `I^α f` on the grid of `f`.
pub fn frac_integral(alpha: FracOrder, f: &GridFunction, side: Side) -> GridFunction {
    let h = f.grid.step();
    let values = match side {
        Side::Left => integral_left(alpha.0, h, &f.values),
        Side::Right => reflect(&integral_left(alpha.0, h, &reflect(&f.values))),
    };
    GridFunction {
        grid: f.grid.clone(),
        values,
    }
}

fn abel_left(alpha: f64, h: f64, f: &[f64]) -> (Vec<f64>, bool) {
    let n = f.len() - 1;
    let f0 = f[0];
    let r: Vec<f64> = f.iter().map(|v| v - f0).collect();
    let w = TrapWeights::new(alpha, n);
    let inv_scale = gamma(alpha + 2.0) / h.powf(alpha);
    // Start value from r ≈ φ0 x^α/Γ(α+1) + φ1 x^{α+1}/Γ(α+2) at the first two nodes.
    let g1 = gamma(alpha + 1.0);
    let g2 = gamma(alpha + 2.0);
    let (a11, a12) = (h.powf(alpha) / g1, h.powf(alpha + 1.0) / g2);
    let (a21, a22) = ((2.0 * h).powf(alpha) / g1, (2.0 * h).powf(alpha + 1.0) / g2);
    let det = a11 * a22 - a12 * a21;
    let phi0 = (r[1] * a22 - a12 * r[2]) / det;
    let mut phi = vec![0.0; n + 1];
    phi[0] = phi0;
    for m in 1..=n {
        let mut s = w.first(m) * phi[0];
        for j in 1..m {
            s += w.interior(m - j) * phi[j];
        }
        phi[m] = r[m] * inv_scale - s;
    }
    let c = f0 / gamma(1.0 - alpha);
    for (m, p) in phi.iter_mut().enumerate().skip(1) {
        *p += c * (m as f64 * h).powf(-alpha);
    }
    let blown = f0 != 0.0;
    if blown {
        phi[0] = f64::INFINITY.copysign(f0);
    }
    (phi, blown)
}

fn marchaud_left(alpha: f64, h: f64, f: &[f64]) -> (Vec<f64>, bool) {
    let n = f.len() - 1;
    let g = gamma(1.0 - alpha);
    let mut out = vec![0.0; n + 1];
    for m in 1..=n {
        let x = m as f64 * h;
        let mut s = 0.0;
        for j in 0..m {
            let a = x - (j + 1) as f64 * h;
            let b = x - j as f64 * h;
            let c1 = -(f[j] - f[j + 1]) / h;
            let c0 = f[m] - f[j + 1] + (f[j] - f[j + 1]) * a / h;
            if j + 1 < m {
                s += c0 * (a.powf(-alpha) - b.powf(-alpha)) / alpha;
                s += c1 * (b.powf(1.0 - alpha) - a.powf(1.0 - alpha)) / (1.0 - alpha);
            } else {
                s += c1 * b.powf(1.0 - alpha) / (1.0 - alpha);
            }
        }
        out[m] = (f[m] / x.powf(alpha) + alpha * s) / g;
    }
    let blown = f[0] != 0.0;
    out[0] = if blown {
        f64::INFINITY.copysign(f[0])
    } else {
        2.0 * out[1] - out[2]
    };
    (out, blown)
}

/// Fractional derivative `D^α f`, `0 < α < 1`, with the default rule.
pub fn frac_derivative(alpha: FracOrder, f: &GridFunction, side: Side) -> Result<FracDerivative> {
    frac_derivative_with(alpha, f, side, DerivativeRule::default())
}

pub fn frac_derivative_with(
    alpha: FracOrder,
    f: &GridFunction,
    side: Side,
    rule: DerivativeRule,
) -> Result<FracDerivative> {
    let a = FracOrder::derivative(alpha.0)?.0;
    if f.grid.n_cells() < 2 {
        return Err(invalid("f", "derivative needs at least two cells"));
    }
    let h = f.grid.step();
    let run = |v: &[f64]| match rule {
        DerivativeRule::AbelInversion => abel_left(a, h, v),
        DerivativeRule::Marchaud => marchaud_left(a, h, v),
    };
    let (values, non_finite) = match side {
        Side::Left => run(&f.values),
        Side::Right => {
            let (v, b) = run(&reflect(&f.values));
            (reflect(&v), b)
        }
    };
    if values.iter().skip(1).any(|v| !v.is_finite()) && !non_finite {
        return Err(Error::NonFinite("fractional derivative".into()));
    }
    Ok(FracDerivative {
        function: GridFunction {
            grid: f.grid.clone(),
            values,
        },
        non_finite,
    })
}

/// `K_H φ = I^{2H} s^{1/2-H} I^{1/2-H} s^{H-1/2} φ`.
///
/// The value `φ(0)` is propagated through the inner integral in closed form
/// (`I^{1/2-H} s^{H-1/2} = Γ(H+1/2)`); the remainder vanishes at 0, so node 0
/// of every weighted stage takes the limit value 0.
pub fn kh_operator(h: HurstParam, phi: &GridFunction) -> GridFunction {
    let hv = h.value();
    let nodes = phi.grid.nodes().to_vec();
    let p0 = phi.values[0];
    let rem: Vec<f64> = nodes
        .iter()
        .zip(&phi.values)
        .map(|(&s, &v)| if s > 0.0 { s.powf(hv - 0.5) * (v - p0) } else { 0.0 })
        .collect();
    let inner = frac_integral(
        FracOrder(0.5 - hv),
        &GridFunction {
            grid: phi.grid.clone(),
            values: rem,
        },
        Side::Left,
    );
    // Outer stage: g = inner + Γ(H+1/2)φ(0) is split at g(0) again, with
    // I^{2H} s^{1/2-H} = Γ(3/2-H)/Γ(3/2+H) s^{1/2+H}.
    let g0 = p0 * gamma(hv + 0.5) + inner.values[0];
    let mid: Vec<f64> = nodes
        .iter()
        .zip(&inner.values)
        .map(|(&s, &v)| if s > 0.0 { s.powf(0.5 - hv) * (v - inner.values[0]) } else { 0.0 })
        .collect();
    let outer = frac_integral(
        FracOrder(2.0 * hv),
        &GridFunction {
            grid: phi.grid.clone(),
            values: mid,
        },
        Side::Left,
    );
    let k = g0 * gamma(1.5 - hv) / gamma(1.5 + hv);
    let values = nodes
        .iter()
        .zip(&outer.values)
        .map(|(&s, &v)| v + k * s.powf(0.5 + hv))
        .collect();
    GridFunction {
        grid: phi.grid.clone(),
        values,
    }
}

/// `K_H^{-1} φ = s^{H-1/2} I^{1/2-H} s^{1/2-H} φ'` from the derivative `φ'`.
///
/// The constant part `φ'(0)` is integrated in closed form; node 0 carries the
/// right limit 0.
pub fn kh_inverse_ac(h: HurstParam, phi_prime: &GridFunction) -> GridFunction {
    let hv = h.value();
    let a = 0.5 - hv;
    let nodes = phi_prime.grid.nodes().to_vec();
    let d0 = phi_prime.values[0];
    let rem: Vec<f64> = nodes
        .iter()
        .zip(&phi_prime.values)
        .map(|(&s, &v)| s.powf(a) * (v - d0))
        .collect();
    let inner = frac_integral(
        FracOrder(a),
        &GridFunction {
            grid: phi_prime.grid.clone(),
            values: rem,
        },
        Side::Left,
    );
    // I^a s^a = Γ(a+1)/Γ(2a+1) s^{2a}
    let k = d0 * gamma(a + 1.0) / gamma(2.0 * a + 1.0);
    let values = nodes
        .iter()
        .zip(&inner.values)
        .map(|(&s, &v)| {
            if s > 0.0 {
                s.powf(-a) * v + k * s.powf(a)
            } else {
                0.0
            }
        })
        .collect();
    GridFunction {
        grid: phi_prime.grid.clone(),
        values,
    }
}

/// `K_H^{-1} φ` with `φ'` from second-order finite differences.
///
/// Images of functions with `g(0) ≠ 0` start like `k s^{H+1/2}`, whose
/// derivative is singular at 0. That term is estimated from the first two
/// nodes (`φ/s^{H+1/2} = k + O(s)`, Richardson) and inverted exactly; only the
/// remainder goes through the finite differences.
pub fn kh_inverse(h: HurstParam, phi: &GridFunction) -> GridFunction {
    let hv = h.value();
    let p = hv + 0.5;
    let nodes = phi.grid.nodes();
    let k = if nodes.len() > 2 {
        let r1 = phi.values[1] / nodes[1].powf(p);
        let r2 = phi.values[2] / nodes[2].powf(p);
        2.0 * r1 - r2
    } else {
        0.0
    };
    let rest = phi.map(|s, v| v - k * s.powf(p));
    // K_H 1 = Γ(H+1/2) Γ(3/2-H) / Γ(H+3/2) s^{H+1/2}
    let c0 = k * gamma(hv + 1.5) / (gamma(hv + 0.5) * gamma(1.5 - hv));
    let mut out = kh_inverse_ac(h, &rest.derivative());
    out.values.iter_mut().for_each(|v| *v += c0);
    out
}

/// Discrete `K_H^{-1}(∫_0^· u)` for piecewise-constant `u`.
///
/// With `u = u_l` on cell `l`, the cell average over cell `j` of
/// `kh_inverse_ac(u)` is `Σ_{l ≤ j} W_jl u_l`. The matrix is stored packed
/// by rows like [`crate::fbm::KernelMatrix`].
#[derive(Debug, Clone)]
pub struct CellInverse {
    pub h: HurstParam,
    pub grid: TimeGrid,
    entries: Vec<f64>,
}

impl CellInverse {
    pub fn n(&self) -> usize {
        self.grid.n_cells()
    }

    /// Row `j` (cell `j`, `1 ≤ j ≤ N`), entries for cells `1..=j`.
    pub fn row(&self, j: usize) -> &[f64] {
        let start = (j - 1) * j / 2;
        &self.entries[start..start + j]
    }

    /// `v_j = Σ_l W_jl u_l`, both indexed by cell from 0.
    pub fn apply(&self, u: &[f64], v: &mut [f64]) {
        for j in 1..=self.n() {
            v[j - 1] = self.row(j).iter().zip(&u[..j]).map(|(w, x)| w * x).sum();
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for e in &mut self.entries {
            *e *= factor;
        }
    }
}

/// Build the cell-averaged inverse matrix for `H` on `grid`.
pub fn kh_inverse_cells(h: HurstParam, grid: &TimeGrid) -> Result<CellInverse> {
    let hv = h.value();
    let (p, q) = (1.5 - hv, 0.5 - hv);
    let bpq = beta(p, q);
    // ∫_a^b z^{1/2-H} (1-z)^{-1/2-H} dz for 0 ≤ a ≤ b ≤ 1
    let seg = move |a: f64, b: f64| -> f64 {
        if b <= 0.5 {
            bpq * (beta_reg(p, q, b) - beta_reg(p, q, a))
        } else {
            bpq * (beta_reg(q, p, 1.0 - a) - beta_reg(q, p, 1.0 - b))
        }
    };
    let n = grid.n_cells();
    let step = grid.step();
    let t = grid.nodes().to_vec();
    let norm = 1.0 / (step * gamma(q));
    let rows = par::map_indexed(n, |r| -> Result<Vec<f64>> {
        let j = r + 1;
        let (lo, hi) = (t[j - 1], t[j]);
        let mut row = Vec::with_capacity(j);
        for l in 1..=j {
            let e = gauss_kronrod(
                |s| {
                    let upper = if l == j { 1.0 } else { t[l] / s };
                    s.powf(q) * seg(t[l - 1] / s, upper)
                },
                lo,
                hi,
                0.0,
                1e-10,
            )?;
            row.push(e.value * norm);
        }
        Ok(row)
    });
    let mut entries = Vec::with_capacity(n * (n + 1) / 2);
    for r in rows {
        entries.extend(r?);
    }
    Ok(CellInverse {
        h,
        grid: grid.clone(),
        entries,
    })
}
