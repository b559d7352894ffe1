//! Weighted cylindrical fBm truncated to finitely many coordinates.
//!
//! Parameter sequences are explicit heads followed by a closed-form tail, so
//! the summability constraints can be certified for the infinite sequence.

use std::io::{Read, Write};

use crate::error::{invalid, Error, Result};
use crate::fbm::{estimate_lnd_constant, CellRule, FbmSampler, HurstParam, SampleMethod};
use crate::grid::TimeGrid;
use crate::par;

/// Closed-form continuation of a sequence after its last explicit head `x_d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailRule {
    /// `x_k = 0` for `k > d`.
    Zero,
    /// `x_k = x_d ρ^{k-d}`.
    Geometric { ratio: f64 },
    /// `x_k = x_d (d/k)^p`.
    Power { exponent: f64 },
}

impl TailRule {
    fn value(self, last: f64, d: usize, k: usize) -> f64 {
        match self {
            TailRule::Zero => 0.0,
            TailRule::Geometric { ratio } => last * ratio.powi((k - d) as i32),
            TailRule::Power { exponent } => last * (d as f64 / k as f64).powf(exponent),
        }
    }

    /// Upper bound for `Σ_{k>d} x_k^q`, or `None` when the series diverges.
    fn tail_power_sum(self, last: f64, d: usize, q: f64) -> Option<f64> {
        match self {
            TailRule::Zero => Some(0.0),
            TailRule::Geometric { ratio } => {
                let r = ratio.powf(q);
                (r < 1.0).then(|| last.powf(q) * r / (1.0 - r))
            }
            TailRule::Power { exponent } => {
                let p = exponent * q;
                // Σ_{k>d} (d/k)^p ≤ ∫_d^∞ (d/x)^p dx = d/(p-1)
                (p > 1.0).then(|| last.powf(q) * d as f64 / (p - 1.0))
            }
        }
    }
}

/// Hurst indices `H_1 > H_2 > … ↘ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct HurstSequence {
    heads: Vec<HurstParam>,
    pub tail_rule: TailRule,
    /// `Σ_k H_k` including the analytic tail bound.
    pub partial_sum: f64,
    pub sup_value: f64,
}

/// Largest admissible `sup_k H_k`.
pub const HURST_SUP_LIMIT: f64 = 1.0 / 12.0;
/// Largest admissible `Σ_k H_k`.
pub const HURST_SUM_LIMIT: f64 = 1.0 / 6.0;

impl HurstSequence {
    pub fn new(heads: Vec<f64>, tail_rule: TailRule) -> Result<Self> {
        if heads.is_empty() {
            return Err(invalid("hurst", "needs at least one explicit value"));
        }
        let mut violations = Vec::new();
        let mut hp = Vec::with_capacity(heads.len());
        for (i, &h) in heads.iter().enumerate() {
            match HurstParam::new(h) {
                Ok(p) => hp.push(p),
                Err(_) => violations.push(format!("H_{} = {h} outside (0, 1/2)", i + 1)),
            }
        }
        if heads.windows(2).any(|w| w[1] >= w[0]) {
            violations.push("H_k strictly decreasing".to_string());
        }
        let tail_decreasing = match tail_rule {
            TailRule::Zero => false,
            TailRule::Geometric { ratio } => ratio > 0.0 && ratio < 1.0,
            TailRule::Power { exponent } => exponent > 0.0,
        };
        if !tail_decreasing {
            violations.push("tail must be positive and strictly decreasing to 0".to_string());
        }
        let sup_value = heads.iter().copied().fold(f64::MIN, f64::max);
        if sup_value >= HURST_SUP_LIMIT {
            violations.push(format!("sup_k H_k < 1/12 violated: sup = {sup_value}"));
        }
        let d = heads.len();
        let last = heads[d - 1];
        let head_sum: f64 = heads.iter().sum();
        let partial_sum = match tail_rule.tail_power_sum(last, d, 1.0) {
            Some(t) => head_sum + t,
            None => f64::INFINITY,
        };
        if partial_sum >= HURST_SUM_LIMIT {
            violations.push(format!("sum_k H_k < 1/6 violated: sum = {partial_sum}"));
        }
        if !violations.is_empty() {
            return Err(Error::Constraint(violations.join("; ")));
        }
        Ok(Self {
            heads: hp,
            tail_rule,
            partial_sum,
            sup_value,
        })
    }

    /// Number of explicit heads.
    pub fn d_max(&self) -> usize {
        self.heads.len()
    }

    pub fn heads(&self) -> &[HurstParam] {
        &self.heads
    }

    /// `H_k` for `k ≥ 1`, continuing with the tail rule.
    pub fn get(&self, k: usize) -> f64 {
        let d = self.heads.len();
        if k <= d {
            self.heads[k - 1].value()
        } else {
            self.tail_rule.value(self.heads[d - 1].value(), d, k)
        }
    }
}

/// Weights `λ_k ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSequence {
    heads: Vec<f64>,
    pub tail_rule: TailRule,
    /// `Σ λ_k²`.
    pub sum_squares: f64,
    /// `Σ λ_k / sqrt(H_k)`.
    pub sum_over_sqrt_h: f64,
}

impl WeightSequence {
    /// Validate against the Hurst sequence: `λ ∈ ℓ²` and `λ/√H ∈ ℓ¹`.
    pub fn new(heads: Vec<f64>, tail_rule: TailRule, hurst: &HurstSequence) -> Result<Self> {
        let d = heads.len();
        if d != hurst.d_max() {
            return Err(invalid(
                "lambda",
                format!("{d} explicit weights for {} Hurst indices", hurst.d_max()),
            ));
        }
        if let Some(v) = heads.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(invalid("lambda", format!("weights must be non-negative, got {v}")));
        }
        let mut violations = Vec::new();
        let last = heads[d - 1];
        let sq_tail = if last == 0.0 {
            Some(0.0)
        } else {
            tail_rule.tail_power_sum(last, d, 2.0)
        };
        let sum_squares = heads.iter().map(|v| v * v).sum::<f64>() + sq_tail.unwrap_or(f64::INFINITY);
        if !sum_squares.is_finite() {
            violations.push("sum_k lambda_k^2 < inf violated".to_string());
        }
        let ratio_tail = ratio_tail_bound(last, tail_rule, hurst);
        let head_ratio: f64 = heads
            .iter()
            .zip(hurst.heads())
            .map(|(l, h)| l / h.value().sqrt())
            .sum();
        let sum_over_sqrt_h = head_ratio + ratio_tail.unwrap_or(f64::INFINITY);
        if !sum_over_sqrt_h.is_finite() {
            violations.push("sum_k lambda_k / sqrt(H_k) < inf violated".to_string());
        }
        if !violations.is_empty() {
            return Err(Error::Constraint(violations.join("; ")));
        }
        Ok(Self {
            heads,
            tail_rule,
            sum_squares,
            sum_over_sqrt_h,
        })
    }

    pub fn heads(&self) -> &[f64] {
        &self.heads
    }

    pub fn get(&self, k: usize) -> f64 {
        let d = self.heads.len();
        if k <= d {
            self.heads[k - 1]
        } else {
            self.tail_rule.value(self.heads[d - 1], d, k)
        }
    }
}

/// Bound for `Σ_{k>d} λ_k/√H_k` from the two tail rules.
fn ratio_tail_bound(last_l: f64, lt: TailRule, hs: &HurstSequence) -> Option<f64> {
    if last_l == 0.0 || lt == TailRule::Zero {
        return Some(0.0);
    }
    let d = hs.d_max();
    let a = last_l / hs.get(d).sqrt();
    let df = d as f64;
    match (lt, hs.tail_rule) {
        (TailRule::Geometric { ratio: s }, TailRule::Geometric { ratio: r }) => {
            let q = s / r.sqrt();
            (q < 1.0).then(|| a * q / (1.0 - q))
        }
        (TailRule::Power { exponent: q }, TailRule::Power { exponent: p }) => {
            let e = q - p / 2.0;
            (e > 1.0).then(|| a * df / (e - 1.0))
        }
        (TailRule::Geometric { ratio: s }, TailRule::Power { exponent: p }) => {
            // successive ratios σ ((k+1)/k)^{p/2} are largest at k = d
            let q = s * ((df + 1.0) / df).powf(p / 2.0);
            (q < 1.0).then(|| a * q / (1.0 - q))
        }
        _ => None,
    }
}

/// Named ways of building both sequences.
#[derive(Debug, Clone, PartialEq)]
pub enum SequencePreset {
    /// `H_k = h1 ρ_H^{k-1}`, `λ_k = λ1 ρ_λ^{k-1}`, geometric tails.
    Geometric {
        h1: f64,
        h_ratio: f64,
        lambda1: f64,
        lambda_ratio: f64,
        d_max: usize,
    },
    /// `H_k ≡ h`, `λ_k ≡ λ` for all `k`.
    Constant { h: f64, lambda: f64, d_max: usize },
}

/// Build and validate the sequences of a preset.
pub fn make_sequences(preset: &SequencePreset) -> Result<(HurstSequence, WeightSequence)> {
    match *preset {
        SequencePreset::Geometric {
            h1,
            h_ratio,
            lambda1,
            lambda_ratio,
            d_max,
        } => {
            if d_max == 0 {
                return Err(invalid("d_max", "must be at least 1"));
            }
            let hs: Vec<f64> = (0..d_max).map(|k| h1 * h_ratio.powi(k as i32)).collect();
            let ls: Vec<f64> = (0..d_max).map(|k| lambda1 * lambda_ratio.powi(k as i32)).collect();
            let h = HurstSequence::new(hs, TailRule::Geometric { ratio: h_ratio })?;
            let w = WeightSequence::new(ls, TailRule::Geometric { ratio: lambda_ratio }, &h)?;
            Ok((h, w))
        }
        SequencePreset::Constant { h, lambda, d_max } => {
            if d_max == 0 {
                return Err(invalid("d_max", "must be at least 1"));
            }
            let hs = HurstSequence::new(vec![h; d_max], TailRule::Geometric { ratio: 1.0 })?;
            let w = WeightSequence::new(vec![lambda; d_max], TailRule::Geometric { ratio: 1.0 }, &hs)?;
            Ok((hs, w))
        }
    }
}

/// Path generator for the first `d` components.
pub struct CylSampler {
    pub grid: TimeGrid,
    pub hursts: Vec<HurstParam>,
    pub lambdas: Vec<f64>,
    samplers: Vec<FbmSampler>,
}

impl CylSampler {
    pub fn new(hs: &HurstSequence, ws: &WeightSequence, d: usize, grid: &TimeGrid) -> Result<Self> {
        Self::with_method(hs, ws, d, grid, SampleMethod::Kernel(CellRule::L2Cell))
    }

    pub fn with_method(
        hs: &HurstSequence,
        ws: &WeightSequence,
        d: usize,
        grid: &TimeGrid,
        method: SampleMethod,
    ) -> Result<Self> {
        if d == 0 || d > hs.d_max() {
            return Err(invalid("d", format!("must lie in 1..={}, got {d}", hs.d_max())));
        }
        let hursts: Vec<HurstParam> = hs.heads()[..d].to_vec();
        let samplers = par::map_indexed(d, |k| FbmSampler::new(hursts[k], grid, method))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid: grid.clone(),
            hursts,
            lambdas: ws.heads()[..d].to_vec(),
            samplers,
        })
    }

    pub fn d(&self) -> usize {
        self.samplers.len()
    }

    pub fn component(&self, k: usize) -> &FbmSampler {
        &self.samplers[k]
    }

    /// Standard normals of path `p` (`d × N`, component-major) and the
    /// weighted path (`d × (N+1)`, component-major).
    pub fn sample(&self, seed: u64, p: usize, z: &mut [f64], out: &mut [f64]) {
        let n = self.grid.n_cells();
        let w = n + 1;
        for k in 0..self.d() {
            let zk = &mut z[k * n..(k + 1) * n];
            FbmSampler::draw_normals(seed, k as u64, p as u64, zk);
            let ok = &mut out[k * w..(k + 1) * w];
            self.samplers[k].path_from_normals(zk, ok);
            let l = self.lambdas[k];
            for v in ok.iter_mut() {
                *v *= l;
            }
        }
    }
}

/// Truncated weighted cylindrical fBm ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct CylEnsemble {
    pub d: usize,
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub hursts: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// Path-major: `values[(p·d + k)·(N+1) + i]`.
    values: Vec<f64>,
}

impl CylEnsemble {
    pub fn width(&self) -> usize {
        self.grid.len()
    }

    /// Value of component `k` (from 0) at node `i` on path `p`.
    pub fn get(&self, k: usize, i: usize, p: usize) -> f64 {
        self.values[(p * self.d + k) * self.width() + i]
    }

    /// All components of path `p`, component-major `d × (N+1)`.
    pub fn path(&self, p: usize) -> &[f64] {
        let s = self.d * self.width();
        &self.values[p * s..(p + 1) * s]
    }

    pub fn path_mut(&mut self, p: usize) -> &mut [f64] {
        let s = self.d * self.width();
        &mut self.values[p * s..(p + 1) * s]
    }

    pub fn component_path(&self, k: usize, p: usize) -> &[f64] {
        let w = self.width();
        let start = (p * self.d + k) * w;
        &self.values[start..start + w]
    }

    /// The first `d'` components, as sampled with the same seed.
    pub fn truncate(&self, d: usize) -> Result<CylEnsemble> {
        if d == 0 || d > self.d {
            return Err(invalid("d", format!("must lie in 1..={}", self.d)));
        }
        let w = self.width();
        let mut values = Vec::with_capacity(self.n_paths * d * w);
        for p in 0..self.n_paths {
            values.extend_from_slice(&self.path(p)[..d * w]);
        }
        Ok(CylEnsemble {
            d,
            grid: self.grid.clone(),
            n_paths: self.n_paths,
            seed: self.seed,
            hursts: self.hursts[..d].to_vec(),
            lambdas: self.lambdas[..d].to_vec(),
            values,
        })
    }

    /// Coordinatewise scaling by a diagonal operator.
    pub fn apply_diag(&self, which: DiagOperator, lnd: &[f64]) -> Result<CylEnsemble> {
        let diag = diag_entries(which, &self.lambdas, lnd)?;
        let w = self.width();
        let mut out = self.clone();
        for (c, chunk) in out.values.chunks_mut(w).enumerate() {
            let f = diag[c % self.d];
            for v in chunk {
                *v *= f;
            }
        }
        Ok(out)
    }

    const MAGIC: &'static [u8; 8] = b"CYLFBM01";

    /// Flat binary layout, little endian: magic, then `d, N, paths, seed` as
    /// u64, `t_end` as f64, `H_k` and `λ_k` for each component, then the
    /// values row-major in `(component, node, path)` order.
    pub fn write_binary(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        for v in [self.d as u64, self.grid.n_cells() as u64, self.n_paths as u64, self.seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.grid.t_end().to_le_bytes())?;
        for v in self.hursts.iter().chain(&self.lambdas) {
            w.write_all(&v.to_le_bytes())?;
        }
        for k in 0..self.d {
            for i in 0..self.width() {
                for p in 0..self.n_paths {
                    w.write_all(&self.get(k, i, p).to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<CylEnsemble> {
        let io = |e: std::io::Error| Error::Domain(format!("ensemble read failed: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != Self::MAGIC {
            return Err(Error::Domain("not an ensemble file".into()));
        }
        let mut buf = [0u8; 8];
        let mut next = |r: &mut dyn Read| -> Result<[u8; 8]> {
            r.read_exact(&mut buf).map_err(io)?;
            Ok(buf)
        };
        let d = u64::from_le_bytes(next(&mut r)?) as usize;
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let n_paths = u64::from_le_bytes(next(&mut r)?) as usize;
        let seed = u64::from_le_bytes(next(&mut r)?);
        let t_end = f64::from_le_bytes(next(&mut r)?);
        let grid = TimeGrid::uniform(t_end, n)?;
        let mut hursts = Vec::with_capacity(d);
        for _ in 0..d {
            hursts.push(f64::from_le_bytes(next(&mut r)?));
        }
        let mut lambdas = Vec::with_capacity(d);
        for _ in 0..d {
            lambdas.push(f64::from_le_bytes(next(&mut r)?));
        }
        let w = n + 1;
        let mut values = vec![0.0; n_paths * d * w];
        for k in 0..d {
            for i in 0..w {
                for p in 0..n_paths {
                    values[(p * d + k) * w + i] = f64::from_le_bytes(next(&mut r)?);
                }
            }
        }
        Ok(CylEnsemble {
            d,
            grid,
            n_paths,
            seed,
            hursts,
            lambdas,
            values,
        })
    }

    /// CSV with columns `path,component,node,t,value`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "path,component,node,t,value")?;
        for p in 0..self.n_paths {
            for k in 0..self.d {
                for i in 0..self.width() {
                    writeln!(
                        w,
                        "{p},{},{i},{:.16e},{:.16e}",
                        k + 1,
                        self.grid.node(i),
                        self.get(k, i, p)
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Sample `n_paths` paths of the first `d` components. Component `k` uses
/// substream `k`, so truncations of one seed agree path by path.
pub fn sample_cyl_fbm(
    hs: &HurstSequence,
    ws: &WeightSequence,
    d: usize,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<CylEnsemble> {
    let sampler = CylSampler::new(hs, ws, d, grid)?;
    sample_with(&sampler, n_paths, seed)
}

pub fn sample_with(sampler: &CylSampler, n_paths: usize, seed: u64) -> Result<CylEnsemble> {
    if n_paths == 0 {
        return Err(invalid("n_paths", "must be at least 1"));
    }
    let d = sampler.d();
    let n = sampler.grid.n_cells();
    let rows = par::map_indexed(n_paths, |p| {
        let mut z = vec![0.0; d * n];
        let mut out = vec![0.0; d * (n + 1)];
        sampler.sample(seed, p, &mut z, &mut out);
        out
    });
    Ok(CylEnsemble {
        d,
        grid: sampler.grid.clone(),
        n_paths,
        seed,
        hursts: sampler.hursts.iter().map(|h| h.value()).collect(),
        lambdas: sampler.lambdas.clone(),
        values: rows.concat(),
    })
}

/// Diagonal operators acting coordinatewise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagOperator {
    /// `√Q`: multiply by `λ_k`.
    QSqrt,
    /// `√𝒦`: multiply by `sqrt(𝔎_{H_k})`.
    KSqrt,
    QSqrtInv,
    KSqrtInv,
}

fn diag_entries(which: DiagOperator, lambdas: &[f64], lnd: &[f64]) -> Result<Vec<f64>> {
    let d = lambdas.len();
    if matches!(which, DiagOperator::KSqrt | DiagOperator::KSqrtInv) && lnd.len() < d {
        return Err(invalid("lnd", format!("need {d} constants, got {}", lnd.len())));
    }
    (0..d)
        .map(|k| {
            let v = match which {
                DiagOperator::QSqrt | DiagOperator::QSqrtInv => lambdas[k],
                DiagOperator::KSqrt | DiagOperator::KSqrtInv => lnd[k].sqrt(),
            };
            match which {
                DiagOperator::QSqrt | DiagOperator::KSqrt => Ok(v),
                _ if v == 0.0 || !v.is_finite() => Err(invalid(
                    "diagonal",
                    format!("entry {} is {v}, operator not invertible", k + 1),
                )),
                _ => Ok(1.0 / v),
            }
        })
        .collect()
}

/// Apply a diagonal operator to a coordinate vector `y` (length `d`).
pub fn apply_diag_operator(which: DiagOperator, y: &[f64], lambdas: &[f64], lnd: &[f64]) -> Result<Vec<f64>> {
    let diag = diag_entries(which, &lambdas[..y.len().min(lambdas.len())], lnd)?;
    if diag.len() < y.len() {
        return Err(invalid("y", "longer than the weight sequence"));
    }
    Ok(y.iter().zip(&diag).map(|(a, b)| a * b).collect())
}

/// Change of basis `τ` between `H` coordinates and `ℓ²` coordinates. Both
/// bases are orthonormal and indexed alike, so this is the identity map.
pub fn tau(y: &[f64]) -> Vec<f64> {
    y.to_vec()
}

pub fn tau_inv(z: &[f64]) -> Vec<f64> {
    z.to_vec()
}

/// Truncation `π_d`: zero every coordinate from index `d` on.
pub fn pi_d(y: &[f64], d: usize) -> Vec<f64> {
    y.iter()
        .enumerate()
        .map(|(i, &v)| if i < d { v } else { 0.0 })
        .collect()
}

/// Per-component local non-determinism constants `𝔎_{H_k}` estimated on
/// `grid` at distance `r`.
pub fn lnd_constants(hs: &HurstSequence, d: usize, grid: &TimeGrid, r: f64) -> Result<Vec<f64>> {
    hs.heads()[..d.min(hs.d_max())]
        .iter()
        .map(|&h| estimate_lnd_constant(h, grid, r).map(|c| c.estimate))
        .collect()
}

/// Monte Carlo estimate of `E sup_t ‖𝔹_t‖` with its reference scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupNormDiagnostic {
    pub estimate: f64,
    pub stderr: f64,
    /// `Σ_{k ≤ d} λ_k / sqrt(H_k)`.
    pub reference: f64,
}

impl SupNormDiagnostic {
    pub fn ratio(&self) -> f64 {
        if self.reference == 0.0 {
            0.0
        } else {
            self.estimate / self.reference
        }
    }
}

pub fn sup_norm_diagnostic(ens: &CylEnsemble) -> SupNormDiagnostic {
    let w = ens.width();
    let (s, s2) = par::fold_chunks(
        ens.n_paths,
        || (0.0, 0.0),
        |acc, p| {
            let path = ens.path(p);
            let m = (0..w)
                .map(|i| (0..ens.d).map(|k| path[k * w + i].powi(2)).sum::<f64>())
                .fold(0.0, f64::max)
                .sqrt();
            acc.0 += m;
            acc.1 += m * m;
        },
        |a, b| {
            a.0 += b.0;
            a.1 += b.1;
        },
    );
    let n = ens.n_paths as f64;
    let mean = s / n;
    let var = if ens.n_paths > 1 {
        ((s2 - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    let reference = ens
        .lambdas
        .iter()
        .zip(&ens.hursts)
        .map(|(l, h)| l / h.sqrt())
        .sum();
    SupNormDiagnostic {
        estimate: mean,
        stderr: (var / n).sqrt(),
        reference,
    }
}
