//! Shuffle permutations, simplex integrals, permanents and factorial bounds.

use crate::error::{invalid, Error, Result};
use crate::quad::gauss_legendre;
use crate::rng::Rng;
use crate::special::{binomial, factorial, ln_gamma};
use rand::Rng as _;

/// Largest `m + n` accepted by [`shuffle_enumerate`].
pub const SHUFFLE_MAX: usize = 12;

/// The shuffle permutations `𝒮(m, n)`.
///
/// Each permutation is stored as its position map: `perm[i]` is the
/// 1-based position `σ(i+1)` taken by element `i+1`, so that
/// `σ(1) < … < σ(m)` and `σ(m+1) < … < σ(m+n)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShuffleSet {
    pub m: usize,
    pub n: usize,
    pub permutations: Vec<Vec<usize>>,
}

impl ShuffleSet {
    /// `σ^{-1}`: the 1-based element sitting at each position.
    pub fn inverse(perm: &[usize]) -> Vec<usize> {
        let mut inv = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p - 1] = i + 1;
        }
        inv
    }

    /// Check block monotonicity, bijectivity and the cardinality.
    pub fn validate(&self) -> bool {
        let k = self.m + self.n;
        let ok = self.permutations.iter().all(|p| {
            let mut seen = vec![false; k];
            p.len() == k
                && p.iter().all(|&v| {
                    let fresh = (1..=k).contains(&v) && !seen[v - 1];
                    if fresh {
                        seen[v - 1] = true;
                    }
                    fresh
                })
                && p[..self.m].windows(2).all(|w| w[0] < w[1])
                && p[self.m..].windows(2).all(|w| w[0] < w[1])
        });
        let mut sorted = self.permutations.clone();
        sorted.sort();
        sorted.dedup();
        ok && sorted.len() == self.permutations.len() && self.permutations.len() as u64 == binomial(k as u64, self.n as u64)
    }
}

/// Enumerate `𝒮(m, n)` by choosing the positions of the first block.
pub fn shuffle_enumerate(m: usize, n: usize) -> Result<ShuffleSet> {
    if m == 0 || n == 0 {
        return Err(invalid("m", "both blocks need at least one element"));
    }
    if m + n > SHUFFLE_MAX {
        return Err(invalid("m", format!("m + n = {} exceeds the cap {SHUFFLE_MAX}", m + n)));
    }
    let k = m + n;
    let mut out = Vec::new();
    let mut chosen = Vec::with_capacity(m);
    fn rec(start: usize, k: usize, m: usize, chosen: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if chosen.len() == m {
            let mut perm = chosen.clone();
            perm.extend((1..=k).filter(|p| !chosen.contains(p)));
            out.push(perm);
            return;
        }
        for p in start..=k {
            chosen.push(p);
            rec(p + 1, k, m, chosen, out);
            chosen.pop();
        }
    }
    rec(1, k, m, &mut chosen, &mut out);
    Ok(ShuffleSet { m, n, permutations: out })
}

/// Scalar integrand on `[s, t]`.
pub type Integrand<'a> = &'a (dyn Fn(f64) -> f64 + Sync);

/// `∫_{s<u_1<…<u_k<t} g_1(u_1)⋯g_k(u_k) du` by nested Gauss–Legendre.
pub fn simplex_integral(gs: &[Integrand<'_>], s: f64, t: f64, points: usize) -> f64 {
    let rule = gauss_legendre(points);
    simplex_rec(gs, s, t, &rule)
}

fn simplex_rec(gs: &[Integrand<'_>], s: f64, t: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let Some((last, rest)) = gs.split_last() else {
        return 1.0;
    };
    let (c, h) = (0.5 * (s + t), 0.5 * (t - s));
    rule.0
        .iter()
        .zip(&rule.1)
        .map(|(x, w)| {
            let u = c + h * x;
            w * last(u) * simplex_rec(rest, s, u, rule)
        })
        .sum::<f64>()
        * h
}

/// Both sides of the shuffle identity and their gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShuffleCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    /// Standard error of the gap for the Monte Carlo variant, 0 otherwise.
    pub stderr: f64,
}

/// Largest `m + n` handled by nested quadrature.
pub const SHUFFLE_QUAD_MAX: usize = 5;

/// Compare the product of an `m`- and an `n`-simplex integral with the sum
/// over `𝒮(m, n)` of `(m+n)`-simplex integrals. `fs[0..m]` feed the first
/// block and `fs[m..m+n]` the second.
pub fn shuffle_integral_check(fs: &[Integrand<'_>], s: f64, t: f64, m: usize, n: usize, points: usize) -> Result<ShuffleCheck> {
    if fs.len() != m + n {
        return Err(invalid("fs", format!("{} functions for m + n = {}", fs.len(), m + n)));
    }
    if m + n > SHUFFLE_QUAD_MAX {
        return Err(invalid("m", "nested quadrature is capped at m + n = 5; use the Monte Carlo variant"));
    }
    let set = shuffle_enumerate(m, n)?;
    let lhs = simplex_integral(&fs[..m], s, t, points) * simplex_integral(&fs[m..], s, t, points);
    let rhs: f64 = set
        .permutations
        .iter()
        .map(|p| {
            let order: Vec<Integrand<'_>> = ShuffleSet::inverse(p).iter().map(|&e| fs[e - 1]).collect();
            simplex_integral(&order, s, t, points)
        })
        .sum();
    Ok(ShuffleCheck {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
        stderr: 0.0,
    })
}

/// Monte Carlo version for `m + n` beyond the quadrature cap.
pub fn shuffle_integral_check_mc(fs: &[Integrand<'_>], s: f64, t: f64, m: usize, n: usize, n_mc: usize, rng: &mut Rng) -> Result<ShuffleCheck> {
    if fs.len() != m + n {
        return Err(invalid("fs", format!("{} functions for m + n = {}", fs.len(), m + n)));
    }
    let set = shuffle_enumerate(m, n)?;
    let inverses: Vec<Vec<usize>> = set.permutations.iter().map(|p| ShuffleSet::inverse(p)).collect();
    let k = m + n;
    let vol = |j: usize| (t - s).powi(j as i32) / factorial(j as u64);
    let sorted = |j: usize, rng: &mut Rng| -> Vec<f64> {
        let mut u: Vec<f64> = (0..j).map(|_| s + (t - s) * rng.random::<f64>()).collect();
        u.sort_by(f64::total_cmp);
        u
    };
    let (mut sl, mut sr, mut sd, mut sdd) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..n_mc {
        let a = sorted(m, rng);
        let b = sorted(n, rng);
        let w = sorted(k, rng);
        let l = vol(m) * a.iter().enumerate().map(|(j, &u)| fs[j](u)).product::<f64>()
            * vol(n) * b.iter().enumerate().map(|(j, &u)| fs[m + j](u)).product::<f64>();
        let r = vol(k)
            * inverses
                .iter()
                .map(|inv| w.iter().zip(inv).map(|(&u, &e)| fs[e - 1](u)).product::<f64>())
                .sum::<f64>();
        sl += l;
        sr += r;
        sd += l - r;
        sdd += (l - r) * (l - r);
    }
    let nf = n_mc as f64;
    let mean = sd / nf;
    let var = (sdd / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
    Ok(ShuffleCheck {
        lhs: sl / nf,
        rhs: sr / nf,
        gap: mean.abs(),
        stderr: (var / nf).sqrt(),
    })
}

/// `Σ_{k_1..k_n ≤ d} Π a_{k_j}` by enumeration and `(Σ_{k≤d} a_k)^n`.
pub fn prod_sum_check(a: &[f64], n: usize, d: usize) -> Result<(f64, f64)> {
    if d > a.len() || n == 0 {
        return Err(invalid("d", "need 1 ≤ n and d ≤ len(a)"));
    }
    let terms = (d as f64).powi(n as i32);
    if terms > 1e6 {
        return Err(invalid("n", format!("{terms} terms exceed the enumeration cap 1e6")));
    }
    let mut idx = vec![0usize; n];
    let mut lhs = 0.0;
    loop {
        lhs += idx.iter().map(|&k| a[k]).product::<f64>();
        let mut j = 0;
        while j < n {
            idx[j] += 1;
            if idx[j] < d {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == n {
            break;
        }
    }
    Ok((lhs, a[..d].iter().sum::<f64>().powi(n as i32)))
}

/// Largest matrix accepted by [`permanent`].
pub const PERMANENT_MAX: usize = 12;

fn check_square(a: &[Vec<f64>], cap: usize) -> Result<usize> {
    let n = a.len();
    if a.iter().any(|r| r.len() != n) {
        return Err(invalid("matrix", "not square"));
    }
    if n > cap {
        return Err(invalid("matrix", format!("size {n} exceeds the cap {cap}")));
    }
    Ok(n)
}

/// Permanent by Ryser's formula with Gray-code updates.
pub fn permanent(a: &[Vec<f64>]) -> Result<f64> {
    let n = check_square(a, PERMANENT_MAX)?;
    if n == 0 {
        return Ok(1.0);
    }
    let mut row_sums = vec![0.0; n];
    let mut total = 0.0;
    let mut gray = 0u64;
    for k in 1..(1u64 << n) {
        let next = k ^ (k >> 1);
        let j = (gray ^ next).trailing_zeros() as usize;
        let add = next & (1 << j) != 0;
        for (i, r) in row_sums.iter_mut().enumerate() {
            if add {
                *r += a[i][j];
            } else {
                *r -= a[i][j];
            }
        }
        gray = next;
        let prod: f64 = row_sums.iter().product();
        if next.count_ones() % 2 == 0 {
            total += prod;
        } else {
            total -= prod;
        }
    }
    Ok(if n % 2 == 0 { total } else { -total })
}

/// Permanent by summing over all `n!` permutations.
pub fn permanent_brute_force(a: &[Vec<f64>]) -> Result<f64> {
    let n = check_square(a, 9)?;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    // Heap's algorithm
    let mut c = vec![0usize; n];
    total += (0..n).map(|i| a[i][perm[i]]).product::<f64>();
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            total += (0..n).map(|r| a[r][perm[r]]).product::<f64>();
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(total)
}

/// `ln` of both sides of `Π_k (2|α^{(k)}|)! ≤ √(2π)^d e^{|α|/2} Γ(5|α|/2+1)/√(5π|α|)`.
pub fn stirling_bound(block_norms: &[u64]) -> Result<(f64, f64)> {
    if block_norms.is_empty() || block_norms.iter().any(|&a| a == 0) {
        return Err(invalid("alpha", "every block needs |α^(k)| ≥ 1"));
    }
    let d = block_norms.len() as f64;
    let total: u64 = block_norms.iter().sum();
    let a = total as f64;
    let lhs: f64 = block_norms.iter().map(|&k| ln_gamma(2.0 * k as f64 + 1.0)).sum();
    let rhs = 0.5 * d * (2.0 * std::f64::consts::PI).ln() + 0.5 * a + ln_gamma(2.5 * a + 1.0) - 0.5 * (5.0 * std::f64::consts::PI * a).ln();
    Ok((lhs, rhs))
}

/// A `d × n` multi-index of non-negative integers, row `k` holding `α^{(k)}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndex {
    pub entries: Vec<Vec<u64>>,
}

impl MultiIndex {
    pub fn new(entries: Vec<Vec<u64>>) -> Result<Self> {
        let n = entries.first().map_or(0, Vec::len);
        if entries.iter().any(|r| r.len() != n) {
            return Err(Error::Domain("ragged multi-index".into()));
        }
        Ok(Self { entries })
    }

    /// `|α^{(k)}|` for each block.
    pub fn block_norms(&self) -> Vec<u64> {
        self.entries.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn norm(&self) -> u64 {
        self.block_norms().iter().sum()
    }
}

/// Check the factorial bound for a multi-index.
pub fn stirling_bound_check(alpha: &MultiIndex) -> Result<(f64, f64)> {
    if alpha.entries.len() > 8 {
        return Err(invalid("alpha", "at most 8 blocks"));
    }
    stirling_bound(&alpha.block_norms())
}
