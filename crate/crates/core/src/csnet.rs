//! Block functionals on completely symmetric norms and the quantized net
//! they induce.
//!
//! For `τ > 1` let `L` be the least integer with `n·τ^{−L} < 1 − τ^{−1}`. Each
//! nondecreasing `ψ: [L] → [n]` names the block vector with `τ^{−l}` on
//! coordinates `ψ(l−1) < j ≤ ψ(l)` (`ψ(0) = 0`), and `Φ_ψ(K)` is its norm.
//! Two bodies whose `Φ` agree within a factor `τ` at every `ψ` are within
//! Banach-Mazur distance `τ⁶`; [`build_net`] groups bodies by the cell of
//! `Θ = log Φ` on a grid of step `log τ`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_bigint::BigUint;
use rand::Rng;

use crate::math;
use crate::randmodel::Stream;
use crate::{Error, Result, Runner};

/// Default bound on `C(n+L, L)` for [`enumerate_psi`].
pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum CsFamily {
    /// `ℓ_p`, `1 ≤ p ≤ ∞` (`f64::INFINITY` for the max norm).
    Lp(f64),
    /// Sum of the `k` largest absolute coordinates.
    TopK(usize),
    /// `Σ wᵢ x*ᵢ` over the decreasing rearrangement, `w₁ = 1`.
    Lorentz(Vec<f64>),
}

/// A completely symmetric norm on `ℝⁿ` with `‖e₁‖ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsBody {
    dim: usize,
    family: CsFamily,
}

impl CsBody {
    pub fn lp(dim: usize, p: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be at least 1"));
        }
        if !(p >= 1.0) {
            return Err(Error::invalid(format!("l_p needs p >= 1, got {p}")));
        }
        Ok(Self { dim, family: CsFamily::Lp(p) })
    }

    pub fn top_k(dim: usize, k: usize) -> Result<Self> {
        if dim == 0 || k == 0 || k > dim {
            return Err(Error::invalid(format!("top-k needs 1 <= k <= n, got k = {k}, n = {dim}")));
        }
        Ok(Self { dim, family: CsFamily::TopK(k) })
    }

    /// Weights must be positive-leading, nonincreasing and nonnegative; they
    /// are rescaled so that the first is 1.
    pub fn lorentz(dim: usize, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || weights.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: weights.len() });
        }
        if !math::all_finite(&weights) || weights[0] <= 0.0 || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::invalid("Lorentz weights must be finite, nonnegative, with w1 > 0"));
        }
        if weights.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("Lorentz weights must be nonincreasing"));
        }
        let w0 = weights[0];
        Ok(Self { dim, family: CsFamily::Lorentz(weights.into_iter().map(|w| w / w0).collect()) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> &CsFamily {
        &self.family
    }

    /// Short identifier such as `lp:2`, `lp:inf`, `topk:3`, `lorentz`.
    pub fn tag(&self) -> String {
        match &self.family {
            CsFamily::Lp(p) if p.is_infinite() => String::from("lp:inf"),
            CsFamily::Lp(p) => format!("lp:{p}"),
            CsFamily::TopK(k) => format!("topk:{k}"),
            CsFamily::Lorentz(_) => String::from("lorentz"),
        }
    }

    pub fn norm(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        Ok(self.norm_unchecked(x))
    }

    fn norm_unchecked(&self, x: &[f64]) -> f64 {
        match &self.family {
            CsFamily::Lp(p) => lp_norm(x, *p),
            CsFamily::TopK(k) => {
                let mut a = abs_sorted_desc(x);
                a.truncate(*k);
                a.iter().sum()
            }
            CsFamily::Lorentz(w) => abs_sorted_desc(x).iter().zip(w).map(|(a, b)| a * b).sum(),
        }
    }
}

fn abs_sorted_desc(x: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    a.sort_by(|u, v| v.total_cmp(u));
    a
}

fn lp_norm(x: &[f64], p: f64) -> f64 {
    let m = math::norm_inf(x);
    if m == 0.0 || p.is_infinite() {
        return m;
    }
    if p == 1.0 {
        return math::norm1(x);
    }
    if p == 2.0 {
        return math::norm2(x);
    }
    let s: f64 = x.iter().map(|v| math::powf(v.abs() / m, p)).sum();
    m * math::powf(s, 1.0 / p)
}

/// `τ = num/den` exactly, with `den` a power of two.
fn dyadic(tau: f64) -> (BigUint, BigUint) {
    let bits = tau.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    let (mant, e) = if exp == 0 { (frac, -1074) } else { (frac | (1u64 << 52), exp - 1075) };
    if e >= 0 {
        (BigUint::from(mant) << (e as usize), BigUint::from(1u8))
    } else {
        (BigUint::from(mant), BigUint::from(1u8) << ((-e) as usize))
    }
}

/// Exact test of `n·τ^{−L} < 1 − τ^{−1}`, i.e. `n·den^L < num^{L−1}(num − den)`.
fn l_condition(n: usize, num: &BigUint, den: &BigUint, l: u32) -> bool {
    let lhs = BigUint::from(n) * den.pow(l);
    let rhs = num.pow(l - 1) * (num - den);
    lhs < rhs
}

const MAX_L: u32 = 20_000;

/// Least `L ≥ 1` with `n·τ^{−L} < 1 − τ^{−1}`, decided in exact rational arithmetic.
pub fn compute_l(n: usize, tau: f64) -> Result<u32> {
    if !(tau > 1.0) || !tau.is_finite() {
        return Err(Error::invalid(format!("tau must be a finite number > 1, got {tau}")));
    }
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    let estimate = math::ln(n as f64 / (1.0 - 1.0 / tau)) / math::ln(tau);
    if !(estimate < MAX_L as f64) {
        return Err(Error::invalid(format!("tau = {tau} is too close to 1 (L would exceed {MAX_L})")));
    }
    let (num, den) = dyadic(tau);
    let mut l = (math::floor(estimate).max(0.0) as u32).max(1);
    while l > 1 && l_condition(n, &num, &den, l - 1) {
        l -= 1;
    }
    while !l_condition(n, &num, &den, l) {
        l += 1;
    }
    Ok(l)
}

/// All nondecreasing `ψ: [L] → [n]`, stored as `[ψ(1), …, ψ(L)]` in
/// lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PsiFamily {
    pub n: usize,
    pub l: u32,
    pub maps: Vec<Vec<u32>>,
}

impl PsiFamily {
    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

/// Enumerates the family after checking `C(n+L, L) ≤ cap`.
pub fn enumerate_psi(n: usize, l: u32, cap: u128) -> Result<PsiFamily> {
    if n == 0 || l == 0 {
        return Err(Error::invalid("need n >= 1 and L >= 1"));
    }
    let guard = math::binomial((n + l as usize) as u64, l as u64).unwrap_or(u128::MAX);
    if guard > cap {
        return Err(Error::EnumerationCap { count: guard, cap });
    }
    let mut maps = Vec::new();
    let mut cur = vec![1u32; l as usize];
    let top = n as u32;
    loop {
        maps.push(cur.clone());
        // Advance the last position that can still grow, resetting the tail.
        let Some(pos) = (0..cur.len()).rev().find(|&i| cur[i] < top) else { break };
        let v = cur[pos] + 1;
        for c in cur.iter_mut().skip(pos) {
            *c = v;
        }
    }
    Ok(PsiFamily { n, l, maps })
}

/// The block vector of `ψ`: `τ^{−l}` on `ψ(l−1) < j ≤ ψ(l)`.
pub fn psi_vector(n: usize, psi: &[u32], tau: f64) -> Vec<f64> {
    let mut x = vec![0.0; n];
    let mut prev = 0usize;
    for (l, &p) in psi.iter().enumerate() {
        let v = math::powi(tau, -(l as i32 + 1));
        for xj in x.iter_mut().take(p as usize).skip(prev) {
            *xj = v;
        }
        prev = prev.max(p as usize);
    }
    x
}

fn check_psi(n: usize, psi: &[u32]) -> Result<()> {
    if psi.is_empty() || psi[0] < 1 || psi.iter().any(|&p| p as usize > n) || psi.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("psi must be nondecreasing with values in 1..=n"));
    }
    Ok(())
}

pub fn phi(k: &CsBody, psi: &[u32], tau: f64) -> Result<f64> {
    check_psi(k.dim(), psi)?;
    Ok(k.norm_unchecked(&psi_vector(k.dim(), psi, tau)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub values: Vec<f64>,
    /// Indices into the family where `Θ` falls outside `[−log τ², log n]`.
    pub out_of_range: Vec<usize>,
}

pub fn theta(k: &CsBody, family: &PsiFamily, tau: f64) -> Result<Theta> {
    if k.dim() != family.n {
        return Err(Error::DimensionMismatch { expected: family.n, found: k.dim() });
    }
    let lo = -2.0 * math::ln(tau);
    let hi = math::ln(family.n as f64);
    let mut values = Vec::with_capacity(family.len());
    let mut out_of_range = Vec::new();
    for (i, psi) in family.maps.iter().enumerate() {
        let f = k.norm_unchecked(&psi_vector(family.n, psi, tau));
        assert!(f > 0.0, "a norm is positive on a nonzero block vector");
        let t = math::ln(f);
        if t < lo || t > hi {
            out_of_range.push(i);
        }
        values.push(t);
    }
    Ok(Theta { values, out_of_range })
}

/// `floor((Θ + log τ²) / log τ)`.
pub fn cell_index(theta: &[f64], tau: f64) -> Vec<i64> {
    let lt = math::ln(tau);
    theta.iter().map(|t| math::floor((t + 2.0 * lt) / lt) as i64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetCell {
    pub index: Vec<i64>,
    /// Position of the representative in the input list (the first member).
    pub representative: usize,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetStats {
    pub bodies: usize,
    pub cells: usize,
    pub psi_count: usize,
    /// `|Y|·ln(⌊ln n / ln τ⌋ + 2)`, the log of the cell-count bound.
    pub ln_cell_bound: f64,
    /// `C·ln²n / ln τ`, the log-log of the separated-set bound, for the given `C`.
    pub ln_ln_separated_bound: f64,
    pub range_warnings: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsNet {
    pub tau: f64,
    pub l: u32,
    pub family: PsiFamily,
    /// Ordered by first appearance.
    pub cells: Vec<NetCell>,
    /// Cell position for each input body.
    pub assignment: Vec<usize>,
    pub theta: Vec<Vec<f64>>,
    pub stats: NetStats,
}

impl CsNet {
    pub fn representative_of(&self, body: usize) -> usize {
        self.cells[self.assignment[body]].representative
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetOptions {
    pub cap: u128,
    /// Constant in the annotated separated-set bound.
    pub big_c: f64,
}

impl Default for NetOptions {
    fn default() -> Self {
        Self { cap: DEFAULT_ENUMERATION_CAP, big_c: 1.0 }
    }
}

pub fn build_net<R: Runner>(bodies: &[CsBody], tau: f64, opts: &NetOptions, runner: &R) -> Result<CsNet> {
    let Some(first) = bodies.first() else {
        return Err(Error::invalid("need at least one body"));
    };
    let n = first.dim();
    if let Some(b) = bodies.iter().find(|b| b.dim() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: b.dim() });
    }
    let l = compute_l(n, tau)?;
    let family = enumerate_psi(n, l, opts.cap)?;
    let thetas: Vec<Theta> = runner.run(bodies.len(), |i| theta(&bodies[i], &family, tau)).into_iter().collect::<Result<_>>()?;

    let mut by_index: BTreeMap<Vec<i64>, usize> = BTreeMap::new();
    let mut cells: Vec<NetCell> = Vec::new();
    let mut assignment = Vec::with_capacity(bodies.len());
    for (i, th) in thetas.iter().enumerate() {
        let idx = cell_index(&th.values, tau);
        let pos = *by_index.entry(idx.clone()).or_insert_with(|| {
            cells.push(NetCell { index: idx, representative: i, members: Vec::new() });
            cells.len() - 1
        });
        cells[pos].members.push(i);
        assignment.push(pos);
    }
    let lt = math::ln(tau);
    let ln_n = math::ln(n as f64);
    let stats = NetStats {
        bodies: bodies.len(),
        cells: cells.len(),
        psi_count: family.len(),
        ln_cell_bound: family.len() as f64 * math::ln(math::floor(ln_n / lt) + 2.0),
        ln_ln_separated_bound: opts.big_c * ln_n * ln_n / lt,
        range_warnings: thetas.iter().map(|t| t.out_of_range.len()).sum(),
    };
    Ok(CsNet { tau, l, family, cells, assignment, theta: thetas.into_iter().map(|t| t.values).collect(), stats })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsiWitness {
    pub psi: Vec<u32>,
    pub phi_k: f64,
    pub phi_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    /// Whether `τ^{−1}Φ(D) ≤ Φ(K) ≤ τΦ(D)` holds at every `ψ`; if so `d(K, D) ≤ τ⁶`.
    pub granted: bool,
    /// First `ψ` violating the sandwich.
    pub witness: Option<PsiWitness>,
    /// Largest sampled `‖x‖_K/‖x‖_D` and `‖x‖_D/‖x‖_K`.
    pub max_ratio_kd: f64,
    pub max_ratio_dk: f64,
    pub samples: usize,
    /// Both sampled ratios are at most `τ³(1 + 1e-9)`.
    pub ratios_within_tau3: bool,
    pub distance_bound: f64,
}

/// Relative slack on the sandwich, covering rounding in `Φ`.
const SANDWICH_SLACK: f64 = 1e-12;

/// Checks the `Φ`-sandwich over the whole family and, when it holds, samples
/// norm ratios of the identity map.
pub fn certify_pair(k: &CsBody, d: &CsBody, family: &PsiFamily, tau: f64, samples: usize, stream: &Stream) -> Result<Certificate> {
    if k.dim() != d.dim() {
        return Err(Error::DimensionMismatch { expected: k.dim(), found: d.dim() });
    }
    if k.dim() != family.n {
        return Err(Error::DimensionMismatch { expected: family.n, found: k.dim() });
    }
    let n = k.dim();
    let mut witness = None;
    for psi in &family.maps {
        let v = psi_vector(n, psi, tau);
        let (fk, fd) = (k.norm_unchecked(&v), d.norm_unchecked(&v));
        let ok = fk <= tau * fd * (1.0 + SANDWICH_SLACK) && fd <= tau * fk * (1.0 + SANDWICH_SLACK);
        if !ok {
            witness = Some(PsiWitness { psi: psi.clone(), phi_k: fk, phi_d: fd });
            break;
        }
    }
    let (mut rkd, mut rdk) = (0.0f64, 0.0f64);
    let mut rng = stream.rng();
    for _ in 0..samples {
        let x = sample_probe(n, &mut rng);
        let (a, b) = (k.norm_unchecked(&x), d.norm_unchecked(&x));
        if a > 0.0 && b > 0.0 {
            rkd = rkd.max(a / b);
            rdk = rdk.max(b / a);
        }
    }
    let t3 = tau * tau * tau * (1.0 + 1e-9);
    let granted = witness.is_none();
    Ok(Certificate {
        granted,
        witness,
        max_ratio_kd: rkd,
        max_ratio_dk: rdk,
        samples,
        ratios_within_tau3: rkd <= t3 && rdk <= t3,
        distance_bound: if granted { math::powi(tau, 6) } else { f64::INFINITY },
    })
}

/// Random vector mixing dense, sparse and fast-decaying profiles.
fn sample_probe<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let shape = rng.random_range(0..4u8);
    let keep = rng.random_range(1..=n);
    let mut x: Vec<f64> = (0..n)
        .map(|_| {
            let u: f64 = rng.random_range(-1.0..1.0);
            match shape {
                0 => u,
                1 => u * u * u,
                2 => u.signum() * math::powf(u.abs(), 8.0),
                _ => u.signum(),
            }
        })
        .collect();
    for xj in x.iter_mut().skip(keep) {
        *xj = 0.0;
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    /// Values in `{0} ∪ {τ^{−l} : l ∈ [L]}` with `yⱼ ≤ xⱼ < τyⱼ` wherever `xⱼ ≥ τ^{−L}`
    /// (`xⱼ ≤ τyⱼ` when `xⱼ ≥ 1`).
    pub y: Vec<f64>,
    /// `y = τ^{−shift} · psi_vector(ψ)`, or `None` when `y = 0`.
    pub psi: Option<Vec<u32>>,
    pub shift: u32,
}

/// Rounds a nonincreasing nonnegative `x` down to powers `τ^{−l}`, zeroing
/// entries below `τ^{−L}`.
pub fn quantize(x: &[f64], tau: f64, l: u32) -> Result<Quantized> {
    if !(tau > 1.0) || l == 0 {
        return Err(Error::invalid("need tau > 1 and L >= 1"));
    }
    if !math::all_finite(x) || x.iter().any(|v| *v < 0.0) || x.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid("quantize expects a nonincreasing nonnegative vector"));
    }
    let n = x.len();
    let pow: Vec<f64> = (0..=l).map(|k| math::powi(tau, -(k as i32))).collect();
    let mut level = vec![0u32; n];
    let mut y = vec![0.0; n];
    for (j, &xj) in x.iter().enumerate() {
        if xj < pow[l as usize] {
            continue;
        }
        let mut k = 1u32;
        while k < l && pow[k as usize] > xj {
            k += 1;
        }
        level[j] = k;
        y[j] = pow[k as usize];
    }
    let support = level.iter().take_while(|k| **k > 0).count();
    if support == 0 {
        return Ok(Quantized { y, psi: None, shift: 0 });
    }
    // ψ(l) = #{j : level ≤ l}; drop leading empty blocks into the shift.
    let shift = level[0] - 1;
    let psi = (1..=l)
        .map(|b| {
            let lv = b + shift;
            level[..support].iter().filter(|k| **k <= lv).count() as u32
        })
        .collect();
    Ok(Quantized { y, psi: Some(psi), shift })
}
