//! Monte Carlo tails for quadratic forms and norms of randomly restricted
//! sign vectors.
//!
//! Trials are split into fixed-size batches; batch `b` draws from
//! `stream/batch/b`, and batches are combined by integer counts and
//! index-ordered sums, so results do not depend on how a [`Runner`] schedules
//! them.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{spectral_norm, DenseMatrix};
use crate::math;
use crate::randmodel::{sample_test_vector, Stream, TestVector};
use crate::{Error, Result, Runner};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.5758293035489004;

/// Wilson score interval `(centre, half_width)` for `k` successes in `n` trials.
pub fn wilson(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.5, 0.5);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * math::sqrt(p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)) / denom;
    (centre, half)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub trials: u64,
    pub batch_size: u64,
    /// Constant used when evaluating the bound shapes.
    pub constant: f64,
    /// Trials used to size the default threshold grid.
    pub pilot_trials: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { trials: 100_000, batch_size: 4096, constant: 1.0, pilot_trials: 2000 }
    }
}

impl McConfig {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("trials must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if !(self.constant > 0.0 && self.constant.is_finite()) {
            return Err(Error::invalid("bound constant must be positive"));
        }
        Ok(())
    }

    fn batches(&self) -> usize {
        self.trials.div_ceil(self.batch_size) as usize
    }

    fn batch_len(&self, b: usize) -> u64 {
        let start = b as u64 * self.batch_size;
        self.batch_size.min(self.trials - start)
    }
}

/// Empirical `P(statistic ≥ t)` over a threshold grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TailCurve {
    /// Ascending.
    pub thresholds: Vec<f64>,
    pub exceed: Vec<u64>,
    pub p_hat: Vec<f64>,
    /// 99% Wilson half-widths around `wilson_centre`.
    pub half_width: Vec<f64>,
    pub wilson_centre: Vec<f64>,
    pub trials: u64,
    /// Bound shape exponent `g(t)`; the bound is `2·exp(−c·g(t))`.
    pub exponent: Vec<f64>,
    pub bound: Vec<f64>,
    pub constant: f64,
    /// Thresholds where the bound is claimed; others are reported but not compared.
    pub admissible: Vec<bool>,
    /// Largest `c` with `2·exp(−c·g(t)) ≥ p̂(t)` at every admissible `t`;
    /// `None` when no admissible point has `p̂ > 0`.
    pub fitted_constant: Option<f64>,
}

impl TailCurve {
    fn from_counts(thresholds: Vec<f64>, exceed: Vec<u64>, trials: u64, exponent: Vec<f64>, admissible: Vec<bool>, c: f64) -> Self {
        let mut p_hat = Vec::with_capacity(exceed.len());
        let mut half_width = Vec::with_capacity(exceed.len());
        let mut wilson_centre = Vec::with_capacity(exceed.len());
        for &k in &exceed {
            p_hat.push(k as f64 / trials as f64);
            let (centre, h) = wilson(k, trials, Z99);
            wilson_centre.push(centre);
            half_width.push(h);
        }
        let bound = exponent.iter().map(|g| (2.0 * math::exp(-c * g)).min(1.0)).collect();
        let fitted_constant = fit_constant(&p_hat, &exponent, &admissible);
        Self { thresholds, exceed, p_hat, half_width, wilson_centre, trials, exponent, bound, constant: c, admissible, fitted_constant }
    }

    pub fn band(&self, i: usize) -> (f64, f64) {
        let c = self.wilson_centre[i];
        let h = self.half_width[i];
        ((c - h).max(0.0), (c + h).min(1.0))
    }

    /// Whether `p` lies inside the 99% band at threshold `i`.
    pub fn within_band(&self, i: usize, p: f64) -> bool {
        let (lo, hi) = self.band(i);
        lo - 1e-12 <= p && p <= hi + 1e-12
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }
}

/// `min ln(2/p̂)/g` over admissible points with `p̂ > 0` and `g > 0`.
pub fn fit_constant(p_hat: &[f64], exponent: &[f64], admissible: &[bool]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for ((&p, &g), &ok) in p_hat.iter().zip(exponent).zip(admissible) {
        if !ok || p <= 0.0 || g <= 0.0 {
            continue;
        }
        let c = math::ln(2.0 / p) / g;
        best = Some(best.map_or(c, |b: f64| b.min(c)));
    }
    best
}

/// Slope of `ln(−ln p̂)` against `ln t` over admissible points with
/// `0 < p̂ ≤ 1/2`; about 2 for Gaussian-type tails, 1 for exponential ones.
pub fn tail_decay_exponent(curve: &TailCurve) -> Option<f64> {
    let pts: Vec<(f64, f64)> = curve
        .thresholds
        .iter()
        .zip(&curve.p_hat)
        .zip(&curve.admissible)
        .filter(|((t, p), ok)| **ok && **t > 0.0 && **p > 0.0 && **p <= 0.5)
        .map(|((t, p), _)| (math::ln(*t), math::ln(-math::ln(*p))))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

/// `count` log-spaced points on `[0.1σ, 10σ]`.
pub fn default_thresholds(sigma: f64, count: usize) -> Vec<f64> {
    let s = if sigma > 0.0 && sigma.is_finite() { sigma } else { 1.0 };
    let (a, b) = (math::ln(0.1 * s), math::ln(10.0 * s));
    if count == 1 {
        return vec![s];
    }
    (0..count).map(|i| math::exp(a + (b - a) * i as f64 / (count - 1) as f64)).collect()
}

const GRID_POINTS: usize = 32;

fn prepare_thresholds(thresholds: Option<Vec<f64>>, pilot: impl FnOnce() -> f64) -> Result<Vec<f64>> {
    let mut t = match thresholds {
        Some(t) => t,
        None => default_thresholds(pilot(), GRID_POINTS),
    };
    if t.is_empty() || !math::all_finite(&t) {
        return Err(Error::invalid("thresholds must be finite and non-empty"));
    }
    t.sort_by(f64::total_cmp);
    Ok(t)
}

/// `counts[i] = #{trials with statistic ≥ thresholds[i]}` from per-trial
/// bucket indices `#{t ≤ s}`.
fn suffix_counts(buckets: &[u64]) -> Vec<u64> {
    let k = buckets.len() - 1;
    let mut out = vec![0u64; k];
    let mut acc = 0u64;
    for i in (0..k).rev() {
        acc += buckets[i + 1];
        out[i] = acc;
    }
    out
}

fn bucket(thresholds: &[f64], s: f64) -> usize {
    thresholds.partition_point(|t| *t <= s)
}

struct BatchTally {
    buckets: Vec<u64>,
    sum: f64,
    sum_sq: f64,
}

fn run_batches<R, F>(cfg: &McConfig, stream: &Stream, nthresh: usize, runner: &R, stat: F) -> Vec<BatchTally>
where
    R: Runner,
    F: Fn(&mut crate::randmodel::StreamRng) -> (usize, f64) + Sync + Send,
{
    let base = stream.child("batch");
    runner.run(cfg.batches(), |b| {
        let mut rng = base.child(b).rng();
        let mut tally = BatchTally { buckets: vec![0; nthresh + 1], sum: 0.0, sum_sq: 0.0 };
        for _ in 0..cfg.batch_len(b) {
            let (bucket_idx, raw) = stat(&mut rng);
            tally.buckets[bucket_idx] += 1;
            tally.sum += raw;
            tally.sum_sq += raw * raw;
        }
        tally
    })
}

fn merge(tallies: &[BatchTally], nthresh: usize) -> (Vec<u64>, f64, f64) {
    let mut buckets = vec![0u64; nthresh + 1];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for t in tallies {
        for (a, b) in buckets.iter_mut().zip(&t.buckets) {
            *a += b;
        }
        sum += t.sum;
        sum_sq += t.sum_sq;
    }
    (suffix_counts(&buckets), sum, sum_sq)
}

fn check_subset_size(n: usize, m: usize) -> Result<()> {
    if n == 0 || m == 0 || m > n {
        return Err(Error::invalid("need 1 <= m <= n"));
    }
    Ok(())
}

/// `Yᵀ R_J A R_J Y` for `Y` supported on `J`.
fn quadratic_form(a: &DenseMatrix, y: &TestVector) -> f64 {
    let j = y.support.as_slice();
    let mut q = 0.0;
    for (p, &r) in j.iter().enumerate() {
        let row = a.row(r);
        let er = y.signs[p] as f64;
        let mut acc = 0.0;
        for (s, &c) in j.iter().enumerate() {
            acc += row[c] * y.signs[s] as f64;
        }
        q += er * acc;
    }
    q
}

/// `‖B R_J Y‖₂`.
fn restricted_norm(b: &DenseMatrix, y: &TestVector) -> f64 {
    let mut v = vec![0.0; b.rows()];
    for (&j, &e) in y.support.as_slice().iter().zip(&y.signs) {
        let e = e as f64;
        for (r, vr) in v.iter_mut().enumerate() {
            *vr += e * b.get(r, j);
        }
    }
    math::norm2(&v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTail {
    /// Tail of `|Yᵀ R_J A R_J Y − (m/n)·tr A|`.
    pub curve: TailCurve,
    /// `(m/n)·tr A`.
    pub expected_mean: f64,
    pub mean: f64,
    pub std_error: f64,
}

impl QuadraticTail {
    /// `|mean − expected| / std_error`, or 0 when both are exactly equal.
    pub fn centering_z(&self) -> f64 {
        let d = (self.mean - self.expected_mean).abs();
        if d == 0.0 {
            0.0
        } else if self.std_error == 0.0 {
            f64::INFINITY
        } else {
            d / self.std_error
        }
    }
}

/// Tail of the centred quadratic form `Yᵀ R_J A R_J Y` for uniform `J` of size
/// `m` and Rademacher `Y` on `J`, with bound shape
/// `2·exp(−c·min(t²/(m‖A‖²), t/‖A‖))`.
pub fn mc_quadratic_tail<R: Runner>(
    a: &DenseMatrix,
    n: usize,
    m: usize,
    cfg: &McConfig,
    thresholds: Option<Vec<f64>>,
    stream: &Stream,
    runner: &R,
) -> Result<QuadraticTail> {
    if a.rows() != n || a.cols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: if a.rows() != n { a.rows() } else { a.cols() } });
    }
    check_subset_size(n, m)?;
    cfg.validate()?;
    if !math::all_finite(a.data()) {
        return Err(Error::NonFinite("matrix"));
    }
    let centre = m as f64 / n as f64 * a.trace();
    let thresholds = prepare_thresholds(thresholds, || {
        let mut rng = stream.child("pilot").rng();
        let k = cfg.pilot_trials.max(1);
        let mut acc = 0.0;
        for _ in 0..k {
            let y = sample_test_vector(n, m, &mut rng).expect("validated sizes");
            let d = quadratic_form(a, &y) - centre;
            acc += d * d;
        }
        math::sqrt(acc / k as f64)
    })?;
    let tallies = run_batches(cfg, stream, thresholds.len(), runner, |rng| {
        let y = sample_test_vector(n, m, rng).expect("validated sizes");
        let q = quadratic_form(a, &y);
        (bucket(&thresholds, (q - centre).abs()), q)
    });
    let (exceed, sum, sum_sq) = merge(&tallies, thresholds.len());
    let trials = cfg.trials as f64;
    let mean = sum / trials;
    let var = if cfg.trials > 1 { ((sum_sq - trials * mean * mean) / (trials - 1.0)).max(0.0) } else { 0.0 };
    let norm = spectral_norm(a)?;
    let exponent: Vec<f64> = thresholds
        .iter()
        .map(|&t| if norm == 0.0 { f64::INFINITY } else { (t * t / (m as f64 * norm * norm)).min(t / norm) })
        .collect();
    let admissible = vec![true; thresholds.len()];
    let curve = TailCurve::from_counts(thresholds, exceed, cfg.trials, exponent, admissible, cfg.constant);
    Ok(QuadraticTail { curve, expected_mean: centre, mean, std_error: math::sqrt(var / trials) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallBallEstimate {
    /// `√(m/2n)·‖B‖_HS`.
    pub threshold: f64,
    pub hits: u64,
    pub trials: u64,
    pub p_hat: f64,
    pub wilson_centre: f64,
    pub half_width: f64,
    /// `(m/n²)·‖B‖⁴_HS/‖B‖⁴`.
    pub exponent: f64,
    /// `2·exp(−c·exponent)` at the configured constant.
    pub bound: f64,
    pub constant: f64,
    /// Largest `c` with `2·exp(−c·exponent) ≥ p̂`; `None` when `p̂ = 0`.
    pub fitted_constant: Option<f64>,
}

impl SmallBallEstimate {
    pub fn band(&self) -> (f64, f64) {
        ((self.wilson_centre - self.half_width).max(0.0), (self.wilson_centre + self.half_width).min(1.0))
    }

    pub fn within_band(&self, p: f64) -> bool {
        let (lo, hi) = self.band();
        lo - 1e-12 <= p && p <= hi + 1e-12
    }
}

fn check_columns(b: &DenseMatrix, n: usize) -> Result<()> {
    if b.cols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: b.cols() });
    }
    if !math::all_finite(b.data()) {
        return Err(Error::NonFinite("matrix"));
    }
    Ok(())
}

/// `P(‖B R_J Y‖₂ ≤ √(m/2n)·‖B‖_HS)`.
pub fn mc_small_ball<R: Runner>(b: &DenseMatrix, n: usize, m: usize, cfg: &McConfig, stream: &Stream, runner: &R) -> Result<SmallBallEstimate> {
    check_columns(b, n)?;
    check_subset_size(n, m)?;
    cfg.validate()?;
    let hs = b.hs_norm();
    let threshold = math::sqrt(m as f64 / (2.0 * n as f64)) * hs;
    let tallies = run_batches(cfg, stream, 1, runner, |rng| {
        let y = sample_test_vector(n, m, rng).expect("validated sizes");
        let v = restricted_norm(b, &y);
        (if v <= threshold { 1 } else { 0 }, v)
    });
    let hits: u64 = tallies.iter().map(|t| t.buckets[1]).sum();
    let op = spectral_norm(b)?;
    let exponent = if op == 0.0 { 0.0 } else { m as f64 / (n as f64 * n as f64) * math::powi(hs / op, 4) };
    let p_hat = hits as f64 / cfg.trials as f64;
    let (wilson_centre, half_width) = wilson(hits, cfg.trials, Z99);
    let fitted_constant = if p_hat > 0.0 && exponent > 0.0 { Some(math::ln(2.0 / p_hat) / exponent) } else { None };
    Ok(SmallBallEstimate {
        threshold,
        hits,
        trials: cfg.trials,
        p_hat,
        wilson_centre,
        half_width,
        exponent,
        bound: (2.0 * math::exp(-cfg.constant * exponent)).min(1.0),
        constant: cfg.constant,
        fitted_constant,
    })
}

/// `P(‖B R_J Y‖₂ ≥ t)` with bound shape `2·exp(−c·t²/‖B‖²)`, claimed only
/// for `t > √(4m/n)·‖B‖_HS`; smaller thresholds are kept but flagged.
pub fn mc_large_deviation<R: Runner>(
    b: &DenseMatrix,
    n: usize,
    m: usize,
    cfg: &McConfig,
    thresholds: Option<Vec<f64>>,
    stream: &Stream,
    runner: &R,
) -> Result<TailCurve> {
    check_columns(b, n)?;
    check_subset_size(n, m)?;
    cfg.validate()?;
    let hs = b.hs_norm();
    let floor = math::sqrt(4.0 * m as f64 / n as f64) * hs;
    let thresholds = prepare_thresholds(thresholds, || {
        let mut rng = stream.child("pilot").rng();
        let k = cfg.pilot_trials.max(1);
        let mut acc = 0.0;
        for _ in 0..k {
            let y = sample_test_vector(n, m, &mut rng).expect("validated sizes");
            let v = restricted_norm(b, &y);
            acc += v * v;
        }
        math::sqrt(acc / k as f64)
    })?;
    let tallies = run_batches(cfg, stream, thresholds.len(), runner, |rng| {
        let y = sample_test_vector(n, m, rng).expect("validated sizes");
        let v = restricted_norm(b, &y);
        (bucket(&thresholds, v), v)
    });
    let (exceed, _, _) = merge(&tallies, thresholds.len());
    let op = spectral_norm(b)?;
    let exponent = thresholds.iter().map(|&t| if op == 0.0 { f64::INFINITY } else { t * t / (op * op) }).collect();
    let admissible = thresholds.iter().map(|&t| t > floor).collect();
    Ok(TailCurve::from_counts(thresholds, exceed, cfg.trials, exponent, admissible, cfg.constant))
}
