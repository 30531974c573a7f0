//! Seeded sampling of uniform subsets, Rademacher signs, random bodies
//! `K(I₁,…,I_N)` and the test vector `Y = Σ_{j∈J} εⱼ eⱼ`.
//!
//! Every random draw comes from a named [`Stream`]. A stream is keyed by the
//! master seed and a hierarchical name such as `"separate/0/body/3"`; its
//! generator is ChaCha12 seeded with `SHA-256(seed ‖ name)`, so streams with
//! different names are independent and a stream's output never depends on
//! which thread consumes it.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

use crate::bodies::{make_model_body, HullBody};
use crate::math;
use crate::{Error, Result};

/// Recorded in output metadata so results can be traced to the generator.
pub const PRNG_ALGORITHM: &str = "chacha12/sha256(seed_le || stream_name)";

pub type StreamRng = ChaCha12Rng;

/// A named deterministic substream of a master seed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Stream {
    seed: u64,
    name: String,
}

impl Stream {
    pub fn new(seed: u64, name: impl Into<String>) -> Self {
        Self { seed, name: name.into() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `name/part`.
    pub fn child(&self, part: impl fmt::Display) -> Self {
        let name = if self.name.is_empty() { format!("{part}") } else { format!("{}/{part}", self.name) };
        Self { seed: self.seed, name }
    }

    pub fn rng(&self) -> StreamRng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(self.name.as_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha12Rng::from_seed(key)
    }
}

/// `(n, δ, N)` with `m = round(δ·n)` (half rounds up).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub n: usize,
    pub delta: f64,
    pub big_n: usize,
    pub m: usize,
}

impl ModelParams {
    pub fn new(n: usize, delta: f64, big_n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n must be at least 1"));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::invalid("delta must lie in (0, 1]"));
        }
        if big_n == 0 {
            return Err(Error::invalid("N must be at least 1"));
        }
        let m = math::round_half_up(delta * n as f64) as usize;
        if m == 0 || m > n {
            return Err(Error::invalid(format!("m = round(delta*n) = {m} outside [1, n]")));
        }
        Ok(Self { n, delta, big_n, m })
    }

    /// True when `δ ≤ C·√(log n / n)`, i.e. outside the regime of the lower-bound theorem.
    pub fn outside_regime(&self, c_big: f64) -> bool {
        let n = self.n as f64;
        self.n < 2 || self.delta <= c_big * math::sqrt(math::ln(n) / n)
    }

    /// `ln N` for the theorem's choice `N = exp(c δ² n)`; annotation only.
    pub fn theorem_ln_big_n(&self, c: f64) -> f64 {
        c * self.delta * self.delta * self.n as f64
    }

    /// Predicted separation scale `c₁ / (δ log²(1/δ))`.
    pub fn predicted_distance_scale(&self, c1: f64) -> f64 {
        let l = math::ln(1.0 / self.delta);
        c1 / (self.delta * l * l)
    }
}

/// Sorted distinct 0-based indices into `[0, n)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexSet {
    n: usize,
    indices: Vec<usize>,
}

impl IndexSet {
    pub fn new(n: usize, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("index set has duplicates"));
        }
        if indices.last().is_some_and(|&i| i >= n) {
            return Err(Error::invalid("index out of range"));
        }
        Ok(Self { n, indices })
    }

    pub fn full(n: usize) -> Self {
        Self { n, indices: (0..n).collect() }
    }

    pub fn ambient(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    /// `Σ_{i∈I} eᵢ`.
    pub fn indicator(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n];
        for &i in &self.indices {
            v[i] = 1.0;
        }
        v
    }
}

/// True when the sets cover `[0, n)`.
pub fn covers(n: usize, sets: &[IndexSet]) -> bool {
    let mut hit = vec![false; n];
    for s in sets {
        for &i in s.as_slice() {
            hit[i] = true;
        }
    }
    hit.into_iter().all(|h| h)
}

/// Uniform `m`-subset of `[0, n)` by a partial Fisher-Yates shuffle.
pub fn sample_subset<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<IndexSet> {
    if m > n {
        return Err(Error::invalid(format!("subset size {m} exceeds n = {n}")));
    }
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(m);
    pool.sort_unstable();
    Ok(IndexSet { n, indices: pool })
}

/// `k` independent uniform signs.
pub fn sample_rademacher<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Result<Vec<i8>> {
    if k == 0 {
        return Err(Error::invalid("need at least one sign"));
    }
    Ok((0..k).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
}

/// `Y = Σ_{j∈J} εⱼ eⱼ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestVector {
    pub support: IndexSet,
    /// One sign per element of `support`, in the same order.
    pub signs: Vec<i8>,
    pub y: Vec<f64>,
}

pub fn sample_test_vector<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<TestVector> {
    if m == 0 {
        return Err(Error::invalid("test vector needs m >= 1"));
    }
    let support = sample_subset(n, m, rng)?;
    let signs = sample_rademacher(m, rng)?;
    let mut y = vec![0.0; n];
    for (&j, &e) in support.as_slice().iter().zip(&signs) {
        y[j] = e as f64;
    }
    Ok(TestVector { support, signs, y })
}

/// A sampled `K(I₁,…,I_N)` together with its index sets.
#[derive(Debug, Clone)]
pub struct SampledBody {
    pub body: HullBody,
    pub subsets: Vec<IndexSet>,
    /// Whether `⋃ I_l = [n]`.
    pub covers: bool,
}

/// Draws `N` independent uniform `m`-subsets, subset `l` from `stream/subset/l`.
pub fn sample_body(params: &ModelParams, stream: &Stream) -> Result<SampledBody> {
    let base = stream.child("subset");
    let subsets = (0..params.big_n)
        .map(|l| sample_subset(params.n, params.m, &mut base.child(l).rng()))
        .collect::<Result<Vec<_>>>()?;
    let body = make_model_body(params, &subsets)?;
    let covers = covers(params.n, &subsets);
    Ok(SampledBody { body, subsets, covers })
}

/// Exact `P(⋃_{l≤N} I_l = [n])` for independent uniform `m`-subsets, by
/// inclusion-exclusion over the set of missed coordinates.
pub fn coverage_probability(n: usize, m: usize, big_n: usize) -> f64 {
    let total = math::ln_binomial(n as u64, m as u64);
    let mut p = 0.0;
    for k in 0..=n {
        if n - k < m {
            break;
        }
        let miss = math::exp(math::ln_binomial((n - k) as u64, m as u64) - total);
        let term = math::exp(math::ln_binomial(n as u64, k as u64)) * math::powi(miss, big_n as i32);
        if k % 2 == 0 {
            p += term;
        } else {
            p -= term;
        }
    }
    p
}
