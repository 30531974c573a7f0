//! Operator norms between hull bodies, Banach-Mazur distance upper bounds,
//! the one-vector and one-body containment events, and the pairwise
//! separation experiment.
//!
//! Every distance reported here is an upper bound: a concrete map `T` is
//! exhibited and `‖T:K→K′‖·‖T⁻¹:K′→K‖` is certified from above. No lower
//! bounds on the distance are attempted.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::bodies::{BallNorm, BodyComponent, GaugeOptions, HullBody};
use crate::linalg::{self, DenseMatrix, SpectralInterval};
use crate::math::{self, norm2};
use crate::randmodel::{covers, sample_body, IndexSet, ModelParams, SampledBody, Stream, StreamRng};
use crate::{Error, Result, Runner};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpNormMode {
    /// Enumerate every sign pattern up to the cutoff.
    Exhaustive,
    /// Enumerate only when cheaper than `sampled_patterns`, sample otherwise.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpNormOptions {
    pub mode: OpNormMode,
    /// Largest support size whose sign patterns are enumerated.
    pub cutoff: usize,
    pub sampled_patterns: usize,
    /// Passes of single-coordinate flip ascent after sampling.
    pub flip_rounds: usize,
    /// Random restarts of the sphere ascent for Euclidean-ball components.
    pub restarts: usize,
    pub ascent_iters: usize,
    pub gauge_tol: f64,
}

impl Default for OpNormOptions {
    fn default() -> Self {
        Self {
            mode: OpNormMode::Exhaustive,
            cutoff: 16,
            sampled_patterns: 1 << 14,
            flip_rounds: 8,
            restarts: 32,
            ascent_iters: 50,
            gauge_tol: 1e-8,
        }
    }
}

impl OpNormOptions {
    /// Cheap settings used as a search surrogate; only `lo` is meaningful.
    pub fn surrogate() -> Self {
        Self {
            mode: OpNormMode::Sampled,
            cutoff: 16,
            sampled_patterns: 16,
            flip_rounds: 1,
            restarts: 4,
            ascent_iters: 12,
            gauge_tol: 1e-4,
        }
    }
}

/// Bracket on `‖T: K → K′‖ = max_{x∈K} ‖Tx‖_{K′}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpNormResult {
    pub lo: f64,
    pub hi: f64,
    /// A point of `K` with `gauge_{K′}(T·witness).lo = lo`.
    pub witness: Vec<f64>,
    pub gauge_calls: usize,
}

struct Evaluator<'a> {
    t: &'a DenseMatrix,
    target: &'a HullBody,
    gauge: GaugeOptions,
    calls: usize,
    columns: Vec<Option<(f64, f64)>>,
}

impl Evaluator<'_> {
    /// `(lo, hi)` of `‖Tx‖_{K′}`.
    fn eval(&mut self, x: &[f64]) -> Result<(f64, f64, Vec<f64>)> {
        let z = self.t.mul_vec(x)?;
        self.calls += 1;
        let g = self.target.gauge_with(&z, &self.gauge)?;
        Ok((g.lo, g.hi, g.dual_witness))
    }

    /// `(lo, hi)` of `‖Teᵢ‖_{K′}`, cached.
    fn column(&mut self, i: usize) -> Result<(f64, f64)> {
        if let Some(v) = self.columns[i] {
            return Ok(v);
        }
        let mut e = vec![0.0; self.t.cols()];
        e[i] = 1.0;
        let (lo, hi, _) = self.eval(&e)?;
        self.columns[i] = Some((lo, hi));
        Ok((lo, hi))
    }
}

#[derive(Clone)]
struct Best {
    lo: f64,
    witness: Vec<f64>,
}

impl Best {
    fn offer(&mut self, lo: f64, x: &[f64]) {
        if lo > self.lo || self.witness.is_empty() {
            self.lo = lo;
            self.witness = x.to_vec();
        }
    }
}

fn gaussian(rng: &mut StreamRng) -> f64 {
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        if u1 > 0.0 {
            return math::sqrt(-2.0 * math::ln(u1)) * math::cos(core::f64::consts::TAU * u2);
        }
    }
}

fn is_monomial(t: &DenseMatrix) -> bool {
    let n = t.rows();
    let mut col_used = vec![false; t.cols()];
    for r in 0..n {
        let mut seen = false;
        for (c, used) in col_used.iter_mut().enumerate() {
            if t.get(r, c) != 0.0 {
                if seen || *used {
                    return false;
                }
                seen = true;
                *used = true;
            }
        }
    }
    true
}

fn enumerate(k: usize, opts: &OpNormOptions) -> bool {
    k <= opts.cutoff && (opts.mode == OpNormMode::Exhaustive || (1usize << k) <= opts.sampled_patterns)
}

/// Signs of `base` on `positions` flipped according to the bits of `mask`.
fn flip(base: &[f64], positions: &[usize], mask: u64) -> Vec<f64> {
    let mut x = base.to_vec();
    for (b, &p) in positions.iter().enumerate() {
        if mask >> b & 1 == 1 {
            x[p] = -base[p];
        }
    }
    x
}

/// Maximises `‖T x‖_{K′}` over `x = ε∘base`, `ε` a sign pattern on
/// `positions`. Returns the exact upper bound when every pattern was
/// enumerated, `None` when only sampled.
fn sign_search(
    ev: &mut Evaluator<'_>,
    base: &[f64],
    positions: &[usize],
    symmetric: bool,
    opts: &OpNormOptions,
    rng: &mut StreamRng,
    best: &mut Best,
) -> Result<Option<f64>> {
    let k = positions.len();
    if enumerate(k, opts) {
        // A centrally symmetric target makes ε and −ε equivalent.
        let count = if symmetric && k > 0 { 1u64 << (k - 1) } else { 1u64 << k };
        let mut hi = 0.0f64;
        for mask in 0..count {
            let x = flip(base, positions, mask);
            let (lo, h, _) = ev.eval(&x)?;
            best.offer(lo, &x);
            hi = hi.max(h);
        }
        return Ok(Some(hi));
    }
    let mut local = Best { lo: f64::NEG_INFINITY, witness: Vec::new() };
    let mut current = base.to_vec();
    for s in 0..opts.sampled_patterns.max(1) {
        let x = if s == 0 {
            base.to_vec()
        } else {
            let mut x = base.to_vec();
            for &p in positions {
                if rng.random::<bool>() {
                    x[p] = -x[p];
                }
            }
            x
        };
        let (lo, _, _) = ev.eval(&x)?;
        if lo > local.lo {
            local.offer(lo, &x);
            current = x;
        }
    }
    for _ in 0..opts.flip_rounds {
        let mut improved = false;
        for &p in positions {
            current[p] = -current[p];
            let (lo, _, _) = ev.eval(&current)?;
            if lo > local.lo * (1.0 + 1e-12) {
                local.offer(lo, &current);
                improved = true;
            } else {
                current[p] = -current[p];
            }
        }
        if !improved {
            break;
        }
    }
    best.offer(local.lo, &local.witness);
    Ok(None)
}

/// `Σ_{i∈positions} |base_i| · hi(‖Teᵢ‖)`, a triangle-inequality bound.
fn column_sum_bound(ev: &mut Evaluator<'_>, base: &[f64], positions: &[usize]) -> Result<f64> {
    let mut s = 0.0;
    for &i in positions {
        s += base[i].abs() * ev.column(i)?.1;
    }
    Ok(s)
}

/// Bracket on the operator norm `‖T: K → K2‖`.
///
/// Per component of `K`: sign patterns of unconditional generators are
/// enumerated up to the cutoff and sampled with flip ascent beyond it;
/// `ℓ₁`-balls are exact through their vertices `±r eᵢ`; `ℓ∞`-balls are
/// handled through their corners; Euclidean balls use power-type ascent on
/// the sphere for `lo` and `r·min(‖T_S‖₂ / inradius(K2), (Σᵢ ‖Teᵢ‖²)^{1/2})`
/// for `hi`.
pub fn op_norm(
    t: &DenseMatrix,
    k: &HullBody,
    k2: &HullBody,
    opts: &OpNormOptions,
    stream: &Stream,
) -> Result<OpNormResult> {
    let n = k.dim();
    if k2.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: k2.dim() });
    }
    if t.rows() != n || t.cols() != n {
        return Err(Error::DimensionMismatch { expected: n, found: t.rows().max(t.cols()) });
    }
    if !math::all_finite(t.data()) {
        return Err(Error::NonFinite("operator"));
    }
    if !(opts.gauge_tol > 0.0) {
        return Err(Error::invalid("gauge tolerance must be positive"));
    }
    let mut ev = Evaluator {
        t,
        target: k2,
        gauge: GaugeOptions { tol: opts.gauge_tol, ..GaugeOptions::default() },
        calls: 0,
        columns: vec![None; n],
    };
    let mut rng = stream.rng();
    let shortcut = is_monomial(t) && k2.is_unconditional();
    let mut best = Best { lo: f64::NEG_INFINITY, witness: Vec::new() };
    let mut hi = 0.0f64;
    let mut spheres = Vec::new();

    for (ci, comp) in k.components().iter().enumerate() {
        match comp {
            BodyComponent::SignedPoints { points, unconditional } => {
                for g in points {
                    let support: Vec<usize> = (0..n).filter(|&i| g[i] != 0.0).collect();
                    if support.is_empty() {
                        continue;
                    }
                    if !*unconditional || shortcut {
                        // ±g, or every sign pattern has the same image norm.
                        let (lo, h, _) = ev.eval(g)?;
                        best.offer(lo, g);
                        hi = hi.max(h);
                        continue;
                    }
                    match sign_search(&mut ev, g, &support, false, opts, &mut rng, &mut best)? {
                        Some(h) => hi = hi.max(h),
                        None => hi = hi.max(column_sum_bound(&mut ev, g, &support)?),
                    }
                }
            }
            BodyComponent::Ball { norm, radius, support } => {
                let s: Vec<usize> = support.clone().unwrap_or_else(|| (0..n).collect());
                let r = *radius;
                match norm {
                    BallNorm::L1 => {
                        for &i in &s {
                            let (lo, h) = ev.column(i)?;
                            let mut x = vec![0.0; n];
                            x[i] = r;
                            best.offer(r * lo, &x);
                            hi = hi.max(r * h);
                        }
                    }
                    BallNorm::LInf => {
                        let mut corner = vec![0.0; n];
                        for &i in &s {
                            corner[i] = r;
                        }
                        match sign_search(&mut ev, &corner, &s, true, opts, &mut rng, &mut best)? {
                            Some(h) => hi = hi.max(h),
                            None => hi = hi.max(column_sum_bound(&mut ev, &corner, &s)?),
                        }
                    }
                    BallNorm::L2 => spheres.push((ci, r, s)),
                }
            }
        }
    }

    // Euclidean balls last, so that ascent can be skipped when the certified
    // bound is already below the best value found elsewhere.
    for (_, r, s) in spheres {
        let mut sq = 0.0;
        for &i in &s {
            let h = ev.column(i)?.1;
            sq += h * h;
        }
        let mut h = r * math::sqrt(sq);
        if let Some(inr) = k2.euclidean_inradius() {
            let cols: Vec<Vec<f64>> = s.iter().map(|&i| t.column(i)).collect();
            let ts = DenseMatrix::from_columns(&cols)?;
            h = h.min(r * linalg::spectral_norm(&ts)? / inr);
        }
        hi = hi.max(h);
        if h <= best.lo {
            continue;
        }
        sphere_ascent(&mut ev, r, &s, opts, &mut rng, &mut best)?;
    }

    if best.witness.is_empty() {
        best = Best { lo: 0.0, witness: vec![0.0; n] };
    }
    let lo = best.lo.max(0.0);
    Ok(OpNormResult { lo, hi: hi.max(lo), witness: best.witness, gauge_calls: ev.calls })
}

/// `u ← Tᵀy*/‖Tᵀy*‖` restricted to `S`, where `y*` is the dual witness of
/// `‖T r u‖_{K′}`; the value never decreases along the iteration.
fn sphere_ascent(
    ev: &mut Evaluator<'_>,
    r: f64,
    s: &[usize],
    opts: &OpNormOptions,
    rng: &mut StreamRng,
    best: &mut Best,
) -> Result<()> {
    let n = ev.t.cols();
    // First start: the best column.
    let mut first = s[0];
    let mut top = f64::NEG_INFINITY;
    for &i in s {
        let lo = ev.column(i)?.0;
        if lo > top {
            top = lo;
            first = i;
        }
    }
    for restart in 0..opts.restarts.max(1) {
        let mut u = vec![0.0; n];
        if restart == 0 {
            u[first] = 1.0;
        } else {
            for &i in s {
                u[i] = gaussian(rng);
            }
            let nu = norm2(&u);
            if nu == 0.0 {
                continue;
            }
            u.iter_mut().for_each(|v| *v /= nu);
        }
        let mut prev = f64::NEG_INFINITY;
        for _ in 0..opts.ascent_iters.max(1) {
            let x: Vec<f64> = u.iter().map(|v| r * v).collect();
            let (lo, _, y) = ev.eval(&x)?;
            best.offer(lo, &x);
            if lo <= prev * (1.0 + 1e-10) {
                break;
            }
            prev = lo;
            let w = ev.t.tr_mul_vec(&y)?;
            let mut next = vec![0.0; n];
            for &i in s {
                next[i] = w[i];
            }
            let nw = norm2(&next);
            if nw == 0.0 {
                break;
            }
            next.iter_mut().for_each(|v| *v /= nw);
            u = next;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Distance search

#[derive(Debug, Clone, PartialEq)]
pub struct BmOptions {
    pub random_diagonals: usize,
    /// Log-normal spread of the random diagonal entries.
    pub diagonal_spread: f64,
    pub random_permutations: usize,
    /// Enumerate all signed permutations up to this dimension.
    pub all_permutations_up_to: usize,
    /// Surrogate evaluations spent on coordinate descent.
    pub refine_evaluations: usize,
    /// Initial entry step, relative to the largest entry of the map.
    pub refine_step: f64,
    /// Number of best initial candidates certified besides the refined map.
    pub certify_top: usize,
    pub surrogate: OpNormOptions,
    pub certify: OpNormOptions,
}

impl Default for BmOptions {
    fn default() -> Self {
        Self {
            random_diagonals: 8,
            diagonal_spread: 0.5,
            random_permutations: 8,
            all_permutations_up_to: 4,
            refine_evaluations: 48,
            refine_step: 0.25,
            certify_top: 2,
            surrogate: OpNormOptions::surrogate(),
            certify: OpNormOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRecord {
    pub label: String,
    /// Product of the two surrogate lower bounds.
    pub surrogate: Option<f64>,
    /// Product of the two certified upper bounds.
    pub certified: Option<f64>,
    pub note: Option<String>,
}

/// Certified upper bound `d(K, K′) ≤ upper` with the map achieving it.
#[derive(Debug, Clone, PartialEq)]
pub struct BmEstimate {
    pub upper: f64,
    pub map: DenseMatrix,
    /// `hi` of `‖T: K → K′‖`.
    pub forward_hi: f64,
    /// `hi` of `‖T⁻¹: K′ → K‖`.
    pub backward_hi: f64,
    pub log: Vec<CandidateRecord>,
    pub evaluations: usize,
}

/// Colour refinement of the coordinate/generator incidence structure with
/// individualisation of remaining ties, returning the coordinates in a
/// relabelling-invariant order.
/// Generator entries enter through their absolute values for unconditional
/// components, so the order is invariant under signed permutations of
/// unconditional bodies and under permutations of any body.
pub fn canonical_order(body: &HullBody) -> Vec<usize> {
    let n = body.dim();
    let one = 1.0f64.to_bits();
    let mut labels: Vec<Vec<u64>> = Vec::new();
    let mut entries: Vec<Vec<(usize, u64)>> = Vec::new();
    for c in body.components() {
        match c {
            BodyComponent::SignedPoints { points, unconditional } => {
                for g in points {
                    let e = (0..n)
                        .filter(|&i| g[i] != 0.0)
                        .map(|i| (i, if *unconditional { g[i].abs() } else { g[i] }.to_bits()))
                        .collect();
                    labels.push(vec![0, *unconditional as u64]);
                    entries.push(e);
                }
            }
            BodyComponent::Ball { norm, radius, support } => {
                let code = match norm {
                    BallNorm::L1 => 1,
                    BallNorm::L2 => 2,
                    BallNorm::LInf => 3,
                };
                let s: Vec<usize> = support.clone().unwrap_or_else(|| (0..n).collect());
                labels.push(vec![1, code, radius.to_bits()]);
                entries.push(s.into_iter().map(|i| (i, one)).collect());
            }
        }
    }
    let mut incidence: Vec<Vec<(usize, u64)>> = vec![Vec::new(); n];
    for (a, e) in entries.iter().enumerate() {
        for &(i, w) in e {
            incidence[i].push((a, w));
        }
    }
    let mut atom = relabel(&labels);
    let mut coord = vec![0usize; n];
    loop {
        refine(&mut coord, &mut atom, &incidence, &entries);
        // Individualise the lowest index of the smallest tied class. When the
        // class is an orbit of the symmetry group, any member gives the same
        // canonical copy.
        let mut classes: Vec<(usize, usize, usize)> = Vec::new();
        for c in 0..n {
            let members: Vec<usize> = (0..n).filter(|&i| coord[i] == c).collect();
            if members.len() > 1 {
                classes.push((members.len(), c, members[0]));
            }
        }
        let Some(&(_, _, v)) = classes.iter().min() else { break };
        coord[v] = n;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (coord[i], i));
    order
}

/// Colour refinement until the number of classes is stable.
fn refine(coord: &mut Vec<usize>, atom: &mut Vec<usize>, incidence: &[Vec<(usize, u64)>], entries: &[Vec<(usize, u64)>]) {
    let n = coord.len();
    let mut counts = (0, 0);
    for _ in 0..=(n + entries.len() + 1) {
        let sigs: Vec<Vec<u64>> = (0..n).map(|i| signature(coord[i], &incidence[i], atom)).collect();
        *coord = relabel(&sigs);
        let sigs: Vec<Vec<u64>> = entries.iter().enumerate().map(|(a, e)| signature(atom[a], e, coord)).collect();
        *atom = relabel(&sigs);
        let next = (distinct(coord), distinct(atom));
        if next == counts {
            break;
        }
        counts = next;
    }
}

fn signature(own: usize, links: &[(usize, u64)], colours: &[usize]) -> Vec<u64> {
    let mut s: Vec<(usize, u64)> = links.iter().map(|&(j, w)| (colours[j], w)).collect();
    s.sort_unstable();
    let mut v = Vec::with_capacity(1 + 2 * s.len());
    v.push(own as u64);
    for (c, w) in s {
        v.push(c as u64);
        v.push(w);
    }
    v
}

fn relabel(sigs: &[Vec<u64>]) -> Vec<usize> {
    let mut uniq = sigs.to_vec();
    uniq.sort();
    uniq.dedup();
    sigs.iter().map(|s| uniq.binary_search(s).unwrap_or(0)).collect()
}

fn distinct(colours: &[usize]) -> usize {
    let mut c = colours.to_vec();
    c.sort_unstable();
    c.dedup();
    c.len()
}

/// `n` linearly independent extreme points, chosen greedily by decreasing
/// Euclidean norm.
fn vertex_basis(body: &HullBody) -> Option<Vec<Vec<f64>>> {
    let n = body.dim();
    let mut pts: Vec<Vec<f64>> = Vec::new();
    for c in body.components() {
        match c {
            BodyComponent::SignedPoints { points, unconditional } => {
                for g in points {
                    pts.push(if *unconditional { g.iter().map(|v| v.abs()).collect() } else { g.clone() });
                }
            }
            BodyComponent::Ball { norm, radius, support } => {
                let s: Vec<usize> = support.clone().unwrap_or_else(|| (0..n).collect());
                match norm {
                    BallNorm::L1 | BallNorm::L2 => {
                        for &i in &s {
                            let mut e = vec![0.0; n];
                            e[i] = *radius;
                            pts.push(e);
                        }
                    }
                    BallNorm::LInf => {
                        let mut corner = vec![0.0; n];
                        for &i in &s {
                            corner[i] = *radius;
                        }
                        pts.push(corner.clone());
                        for &i in &s {
                            let mut f = corner.clone();
                            f[i] = -f[i];
                            pts.push(f);
                        }
                    }
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| norm2(&pts[b]).partial_cmp(&norm2(&pts[a])).unwrap_or(core::cmp::Ordering::Equal));
    let mut chosen = Vec::new();
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for i in order {
        let p = &pts[i];
        let np = norm2(p);
        if np == 0.0 {
            continue;
        }
        let mut w = p.clone();
        for _ in 0..2 {
            for q in &ortho {
                let d = math::dot(&w, q);
                w.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
        }
        let nw = norm2(&w);
        if nw > 1e-9 * np {
            ortho.push(w.iter().map(|v| v / nw).collect());
            chosen.push(p.clone());
            if chosen.len() == n {
                return Some(chosen);
            }
        }
    }
    None
}

fn signed_permutation_matrix(perm: &[usize], signs: &[f64]) -> DenseMatrix {
    let n = perm.len();
    let mut m = DenseMatrix::zeros(n, n);
    for i in 0..n {
        m.set(i, perm[i], signs[i]);
    }
    m
}

fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        out.push(p.clone());
        // Next lexicographic permutation.
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else { break };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).unwrap_or(i);
        p.swap(i - 1, j);
        p[i..].reverse();
    }
    out
}

struct Search<'a> {
    k: &'a HullBody,
    k2: &'a HullBody,
    opts: &'a BmOptions,
    surrogate_stream: Stream,
    evaluations: usize,
}

impl Search<'_> {
    fn surrogate(&mut self, t: &DenseMatrix) -> core::result::Result<f64, String> {
        self.evaluations += 1;
        let inv = t.inverse().map_err(|e| format!("{e}"))?;
        let f = op_norm(t, self.k, self.k2, &self.opts.surrogate, &self.surrogate_stream).map_err(|e| format!("{e}"))?;
        let b = op_norm(&inv, self.k2, self.k, &self.opts.surrogate, &self.surrogate_stream)
            .map_err(|e| format!("{e}"))?;
        let v = f.lo * b.lo;
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err("degenerate surrogate".to_string())
        }
    }
}

/// Searches for a map `T` with small `‖T:K→K2‖·‖T⁻¹:K2→K‖` and certifies it.
///
/// The search runs on canonically relabelled copies of both bodies (see
/// [`canonical_order`]) so that its outcome does not depend on how the
/// coordinates of either body are numbered. Candidates: the identity in
/// canonical coordinates, random diagonal maps, signed permutations, and the
/// map sending a vertex basis of `K` to one of `K2`; the best one by the
/// surrogate lower bound is refined by coordinate descent on its entries.
pub fn bm_upper(k: &HullBody, k2: &HullBody, opts: &BmOptions, stream: &Stream) -> Result<BmEstimate> {
    let n = k.dim();
    if k2.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, found: k2.dim() });
    }
    let p = canonical_order(k);
    let p2 = canonical_order(k2);
    let ones = vec![1.0; n];
    let kc = canonical_copy(k, &p, &ones)?;
    let k2c = canonical_copy(k2, &p2, &ones)?;
    let both_unconditional = k.is_unconditional() && k2.is_unconditional();

    let mut candidates: Vec<(String, DenseMatrix)> = vec![("identity".to_string(), DenseMatrix::identity(n))];
    let mut rng = stream.child("candidates").rng();
    for d in 0..opts.random_diagonals {
        let diag: Vec<f64> = (0..n).map(|_| math::exp(opts.diagonal_spread * gaussian(&mut rng))).collect();
        candidates.push((format!("diagonal/{d}"), DenseMatrix::from_diag(&diag)));
    }
    if n <= opts.all_permutations_up_to {
        let sign_sets: Vec<Vec<f64>> = if both_unconditional {
            vec![ones.clone()]
        } else {
            (0..1u64 << n).map(|mask| (0..n).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).collect()).collect()
        };
        for (pi, perm) in all_permutations(n).into_iter().enumerate() {
            if pi == 0 {
                // Identity permutation; its sign variants still count.
                for (si, signs) in sign_sets.iter().enumerate().skip(1) {
                    candidates.push((format!("signed-permutation/{pi}/{si}"), signed_permutation_matrix(&perm, signs)));
                }
                continue;
            }
            for (si, signs) in sign_sets.iter().enumerate() {
                candidates.push((format!("signed-permutation/{pi}/{si}"), signed_permutation_matrix(&perm, signs)));
            }
        }
    } else {
        for q in 0..opts.random_permutations {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let signs: Vec<f64> = if both_unconditional {
                ones.clone()
            } else {
                (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
            };
            candidates.push((format!("signed-permutation/{q}"), signed_permutation_matrix(&perm, &signs)));
        }
    }
    if let (Some(a), Some(b)) = (vertex_basis(&kc), vertex_basis(&k2c)) {
        let a = DenseMatrix::from_columns(&a)?;
        let b = DenseMatrix::from_columns(&b)?;
        if let Ok(ai) = a.inverse() {
            candidates.push(("vertex-basis".to_string(), b.matmul(&ai)?));
        }
    }

    let mut search =
        Search { k: &kc, k2: &k2c, opts, surrogate_stream: stream.child("surrogate"), evaluations: 0 };
    let mut log = Vec::new();
    let mut scored: Vec<(f64, usize)> = Vec::new();
    for (idx, (label, t)) in candidates.iter().enumerate() {
        match search.surrogate(t) {
            Ok(v) => {
                scored.push((v, idx));
                log.push(CandidateRecord { label: label.clone(), surrogate: Some(v), certified: None, note: None });
            }
            Err(e) => log.push(CandidateRecord {
                label: label.clone(),
                surrogate: None,
                certified: None,
                note: Some(format!("skipped: {e}")),
            }),
        }
    }
    if scored.is_empty() {
        return Err(Error::Uncertified("no usable candidate map"));
    }
    // Stable: ties keep candidate order.
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(core::cmp::Ordering::Equal));

    // Coordinate descent from the best candidate.
    let (start_val, start_idx) = scored[0];
    let mut current = candidates[start_idx].1.clone();
    let mut current_val = start_val;
    let mut entries: Vec<(usize, usize)> = (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).collect();
    entries.shuffle(&mut stream.child("refine").rng());
    let mut step = opts.refine_step;
    let mut spent = 0;
    let mut improved_any = false;
    'outer: while spent < opts.refine_evaluations && step > 1e-3 {
        let mut improved = false;
        for &(r, c) in &entries {
            let scale = current.max_abs();
            for dir in [1.0, -1.0] {
                if spent >= opts.refine_evaluations {
                    break 'outer;
                }
                spent += 1;
                let mut t = current.clone();
                t.set(r, c, t.get(r, c) + dir * step * scale);
                if let Ok(v) = search.surrogate(&t) {
                    if v < current_val * (1.0 - 1e-9) {
                        current = t;
                        current_val = v;
                        improved = true;
                        improved_any = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }

    let mut finalists: Vec<(String, DenseMatrix)> = Vec::new();
    if improved_any {
        finalists.push(("refined".to_string(), current));
        log.push(CandidateRecord {
            label: "refined".to_string(),
            surrogate: Some(current_val),
            certified: None,
            note: Some(format!("{spent} descent evaluations from {}", candidates[start_idx].0)),
        });
    }
    for &(_, idx) in scored.iter().take(opts.certify_top.max(1)) {
        finalists.push(candidates[idx].clone());
    }

    let certify_stream = stream.child("certify");
    let mut best: Option<(f64, f64, f64, DenseMatrix)> = None;
    for (label, t) in finalists {
        let outcome = (|| -> Result<(f64, f64)> {
            let inv = t.inverse()?;
            let f = op_norm(&t, &kc, &k2c, &opts.certify, &certify_stream)?;
            let b = op_norm(&inv, &k2c, &kc, &opts.certify, &certify_stream)?;
            Ok((f.hi, b.hi))
        })();
        search.evaluations += 1;
        let rec = log.iter_mut().rev().find(|r| r.label == label);
        match outcome {
            Ok((f, b)) => {
                if let Some(rec) = rec {
                    rec.certified = Some(f * b);
                }
                if best.as_ref().map_or(true, |x| f * b < x.0) {
                    best = Some((f * b, f, b, t));
                }
            }
            Err(e) => {
                if let Some(rec) = rec {
                    rec.note = Some(format!("certification failed: {e}"));
                }
            }
        }
    }
    let Some((product, forward_hi, backward_hi, tc)) = best else {
        return Err(Error::Uncertified("no candidate could be certified"));
    };
    // Back to the original coordinates: T[p2[a]][p[b]] = Tc[a][b].
    let mut map = DenseMatrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            map.set(p2[a], p[b], tc.get(a, b));
        }
    }
    Ok(BmEstimate { upper: product.max(1.0), map, forward_hi, backward_hi, log, evaluations: search.evaluations })
}

fn canonical_copy(body: &HullBody, perm: &[usize], signs: &[f64]) -> Result<HullBody> {
    let image = body.signed_permutation_image(perm, signs)?;
    // Unconditional generators are stored by absolute value, and generators
    // are sorted, so that relabelling the input leaves the copy unchanged.
    let comps = image
        .components()
        .iter()
        .map(|c| match c {
            BodyComponent::SignedPoints { points, unconditional } => {
                let mut points: Vec<Vec<f64>> = if *unconditional {
                    points.iter().map(|g| g.iter().map(|v| v.abs()).collect()).collect()
                } else {
                    points.clone()
                };
                points.sort_by(|a, b| {
                    a.iter().map(|v| v.to_bits()).cmp(b.iter().map(|v| v.to_bits()))
                });
                BodyComponent::SignedPoints { points, unconditional: *unconditional }
            }
            other => other.clone(),
        })
        .collect();
    HullBody::new(body.dim(), comps)
}

// ---------------------------------------------------------------------------
// Events

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// `VY ∈ α K̃`.
    OneVector,
    /// `V K ⊆ α K′`.
    OneBody,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventOptions {
    /// Relative slack: the outcome is `hi ≤ α(1 + tolerance)`. It is
    /// evaluated on the certified upper bound and the slack only absorbs the
    /// gauge tolerance, so a `true` outcome is optimistic by at most this
    /// factor.
    pub tolerance: f64,
    pub gauge_tol: f64,
    /// `c₀` of the spectral block for the one-vector diagnostics.
    pub diagnostics_c0: Option<f64>,
    pub op_norm: OpNormOptions,
}

impl Default for EventOptions {
    fn default() -> Self {
        Self { tolerance: 1e-6, gauge_tol: 1e-8, diagnostics_c0: None, op_norm: OpNormOptions::default() }
    }
}

/// Replication of the intermediate quantities of the one-vector argument.
#[derive(Debug, Clone, PartialEq)]
pub struct OneVectorDiagnostics {
    pub interval: SpectralInterval,
    pub qy_norm: f64,
    /// `‖P_{E_l} Q Y‖₂` per partial-support Euclidean component of `K̃`.
    pub projections: Vec<f64>,
    pub max_projection: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventReport {
    pub kind: EventKind,
    pub alpha: f64,
    pub outcome: bool,
    pub gauge_lo: f64,
    pub gauge_hi: f64,
    pub tolerance: f64,
    /// Factor applied to `V` to enforce `s_{n/2}(V) ≥ 1`.
    pub scale: f64,
    /// `‖V‖₂` after rescaling.
    pub operator_norm: f64,
    /// One-vector: `VY`. One-body: the point of `K` attaining `gauge_lo`.
    pub witness: Vec<f64>,
    /// One-body: whether the index sets of `K′` cover `[n]`.
    pub covered: Option<bool>,
    pub diagnostics: Option<OneVectorDiagnostics>,
    pub notes: Vec<String>,
}

impl EventReport {
    /// The outcome rule applied to the stored numbers.
    pub fn recompute(&self) -> bool {
        self.gauge_hi <= self.alpha * (1.0 + self.tolerance)
    }
}

/// `c / (√δ ln ‖V‖)`.
pub fn alpha_one_vector(c: f64, delta: f64, norm_v: f64) -> Result<f64> {
    if !(c > 0.0) || !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid("alpha needs c > 0 and delta in (0, 1]"));
    }
    if !(norm_v > 1.0) || !norm_v.is_finite() {
        return Err(Error::invalid("alpha needs ||V|| > 1"));
    }
    Ok(c / (math::sqrt(delta) * math::ln(norm_v)))
}

/// `c₀ / (√δ ln(1/δ))`.
pub fn alpha_one_body(c0: f64, delta: f64) -> Result<f64> {
    if !(c0 > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("alpha needs c0 > 0 and delta in (0, 1)"));
    }
    Ok(c0 / (math::sqrt(delta) * math::ln(1.0 / delta)))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("alpha must be positive"))
    }
}

/// `V`, rescaled to `s_{n/2}(V) = 1` when `s_{n/2}(V) < 1`, with the factor
/// and its singular values.
fn normalise(v: &DenseMatrix) -> Result<(DenseMatrix, f64, linalg::Svd)> {
    if !v.is_square() {
        return Err(Error::NotSquare { rows: v.rows(), cols: v.cols() });
    }
    let n = v.rows();
    if n < 2 {
        return Err(Error::invalid("events need n >= 2"));
    }
    let mut svd = linalg::svd(v)?;
    let mid = svd.s[n / 2 - 1];
    if !(mid > 0.0) {
        return Err(Error::invalid("V has s_{n/2}(V) = 0 and cannot be normalised"));
    }
    // Only maps violating s_{n/2}(V) ≥ 1 are rescaled.
    let scale = if mid < 1.0 { 1.0 / mid } else { 1.0 };
    svd.s.iter_mut().for_each(|s| *s *= scale);
    Ok((v.scaled(scale), scale, svd))
}

/// Decides `VY ∈ α K̃`, after rescaling `V` to `s_{n/2}(V) = 1` if it was
/// below one.
pub fn check_one_vector(
    v: &DenseMatrix,
    cap: &HullBody,
    y: &[f64],
    alpha: f64,
    opts: &EventOptions,
) -> Result<EventReport> {
    check_alpha(alpha)?;
    let n = cap.dim();
    if v.rows() != n || y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, found: if v.rows() != n { v.rows() } else { y.len() } });
    }
    let (vn, scale, svd) = normalise(v)?;
    let z = vn.mul_vec(y)?;
    let g = cap.gauge(&z, opts.gauge_tol)?;
    let mut notes = Vec::new();
    let diagnostics = match opts.diagnostics_c0 {
        Some(c0) => match diagnostics(&svd, cap, y, c0) {
            Ok(d) => Some(d),
            Err(e) => {
                notes.push(format!("diagnostics unavailable: {e}"));
                None
            }
        },
        None => None,
    };
    let mut report = EventReport {
        kind: EventKind::OneVector,
        alpha,
        outcome: false,
        gauge_lo: g.lo,
        gauge_hi: g.hi,
        tolerance: opts.tolerance,
        scale,
        operator_norm: svd.s[0],
        witness: z,
        covered: None,
        diagnostics,
        notes,
    };
    report.outcome = report.recompute();
    Ok(report)
}

fn diagnostics(svd: &linalg::Svd, cap: &HullBody, y: &[f64], c0: f64) -> Result<OneVectorDiagnostics> {
    let n = svd.dim();
    let interval = linalg::spectral_interval(&svd.s, svd.s[0], c0)?;
    let (q, p) = interval.projectors(svd)?;
    let qy = q.mul_vec(y)?;
    let mut projections = Vec::new();
    for c in cap.components() {
        if let BodyComponent::Ball { norm: BallNorm::L2, support: Some(s), .. } = c {
            if s.len() == n {
                continue;
            }
            let span: Vec<Vec<f64>> = s.iter().map(|&j| p.column(j)).collect();
            let basis = linalg::orthonormal_basis(&span, 1e-10);
            projections.push(norm2(&linalg::project_onto(&basis, &qy)));
        }
    }
    let max_projection = projections.iter().copied().fold(0.0, f64::max);
    Ok(OneVectorDiagnostics { interval, qy_norm: norm2(&qy), projections, max_projection })
}

/// Decides `V K ⊆ α K′` through the certified operator norm, after the same
/// rescaling as [`check_one_vector`]. The coverage of `[n]` by the index sets
/// of `K′` is recorded; when it fails the event is still evaluated and the
/// report carries a note.
pub fn check_one_body(
    v: &DenseMatrix,
    k: &HullBody,
    k2: &HullBody,
    k2_subsets: &[IndexSet],
    alpha: f64,
    opts: &EventOptions,
    stream: &Stream,
) -> Result<EventReport> {
    check_alpha(alpha)?;
    let n = k.dim();
    let (vn, scale, svd) = normalise(v)?;
    let op = op_norm(&vn, k, k2, &opts.op_norm, stream)?;
    let covered = covers(n, k2_subsets);
    let mut notes = Vec::new();
    if !covered {
        notes.push("index sets of the second body do not cover [n]".to_string());
    }
    let mut report = EventReport {
        kind: EventKind::OneBody,
        alpha,
        outcome: false,
        gauge_lo: op.lo,
        gauge_hi: op.hi,
        tolerance: opts.tolerance,
        scale,
        operator_norm: svd.s[0],
        witness: op.witness,
        covered: Some(covered),
        diagnostics: None,
        notes,
    };
    report.outcome = report.recompute();
    Ok(report)
}

// ---------------------------------------------------------------------------
// Separation experiment

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationOptions {
    pub bm: BmOptions,
    /// Pairs whose upper bound falls below this are counted.
    pub threshold: f64,
    /// Constant of the predicted separation scale.
    pub c1: f64,
    /// Evaluate at most this many pairs, in lexicographic order.
    pub max_pairs: Option<usize>,
    pub bins: usize,
}

impl Default for SeparationOptions {
    fn default() -> Self {
        Self { bm: BmOptions::default(), threshold: 1.5, c1: 1.0, max_pairs: None, bins: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairEstimate {
    pub i: usize,
    pub j: usize,
    pub upper: Option<f64>,
    pub forward_hi: Option<f64>,
    pub backward_hi: Option<f64>,
    /// Why `upper` is missing: over budget or a numeric failure.
    pub missing: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationReport {
    pub count: usize,
    /// Symmetric, unit diagonal; `None` for missing pairs.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub pairs: Vec<PairEstimate>,
    pub histogram: Vec<HistogramBin>,
    pub threshold: f64,
    pub below_threshold: usize,
    pub median: Option<f64>,
    /// `c₁ / (δ ln²(1/δ))`, when parameters are known.
    pub predicted_scale: Option<f64>,
    /// Coverage flag per sampled body.
    pub covers: Vec<bool>,
}

/// Samples `count` bodies (body `i` from `stream/body/i`) and estimates all
/// pairwise distances.
pub fn run_separation<R: Runner>(
    params: &ModelParams,
    count: usize,
    opts: &SeparationOptions,
    stream: &Stream,
    runner: &R,
) -> Result<(Vec<SampledBody>, SeparationReport)> {
    if count < 2 {
        return Err(Error::invalid("separation needs at least two bodies"));
    }
    let sampled = (0..count)
        .map(|i| sample_body(params, &stream.child("body").child(i)))
        .collect::<Result<Vec<_>>>()?;
    let bodies: Vec<HullBody> = sampled.iter().map(|s| s.body.clone()).collect();
    let mut report = separation_matrix(&bodies, opts, stream, runner)?;
    report.predicted_scale = (params.delta < 1.0).then(|| params.predicted_distance_scale(opts.c1));
    report.covers = sampled.iter().map(|s| s.covers).collect();
    Ok((sampled, report))
}

/// Pairwise distance upper bounds for given bodies; pair `(i, j)` uses
/// `stream/pair/i-j`.
pub fn separation_matrix<R: Runner>(
    bodies: &[HullBody],
    opts: &SeparationOptions,
    stream: &Stream,
    runner: &R,
) -> Result<SeparationReport> {
    let count = bodies.len();
    if count < 2 {
        return Err(Error::invalid("separation needs at least two bodies"));
    }
    let n = bodies[0].dim();
    if let Some(b) = bodies.iter().find(|b| b.dim() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: b.dim() });
    }
    let all: Vec<(usize, usize)> = (0..count).flat_map(|i| ((i + 1)..count).map(move |j| (i, j))).collect();
    let budget = opts.max_pairs.unwrap_or(all.len()).min(all.len());
    let results = runner.run(budget, |idx| {
        let (i, j) = all[idx];
        bm_upper(&bodies[i], &bodies[j], &opts.bm, &stream.child("pair").child(format!("{i}-{j}")))
    });
    let mut pairs = Vec::with_capacity(all.len());
    let mut matrix = vec![vec![None; count]; count];
    for (i, row) in matrix.iter_mut().enumerate() {
        row[i] = Some(1.0);
    }
    for (idx, &(i, j)) in all.iter().enumerate() {
        let pair = match results.get(idx) {
            Some(Ok(est)) => PairEstimate {
                i,
                j,
                upper: Some(est.upper),
                forward_hi: Some(est.forward_hi),
                backward_hi: Some(est.backward_hi),
                missing: None,
            },
            Some(Err(e)) => PairEstimate {
                i,
                j,
                upper: None,
                forward_hi: None,
                backward_hi: None,
                missing: Some(format!("failed: {e}")),
            },
            None => PairEstimate {
                i,
                j,
                upper: None,
                forward_hi: None,
                backward_hi: None,
                missing: Some("budget exhausted".to_string()),
            },
        };
        matrix[i][j] = pair.upper;
        matrix[j][i] = pair.upper;
        pairs.push(pair);
    }
    let mut values: Vec<f64> = pairs.iter().filter_map(|p| p.upper).collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let below_threshold = values.iter().filter(|&&v| v < opts.threshold).count();
    let median = (!values.is_empty()).then(|| {
        let k = values.len();
        if k % 2 == 1 {
            values[k / 2]
        } else {
            0.5 * (values[k / 2 - 1] + values[k / 2])
        }
    });
    Ok(SeparationReport {
        count,
        matrix,
        histogram: histogram(&values, opts.bins.max(1)),
        pairs,
        threshold: opts.threshold,
        below_threshold,
        median,
        predicted_scale: None,
        covers: Vec::new(),
    })
}

/// Equal-width bins over `[1, max]`; the last bin is closed.
pub fn histogram(sorted: &[f64], bins: usize) -> Vec<HistogramBin> {
    let Some(&top) = sorted.last() else { return Vec::new() };
    let lo = 1.0f64.min(sorted[0]);
    let width = if top > lo { (top - lo) / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin { lo: lo + b as f64 * width, hi: lo + (b + 1) as f64 * width, count: 0 })
        .collect();
    for &v in sorted {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        out[b].count += 1;
    }
    out
}
