//! Dense real matrices, a one-sided Jacobi SVD, and the extraction of a
//! block of comparable singular values together with its projectors.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::math::{self, dot, norm2, sqrt};
use crate::{Error, Result};

/// Row-major dense matrix with finite entries.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::DimensionMismatch { expected: rows * cols, found: data.len() });
        }
        if !math::all_finite(&data) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch { expected: c, found: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::new(r, c, data)
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self> {
        let c = cols.len();
        let r = cols.first().map_or(0, |col| col.len());
        let mut m = Self::zeros(r, c);
        for (j, col) in cols.iter().enumerate() {
            if col.len() != r {
                return Err(Error::DimensionMismatch { expected: r, found: col.len() });
            }
            for (i, x) in col.iter().enumerate() {
                m.data[i * c + j] = *x;
            }
        }
        if !math::all_finite(&m.data) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(m)
    }

    /// Outer product `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let mut m = Self::zeros(u.len(), v.len());
        for (i, a) in u.iter().enumerate() {
            for (j, b) in v.iter().enumerate() {
                m.data[i * v.len() + j] = a * b;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.get(r, c);
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch { expected: self.cols, found: other.rows });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch { expected: self.cols, found: x.len() });
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `selfᵀ x`.
    pub fn tr_mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.rows {
            return Err(Error::DimensionMismatch { expected: self.rows, found: x.len() });
        }
        let mut out = vec![0.0; self.cols];
        for (r, xr) in x.iter().enumerate() {
            if *xr == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * xr;
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                found: other.rows * other.cols,
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// Hilbert-Schmidt (Frobenius) norm.
    pub fn hs_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        math::norm_inf(&self.data)
    }

    /// Inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Self> {
        if !self.is_square() {
            return Err(Error::NotSquare { rows: self.rows, cols: self.cols });
        }
        let n = self.rows;
        let scale = self.max_abs();
        if scale == 0.0 {
            return Err(Error::Singular);
        }
        let mut a = self.data.clone();
        let mut inv = Self::identity(n).data;
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
                .unwrap_or(col);
            if a[pivot * n + col].abs() <= 1e-13 * scale {
                return Err(Error::Singular);
            }
            if pivot != col {
                for k in 0..n {
                    a.swap(pivot * n + k, col * n + k);
                    inv.swap(pivot * n + k, col * n + k);
                }
            }
            let p = a[col * n + col];
            for k in 0..n {
                a[col * n + k] /= p;
                inv[col * n + k] /= p;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a[r * n + col];
                if f == 0.0 {
                    continue;
                }
                for k in 0..n {
                    a[r * n + k] -= f * a[col * n + k];
                    inv[r * n + k] -= f * inv[col * n + k];
                }
            }
        }
        Self::new(n, n, inv)
    }

    fn check_finite(&self) -> Result<()> {
        if math::all_finite(&self.data) {
            Ok(())
        } else {
            Err(Error::NonFinite("matrix entries"))
        }
    }
}

/// Singular value decomposition `M = Σ sᵢ uᵢ vᵢᵀ` of a square matrix.
#[derive(Debug, Clone)]
pub struct Svd {
    /// Nonincreasing, nonnegative.
    pub s: Vec<f64>,
    /// Left singular vectors, one per entry of `s`.
    pub u: Vec<Vec<f64>>,
    /// Right singular vectors, one per entry of `s`.
    pub v: Vec<Vec<f64>>,
}

impl Svd {
    pub fn dim(&self) -> usize {
        self.s.len()
    }

    /// `Σ sᵢ uᵢ vᵢᵀ` over all ranks.
    pub fn reconstruct(&self) -> DenseMatrix {
        let n = self.dim();
        partial_sum(n, (0..n).map(|i| (self.s[i], &self.u[i], &self.v[i])))
    }
}

fn partial_sum<'a>(
    n: usize,
    terms: impl Iterator<Item = (f64, &'a Vec<f64>, &'a Vec<f64>)>,
) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(n, n);
    for (s, u, v) in terms {
        for r in 0..n {
            let a = s * u[r];
            if a == 0.0 {
                continue;
            }
            for c in 0..n {
                m.data[r * n + c] += a * v[c];
            }
        }
    }
    m
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD. Deterministic: fixed cyclic pivot order,
/// stable sort of the singular values, and Gram-Schmidt completion of the left
/// vectors belonging to zero singular values.
pub fn svd(m: &DenseMatrix) -> Result<Svd> {
    if !m.is_square() {
        return Err(Error::NotSquare { rows: m.rows, cols: m.cols });
    }
    m.check_finite()?;
    let n = m.rows;
    // Working columns of M·V, and V itself.
    let mut w: Vec<Vec<f64>> = (0..n).map(|c| m.column(c)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            e
        })
        .collect();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= 1e-15 * sqrt(alpha) * sqrt(beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + math::hypot(1.0, zeta));
                let c = 1.0 / math::hypot(1.0, t);
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut triples: Vec<(f64, usize)> = w.iter().enumerate().map(|(i, c)| (norm2(c), i)).collect();
    triples.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let smax = triples.first().map_or(0.0, |t| t.0);
    let cutoff = smax * 1e-300_f64.max(f64::EPSILON * n as f64 * 1e-3);

    let mut s = Vec::with_capacity(n);
    let mut us: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut vs = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &(sigma, idx)) in triples.iter().enumerate() {
        vs.push(v[idx].clone());
        if sigma > cutoff && sigma > 0.0 {
            s.push(sigma);
            us.push(w[idx].iter().map(|x| x / sigma).collect());
        } else {
            s.push(0.0);
            us.push(Vec::new());
            missing.push(k);
        }
    }
    if !missing.is_empty() {
        complete_basis(&mut us, &missing, n);
    }
    Ok(Svd { s, u: us, v: vs })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    let cp = &mut left[p];
    let cq = &mut right[0];
    for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
        let x = *a;
        let y = *b;
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Fills the empty slots `missing` of `basis` with unit vectors orthogonal to
/// every other slot, drawing candidates from the standard basis.
fn complete_basis(basis: &mut [Vec<f64>], missing: &[usize], n: usize) {
    let mut candidate = 0;
    for &slot in missing {
        while candidate < n {
            let mut e = vec![0.0; n];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for b in basis.iter().filter(|b| !b.is_empty()) {
                    let d = dot(&e, b);
                    for (x, y) in e.iter_mut().zip(b) {
                        *x -= d * y;
                    }
                }
            }
            let nrm = norm2(&e);
            if nrm > 1e-8 {
                basis[slot] = e.iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &DenseMatrix) -> Result<f64> {
    if m.is_square() {
        return Ok(svd(m)?.s.first().copied().unwrap_or(0.0));
    }
    // Rectangular input: pad to square with zeros, singular values unchanged.
    let k = m.rows.max(m.cols);
    let mut sq = DenseMatrix::zeros(k, k);
    for r in 0..m.rows {
        for c in 0..m.cols {
            sq.set(r, c, m.get(r, c));
        }
    }
    Ok(svd(&sq)?.s.first().copied().unwrap_or(0.0))
}

pub fn hs_norm(m: &DenseMatrix) -> Result<f64> {
    m.check_finite()?;
    Ok(m.hs_norm())
}

/// A block of consecutive singular values `s_{i1} ≥ … ≥ s_{i2}` with
/// `s_{i1} / s_{i2} ≤ 2`. Ranks are 1-based and the block is inclusive, so it
/// holds `r + 1` values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralInterval {
    pub i1: usize,
    pub i2: usize,
    /// `i2 - i1`.
    pub r: usize,
    pub ratio: f64,
}

impl SpectralInterval {
    /// Number of singular values in the block.
    pub fn cardinality(&self) -> usize {
        self.r + 1
    }

    pub fn projectors(&self, svd: &Svd) -> Result<(DenseMatrix, DenseMatrix)> {
        build_projectors(svd, self.i1, self.i2)
    }
}

/// Block length `max(1, ⌊c0·n / max(1, log₂ ‖V‖)⌋)`, capped so that the block
/// fits inside the ranks `[1, ⌊n/2⌋]`.
pub fn interval_length(n: usize, norm_v: f64, c0: f64) -> usize {
    let half = n / 2;
    let denom = math::log2(norm_v).max(1.0);
    let raw = math::floor(c0 * n as f64 / denom).max(1.0) as usize;
    raw.min(half.saturating_sub(1)).max(1)
}

/// Whether a qualifying window is forced for every spectrum with
/// `s_{n/2} ≥ 1` and `s₁ ≤ norm_v`: the `⌊(⌊n/2⌋ − 1)/r⌋` chained windows
/// starting at rank 1 telescope to at most `norm_v`, so they cannot all
/// exceed ratio 2 once `norm_v ≤ 2^count`.
pub fn pigeonhole_guaranteed(n: usize, norm_v: f64, c0: f64) -> bool {
    let half = n / 2;
    if half < 2 {
        return false;
    }
    let count = (half - 1) / interval_length(n, norm_v, c0);
    math::log2(norm_v) <= count as f64
}

/// Scans windows `[i, i + r]` inside `[1, ⌊n/2⌋]` and returns the first whose
/// endpoint ratio is at most 2. Fails with `PigeonholeViolated` only when
/// [`pigeonhole_guaranteed`] is false.
pub fn spectral_interval(s: &[f64], norm_v: f64, c0: f64) -> Result<SpectralInterval> {
    let n = s.len();
    let half = n / 2;
    if half < 2 {
        return Err(Error::invalid("spectral interval needs n >= 4"));
    }
    if !(c0 > 0.0 && c0 <= 0.5) {
        return Err(Error::invalid("c0 must lie in (0, 1/2]"));
    }
    if !math::all_finite(s) || !norm_v.is_finite() {
        return Err(Error::NonFinite("singular values"));
    }
    if s.windows(2).any(|w| w[1] > w[0]) || s.iter().any(|x| *x < 0.0) {
        return Err(Error::invalid("singular values must be nonincreasing and nonnegative"));
    }
    if s[half - 1] < 1.0 {
        return Err(Error::invalid("s_{n/2} must be at least 1"));
    }
    if norm_v < 1.0 {
        return Err(Error::invalid("operator norm must be at least 1"));
    }
    let r = interval_length(n, norm_v, c0);
    for i1 in 1..=(half - r) {
        let i2 = i1 + r;
        let ratio = s[i1 - 1] / s[i2 - 1];
        if ratio <= 2.0 {
            return Ok(SpectralInterval { i1, i2, r, ratio });
        }
    }
    Err(Error::PigeonholeViolated { n, block: r })
}

/// `Q = Σ_{i∈[first,last]} sᵢuᵢvᵢᵀ` and `P = Σ_{i∈[first,last]} uᵢuᵢᵀ`, ranks 1-based inclusive.
pub fn build_projectors(svd: &Svd, first: usize, last: usize) -> Result<(DenseMatrix, DenseMatrix)> {
    let n = svd.dim();
    if first == 0 || first > last || last > n {
        return Err(Error::invalid("projector interval out of range"));
    }
    let range = (first - 1)..last;
    let q = partial_sum(n, range.clone().map(|i| (svd.s[i], &svd.u[i], &svd.v[i])));
    let p = partial_sum(n, range.map(|i| (1.0, &svd.u[i], &svd.u[i])));
    Ok((q, p))
}

/// Orthonormal basis of the span of `vectors` by twice-iterated modified
/// Gram-Schmidt; vectors whose residual falls below `tol` (relative to the
/// largest input norm) are dropped.
pub fn orthonormal_basis(vectors: &[Vec<f64>], tol: f64) -> Vec<Vec<f64>> {
    let scale = vectors.iter().map(|v| norm2(v)).fold(0.0, f64::max);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    if scale == 0.0 {
        return basis;
    }
    for v in vectors {
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &basis {
                let d = dot(&w, b);
                for (x, y) in w.iter_mut().zip(b) {
                    *x -= d * y;
                }
            }
        }
        let nrm = norm2(&w);
        if nrm > tol * scale {
            basis.push(w.iter().map(|x| x / nrm).collect());
        }
    }
    basis
}

/// Orthogonal projection of `x` onto the span of an orthonormal basis.
pub fn project_onto(basis: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for b in basis {
        let d = dot(x, b);
        for (o, y) in out.iter_mut().zip(b) {
            *o += d * y;
        }
    }
    out
}

/// Least-squares coefficients `c` minimising `‖Σ cⱼ aⱼ − b‖₂` for the columns
/// `a`, via Gram-Schmidt QR. Dependent columns receive coefficient zero.
pub fn least_squares(columns: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let k = columns.len();
    let scale = columns.iter().map(|v| norm2(v)).fold(0.0, f64::max);
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut pivots: Vec<usize> = Vec::new();
    // r[j] holds the coefficients of accepted column j in terms of q.
    let mut r: Vec<Vec<f64>> = Vec::new();
    for (j, col) in columns.iter().enumerate() {
        let mut w = col.clone();
        let mut coeffs = vec![0.0; q.len() + 1];
        for _ in 0..2 {
            for (i, qi) in q.iter().enumerate() {
                let d = dot(&w, qi);
                coeffs[i] += d;
                for (x, y) in w.iter_mut().zip(qi) {
                    *x -= d * y;
                }
            }
        }
        let nrm = norm2(&w);
        if scale > 0.0 && nrm > 1e-12 * scale {
            coeffs[q.len()] = nrm;
            q.push(w.iter().map(|x| x / nrm).collect());
            pivots.push(j);
            r.push(coeffs);
        }
    }
    let rhs: Vec<f64> = q.iter().map(|qi| dot(qi, b)).collect();
    let m = q.len();
    let mut sol = vec![0.0; m];
    for i in (0..m).rev() {
        let mut acc = rhs[i];
        for j in (i + 1)..m {
            acc -= r[j][i] * sol[j];
        }
        sol[i] = acc / r[i][i];
    }
    let mut out = vec![0.0; k];
    for (i, &p) in pivots.iter().enumerate() {
        out[p] = sol[i];
    }
    out
}

/// Solves `H x = b` for symmetric positive (semi)definite `H` stored densely
/// row-major, by Cholesky with a small diagonal shift on breakdown.
pub fn solve_spd(h: &mut [f64], n: usize, b: &[f64]) -> Option<Vec<f64>> {
    let diag_max = (0..n).map(|i| h[i * n + i].abs()).fold(0.0, f64::max).max(1e-300);
    let original: Vec<f64> = h.to_vec();
    let mut shift = 0.0;
    for _attempt in 0..8 {
        if shift > 0.0 {
            h.copy_from_slice(&original);
            for i in 0..n {
                h[i * n + i] += shift;
            }
        }
        if cholesky_in_place(h, n) {
            let mut y = b.to_vec();
            for i in 0..n {
                let mut acc = y[i];
                for k in 0..i {
                    acc -= h[i * n + k] * y[k];
                }
                y[i] = acc / h[i * n + i];
            }
            for i in (0..n).rev() {
                let mut acc = y[i];
                for k in (i + 1)..n {
                    acc -= h[k * n + i] * y[k];
                }
                y[i] = acc / h[i * n + i];
            }
            if math::all_finite(&y) {
                return Some(y);
            }
        }
        shift = if shift == 0.0 { diag_max * 1e-14 } else { shift * 100.0 };
    }
    None
}

fn cholesky_in_place(h: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = h[j * n + j];
        for k in 0..j {
            d -= h[j * n + k] * h[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = sqrt(d);
        h[j * n + j] = d;
        for i in (j + 1)..n {
            let mut acc = h[i * n + j];
            for k in 0..j {
                acc -= h[i * n + k] * h[j * n + k];
            }
            h[i * n + j] = acc / d;
        }
    }
    true
}
