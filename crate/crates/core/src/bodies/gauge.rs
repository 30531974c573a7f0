//! Certified gauge evaluation.
//!
//! `‖x‖_K = max{⟨x, y⟩ : h_K(y) ≤ 1}` is solved by a primal-dual interior-point
//! method on the dual side, where every constraint is linear except the
//! Euclidean-ball ones (`r²‖y_S‖² ≤ 1`). Each iterate gives
//!
//! * a lower bound `⟨x, y⟩ / h_K(y)` from the current point `y`, and
//! * an upper bound from an explicit decomposition `x = Σ pieces`, read off
//!   the current multipliers; any residual is patched coordinate-wise with the
//!   cheapest known representation of `eᵢ` in `K`.
//!
//! Iteration stops once the two bounds agree to the requested relative gap.
//! For unconditional bodies the problem is reduced to `y = sign(x)∘w`, `w ≥ 0`.

use alloc::vec;
use alloc::vec::Vec;

use super::{BallNorm, BodyComponent, HullBody};
use crate::linalg::solve_spd;
use crate::math::{self, dot};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaugeOptions {
    /// Relative gap `hi − lo ≤ tol·max(hi, 1e-12)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GaugeOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 250 }
    }
}

/// A summand of the primal decomposition: `vector ∈ cost · component`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugePiece {
    /// Index into [`HullBody::components`]; `None` for residual patches that
    /// combine several components.
    pub component: Option<usize>,
    pub vector: Vec<f64>,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaugeResult {
    pub lo: f64,
    pub hi: f64,
    /// `y` with `h_K(y) ≤ 1` and `⟨x, y⟩ = lo`.
    pub dual_witness: Vec<f64>,
    /// Pieces summing to `x` whose costs sum to `hi`.
    pub primal_witness: Vec<GaugePiece>,
    pub iterations: usize,
}

impl GaugeResult {
    pub fn gap(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, Copy)]
enum RowKind {
    /// `−wᵢ ≤ 0` (reduced form).
    Positive,
    /// `±yᵢ − wᵢ ≤ 0` (lifted form).
    Lift,
    Unc { comp: usize, gen: usize },
    Plain { comp: usize, gen: usize, sign: f64 },
    Ball1 { comp: usize, coord: usize, sign: f64 },
    BallInf { comp: usize },
}

/// `Σ val·z[idx] ≤ b`.
struct Row {
    idx: Vec<usize>,
    val: Vec<f64>,
    b: f64,
    kind: RowKind,
}

/// `radius · ‖z[idx]‖₂ ≤ 1`.
struct Quad {
    idx: Vec<usize>,
    radius: f64,
    comp: usize,
}

impl Quad {
    fn norm(&self, z: &[f64]) -> f64 {
        math::sqrt(self.idx.iter().map(|&i| z[i] * z[i]).sum())
    }
}

struct Problem {
    nvar: usize,
    dim: usize,
    reduced: bool,
    /// Coordinate of each primal (non-auxiliary) variable.
    coord: Vec<usize>,
    c: Vec<f64>,
    rows: Vec<Row>,
    quads: Vec<Quad>,
}

impl Problem {
    fn build(body: &HullBody, x: &[f64]) -> Self {
        if body.is_unconditional() {
            Self::build_reduced(body, x)
        } else {
            Self::build_lifted(body, x)
        }
    }

    /// Unconditional bodies: `y = sign(x)∘w` with `w ≥ 0`, and only the
    /// coordinates in the support of `x` carry a variable, since zeroing the
    /// others never increases `h_K`.
    fn build_reduced(body: &HullBody, x: &[f64]) -> Self {
        let n = body.dim();
        let coord: Vec<usize> = (0..n).filter(|&i| x[i] != 0.0).collect();
        let mut var = vec![usize::MAX; n];
        for (k, &i) in coord.iter().enumerate() {
            var[i] = k;
        }
        let restrict = |s: &[usize]| -> Vec<usize> { s.iter().map(|&i| var[i]).filter(|&k| k != usize::MAX).collect() };
        let mut rows = Vec::new();
        let mut quads = Vec::new();
        for k in 0..coord.len() {
            rows.push(Row { idx: vec![k], val: vec![-1.0], b: 0.0, kind: RowKind::Positive });
        }
        for (comp, c) in body.components().iter().enumerate() {
            match c {
                BodyComponent::SignedPoints { points, .. } => {
                    for (gen, g) in points.iter().enumerate() {
                        let (idx, val): (Vec<usize>, Vec<f64>) =
                            coord.iter().enumerate().filter(|(_, i)| g[**i] != 0.0).map(|(k, i)| (k, g[*i].abs())).unzip();
                        if !idx.is_empty() {
                            rows.push(Row { idx, val, b: 1.0, kind: RowKind::Unc { comp, gen } });
                        }
                    }
                }
                BodyComponent::Ball { norm, radius, .. } => {
                    let support = c.ball_support(n).unwrap_or_default();
                    let s = restrict(&support);
                    if s.is_empty() {
                        continue;
                    }
                    match norm {
                        BallNorm::L1 => {
                            for &k in &s {
                                rows.push(Row {
                                    idx: vec![k],
                                    val: vec![1.0],
                                    b: 1.0 / radius,
                                    kind: RowKind::Ball1 { comp, coord: coord[k], sign: 1.0 },
                                });
                            }
                        }
                        BallNorm::LInf => {
                            let val = vec![1.0; s.len()];
                            rows.push(Row { idx: s, val, b: 1.0 / radius, kind: RowKind::BallInf { comp } });
                        }
                        BallNorm::L2 => quads.push(Quad { idx: s, radius: *radius, comp }),
                    }
                }
            }
        }
        let c = coord.iter().map(|&i| x[i].abs()).collect();
        Self { nvar: coord.len(), dim: n, reduced: true, coord, c, rows, quads }
    }

    fn build_lifted(body: &HullBody, x: &[f64]) -> Self {
        let n = body.dim();
        // Coordinates that need an auxiliary bound wᵢ ≥ |yᵢ|.
        let mut lifted = vec![false; n];
        for c in body.components() {
            match c {
                BodyComponent::SignedPoints { points, unconditional: true } => {
                    for g in points {
                        for (i, v) in g.iter().enumerate() {
                            if *v != 0.0 {
                                lifted[i] = true;
                            }
                        }
                    }
                }
                BodyComponent::Ball { norm: BallNorm::LInf, .. } => {
                    for i in c.ball_support(n).unwrap_or_default() {
                        lifted[i] = true;
                    }
                }
                _ => {}
            }
        }
        let mut wvar = vec![usize::MAX; n];
        let mut nvar = n;
        for i in 0..n {
            if lifted[i] {
                wvar[i] = nvar;
                nvar += 1;
            }
        }
        let mut rows = Vec::new();
        let mut quads = Vec::new();
        for i in 0..n {
            if lifted[i] {
                rows.push(Row { idx: vec![i, wvar[i]], val: vec![1.0, -1.0], b: 0.0, kind: RowKind::Lift });
                rows.push(Row { idx: vec![i, wvar[i]], val: vec![-1.0, -1.0], b: 0.0, kind: RowKind::Lift });
            }
        }
        for (comp, c) in body.components().iter().enumerate() {
            match c {
                BodyComponent::SignedPoints { points, unconditional: true } => {
                    for (gen, g) in points.iter().enumerate() {
                        let (idx, val) = sparse_abs(g);
                        let idx = idx.into_iter().map(|i| wvar[i]).collect();
                        rows.push(Row { idx, val, b: 1.0, kind: RowKind::Unc { comp, gen } });
                    }
                }
                BodyComponent::SignedPoints { points, unconditional: false } => {
                    for (gen, g) in points.iter().enumerate() {
                        let idx: Vec<usize> = (0..n).filter(|&i| g[i] != 0.0).collect();
                        for sign in [1.0, -1.0] {
                            let val = idx.iter().map(|&i| sign * g[i]).collect();
                            rows.push(Row {
                                idx: idx.clone(),
                                val,
                                b: 1.0,
                                kind: RowKind::Plain { comp, gen, sign },
                            });
                        }
                    }
                }
                BodyComponent::Ball { norm, radius, .. } => {
                    let s = c.ball_support(n).unwrap_or_default();
                    match norm {
                        BallNorm::L1 => {
                            for &i in &s {
                                for sign in [1.0, -1.0] {
                                    rows.push(Row {
                                        idx: vec![i],
                                        val: vec![sign],
                                        b: 1.0 / radius,
                                        kind: RowKind::Ball1 { comp, coord: i, sign },
                                    });
                                }
                            }
                        }
                        BallNorm::LInf => {
                            let idx: Vec<usize> = s.iter().map(|&i| wvar[i]).collect();
                            let val = vec![1.0; idx.len()];
                            rows.push(Row { idx, val, b: 1.0 / radius, kind: RowKind::BallInf { comp } });
                        }
                        BallNorm::L2 => quads.push(Quad { idx: s, radius: *radius, comp }),
                    }
                }
            }
        }
        let mut c = vec![0.0; nvar];
        c[..n].copy_from_slice(x);
        Self { nvar, dim: n, reduced: false, coord: (0..n).collect(), c, rows, quads }
    }

    fn constraint_count(&self) -> usize {
        self.rows.len() + self.quads.len()
    }

    /// Strictly feasible start: `w = s·1` on the auxiliary (or reduced)
    /// variables, `y = 0` otherwise, with every constraint at most half tight.
    fn initial_point(&self) -> Vec<f64> {
        let first_w = if self.reduced { 0 } else { self.dim };
        let mut s = f64::INFINITY;
        for r in &self.rows {
            if r.b <= 0.0 {
                continue;
            }
            let load: f64 = r.idx.iter().zip(&r.val).filter(|(i, _)| **i >= first_w).map(|(_, v)| v.abs()).sum();
            if load > 0.0 {
                s = s.min(r.b / (2.0 * load));
            }
        }
        if self.reduced {
            for q in &self.quads {
                s = s.min(1.0 / (2.0 * q.radius * math::sqrt(q.idx.len() as f64)));
            }
        }
        if !s.is_finite() {
            s = 1.0;
        }
        let mut z = vec![0.0; self.nvar];
        for v in z.iter_mut().skip(first_w) {
            *v = s;
        }
        if !self.reduced {
            // Leave the origin so the Euclidean constraints are differentiable.
            let mut alpha = 0.5 * s;
            let mut f0 = Vec::new();
            self.values(&z, &mut f0);
            let mut f = Vec::new();
            loop {
                for i in 0..self.dim {
                    let bias = if self.c[i] < 0.0 { -0.25 } else { 0.25 };
                    z[i] = alpha * (self.c[i] + bias);
                }
                self.values(&z, &mut f);
                if f.iter().zip(&f0).all(|(v, v0)| *v <= 0.5 * v0) || alpha < 1e-12 {
                    break;
                }
                alpha *= 0.5;
            }
        }
        z
    }

    fn values(&self, z: &[f64], f: &mut Vec<f64>) {
        f.clear();
        for r in &self.rows {
            f.push(r.idx.iter().zip(&r.val).map(|(i, v)| v * z[*i]).sum::<f64>() - r.b);
        }
        for q in &self.quads {
            f.push(q.radius * q.norm(z) - 1.0);
        }
    }

    /// `−c + Σ λₖ ∇fₖ(z)`.
    fn dual_residual(&self, z: &[f64], lambda: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = self.c.iter().map(|v| -v).collect();
        for (row, l) in self.rows.iter().zip(lambda) {
            for (i, v) in row.idx.iter().zip(&row.val) {
                r[*i] += l * v;
            }
        }
        let nr = self.rows.len();
        for (q, l) in self.quads.iter().zip(&lambda[nr..]) {
            let nz = q.norm(z);
            for &i in &q.idx {
                r[i] += l * q.radius * z[i] / nz;
            }
        }
        r
    }

    fn residual_norm(&self, z: &[f64], lambda: &[f64], f: &[f64], t: f64) -> f64 {
        let rd = self.dual_residual(z, lambda);
        let mut acc: f64 = rd.iter().map(|v| v * v).sum();
        for (l, fk) in lambda.iter().zip(f) {
            let rc = -l * fk - 1.0 / t;
            acc += rc * rc;
        }
        math::sqrt(acc)
    }
}

fn sparse_abs(g: &[f64]) -> (Vec<usize>, Vec<f64>) {
    g.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, v.abs())).unzip()
}

struct Bounds {
    lo: f64,
    witness: Vec<f64>,
    hi: f64,
    pieces: Vec<GaugePiece>,
}

pub(super) fn solve(body: &HullBody, x: &[f64], opts: &GaugeOptions) -> Result<GaugeResult> {
    let n = body.dim();
    let scale = math::norm_inf(x);
    if scale == 0.0 {
        return Ok(GaugeResult {
            lo: 0.0,
            hi: 0.0,
            dual_witness: vec![0.0; n],
            primal_witness: Vec::new(),
            iterations: 0,
        });
    }
    let xs: Vec<f64> = x.iter().map(|v| v / scale).collect();
    let prob = Problem::build(body, &xs);
    let m = prob.constraint_count();
    let nv = prob.nvar;

    let mut z = prob.initial_point();
    let mut f = Vec::with_capacity(m);
    prob.values(&z, &mut f);
    let mut lambda: Vec<f64> = f.iter().map(|v| 1.0 / (-v)).collect();

    let mut best = Bounds { lo: 0.0, witness: vec![0.0; n], hi: f64::INFINITY, pieces: Vec::new() };
    let mut h = vec![0.0; nv * nv];
    let mut f_new = Vec::with_capacity(m);

    let mut last_step = 1.0;
    let mut iterations = 0;
    for iter in 1..=opts.max_iter {
        iterations = iter;
        let eta: f64 = -f.iter().zip(&lambda).map(|(a, b)| a * b).sum::<f64>();
        // Shrink the duality target aggressively only after a long step.
        let mu = if last_step >= 0.5 { 10.0 } else if last_step >= 0.1 { 3.0 } else { 1.5 };
        let t = mu * m as f64 / eta.max(1e-300);

        // Reduced Newton system.
        h.iter_mut().for_each(|v| *v = 0.0);
        let rd = prob.dual_residual(&z, &lambda);
        let mut rhs: Vec<f64> = rd.iter().map(|v| -v).collect();
        let nr = prob.rows.len();
        for (k, row) in prob.rows.iter().enumerate() {
            let d = lambda[k] / (-f[k]);
            let rc = -lambda[k] * f[k] - 1.0 / t;
            let coef = rc / (-f[k]);
            for (a, (ia, va)) in row.idx.iter().zip(&row.val).enumerate() {
                rhs[*ia] += coef * va;
                for (ib, vb) in row.idx.iter().zip(&row.val).skip(a) {
                    let add = d * va * vb;
                    h[ia * nv + ib] += add;
                    if ia != ib {
                        h[ib * nv + ia] += add;
                    }
                }
            }
        }
        for (qk, q) in prob.quads.iter().enumerate() {
            let k = nr + qk;
            let d = lambda[k] / (-f[k]);
            let rc = -lambda[k] * f[k] - 1.0 / t;
            let coef = rc / (-f[k]);
            let nz = q.norm(&z);
            let unit: Vec<f64> = q.idx.iter().map(|&i| z[i] / nz).collect();
            let curv = lambda[k] * q.radius / nz;
            for (a, &ia) in q.idx.iter().enumerate() {
                rhs[ia] += coef * q.radius * unit[a];
                h[ia * nv + ia] += curv;
                for (b, &ib) in q.idx.iter().enumerate() {
                    h[ia * nv + ib] += (d * q.radius * q.radius - curv) * unit[a] * unit[b];
                }
            }
        }
        let Some(dz) = solve_spd(&mut h, nv, &rhs) else {
            break;
        };

        // Multiplier step from the linearised complementarity.
        let mut dl = vec![0.0; m];
        for (k, row) in prob.rows.iter().enumerate() {
            let gdz: f64 = row.idx.iter().zip(&row.val).map(|(i, v)| v * dz[*i]).sum();
            let rc = -lambda[k] * f[k] - 1.0 / t;
            dl[k] = (rc - lambda[k] * gdz) / f[k];
        }
        for (qk, q) in prob.quads.iter().enumerate() {
            let k = nr + qk;
            let nz = q.norm(&z);
            let gdz: f64 = q.idx.iter().map(|&i| q.radius * z[i] / nz * dz[i]).sum();
            let rc = -lambda[k] * f[k] - 1.0 / t;
            dl[k] = (rc - lambda[k] * gdz) / f[k];
        }

        let mut s_max: f64 = 1.0;
        for (l, d) in lambda.iter().zip(&dl) {
            if *d < 0.0 {
                s_max = s_max.min(-l / d);
            }
        }
        // Largest step keeping every constraint strictly satisfied.
        for (k, row) in prob.rows.iter().enumerate() {
            let ad: f64 = row.idx.iter().zip(&row.val).map(|(i, v)| v * dz[*i]).sum();
            if ad > 0.0 {
                s_max = s_max.min(-f[k] / ad);
            }
        }
        for q in &prob.quads {
            let w = q.radius * q.radius;
            let a: f64 = w * q.idx.iter().map(|&i| dz[i] * dz[i]).sum::<f64>();
            let b: f64 = 2.0 * w * q.idx.iter().map(|&i| z[i] * dz[i]).sum::<f64>();
            let nz = q.norm(&z);
            let c = w * nz * nz - 1.0;
            if a > 0.0 {
                let root = (-b + math::sqrt(b * b - 4.0 * a * c)) / (2.0 * a);
                s_max = s_max.min(root);
            }
        }
        let mut s = 0.99 * s_max;
        let r0 = prob.residual_norm(&z, &lambda, &f, t);
        let mut z_new = z.clone();
        let mut l_new = lambda.clone();
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..nv {
                z_new[i] = z[i] + s * dz[i];
            }
            prob.values(&z_new, &mut f_new);
            if f_new.iter().all(|v| *v < 0.0) {
                for k in 0..m {
                    l_new[k] = lambda[k] + s * dl[k];
                }
                let r1 = prob.residual_norm(&z_new, &l_new, &f_new, t);
                if r1 <= (1.0 - 0.01 * s) * r0 {
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            // Take the feasible damped step anyway; the certificates below
            // remain valid for any iterate.
            if !f_new.iter().all(|v| *v < 0.0) {
                break;
            }
            for k in 0..m {
                l_new[k] = (lambda[k] + s * dl[k]).max(1e-300);
            }
        }
        last_step = s;
        z = z_new;
        lambda = l_new;
        core::mem::swap(&mut f, &mut f_new);

        update_lower(body, &prob, &xs, &z, &mut best);
        update_upper(body, &prob, &xs, &z, &lambda, &mut best);
        if best.hi - best.lo <= opts.tol * best.hi.max(1e-12) {
            return Ok(finish(best, scale, iter));
        }
    }
    Err(Error::ToleranceNotReached { lo: best.lo * scale, hi: best.hi * scale, iterations })
}

fn finish(best: Bounds, scale: f64, iterations: usize) -> GaugeResult {
    let pieces = best
        .pieces
        .into_iter()
        .map(|p| GaugePiece {
            component: p.component,
            vector: p.vector.iter().map(|v| v * scale).collect(),
            cost: p.cost * scale,
        })
        .collect();
    GaugeResult {
        lo: best.lo * scale,
        hi: best.hi * scale,
        dual_witness: best.witness,
        primal_witness: pieces,
        iterations,
    }
}

fn update_lower(body: &HullBody, prob: &Problem, xs: &[f64], z: &[f64], best: &mut Bounds) {
    let y: Vec<f64> = if prob.reduced {
        let mut y = vec![0.0; prob.dim];
        for (k, &i) in prob.coord.iter().enumerate() {
            y[i] = if xs[i] > 0.0 { z[k] } else { -z[k] };
        }
        y
    } else {
        z[..prob.dim].to_vec()
    };
    let h = body.support_unchecked(&y);
    if !(h > 0.0) {
        return;
    }
    let witness: Vec<f64> = y.iter().map(|v| v / h).collect();
    let lo = dot(xs, &witness);
    if lo > best.lo {
        best.lo = lo;
        best.witness = witness;
    }
}

/// Builds the decomposition implied by the multipliers and keeps it if it
/// beats the best upper bound so far.
fn update_upper(body: &HullBody, prob: &Problem, xs: &[f64], z: &[f64], lambda: &[f64], best: &mut Bounds) {
    let n = prob.dim;
    let ncomp = body.components().len();
    let mut envelope: Vec<Option<Vec<f64>>> = vec![None; ncomp];
    let mut envelope_cost = vec![0.0; ncomp];
    let mut direct: Vec<Option<Vec<f64>>> = vec![None; ncomp];
    let mut plain_coef: Vec<Vec<f64>> = vec![Vec::new(); ncomp];

    for (row, &l) in prob.rows.iter().zip(lambda) {
        match row.kind {
            RowKind::Positive | RowKind::Lift => {}
            RowKind::Unc { comp, gen } => {
                let BodyComponent::SignedPoints { points, .. } = &body.components()[comp] else { continue };
                let env = envelope[comp].get_or_insert_with(|| vec![0.0; n]);
                for (i, g) in points[gen].iter().enumerate() {
                    env[i] += l * g.abs();
                }
                envelope_cost[comp] += l;
            }
            RowKind::BallInf { comp } => {
                let BodyComponent::Ball { radius, .. } = &body.components()[comp] else { continue };
                let env = envelope[comp].get_or_insert_with(|| vec![0.0; n]);
                for i in body.components()[comp].ball_support(n).unwrap_or_default() {
                    env[i] += l;
                }
                envelope_cost[comp] += l / radius;
            }
            RowKind::Ball1 { comp, coord, sign } => {
                let v = direct[comp].get_or_insert_with(|| vec![0.0; n]);
                v[coord] += sign * l;
            }
            RowKind::Plain { comp, gen, sign } => {
                let BodyComponent::SignedPoints { points, .. } = &body.components()[comp] else { continue };
                let coef = &mut plain_coef[comp];
                if coef.is_empty() {
                    coef.resize(points.len(), 0.0);
                }
                coef[gen] += sign * l;
            }
        }
    }
    let nr = prob.rows.len();
    for (q, &l) in prob.quads.iter().zip(&lambda[nr..]) {
        let v = direct[q.comp].get_or_insert_with(|| vec![0.0; n]);
        let nz = q.norm(z);
        for &k in &q.idx {
            v[prob.coord[k]] += l * q.radius * z[k] / nz;
        }
    }

    let mut pieces: Vec<GaugePiece> = Vec::new();
    // Target for the envelope components, and sign pattern to apply.
    let target: Vec<f64>;
    if prob.reduced {
        // Direct pieces are nonnegative in |x|-space; fold them into the
        // envelope shrinkage so that every piece keeps its sign pattern.
        target = xs.to_vec();
    } else {
        let mut rest = xs.to_vec();
        for (comp, coef) in plain_coef.iter().enumerate() {
            if coef.is_empty() {
                continue;
            }
            let BodyComponent::SignedPoints { points, .. } = &body.components()[comp] else { continue };
            let mut v = vec![0.0; n];
            for (g, a) in points.iter().zip(coef) {
                for (vi, gi) in v.iter_mut().zip(g) {
                    *vi += a * gi;
                }
            }
            for (r, vi) in rest.iter_mut().zip(&v) {
                *r -= vi;
            }
            pieces.push(GaugePiece { component: Some(comp), vector: v, cost: math::norm1(coef) });
        }
        for (comp, d) in direct.iter_mut().enumerate() {
            if let Some(v) = d.take() {
                for (r, vi) in rest.iter_mut().zip(&v) {
                    *r -= vi;
                }
                pieces.push(GaugePiece { component: Some(comp), cost: ball_cost(&body.components()[comp], &v), vector: v });
            }
        }
        target = rest;
    }

    // Capacity per coordinate from envelopes (and, in reduced form, from the
    // nonnegative ball pieces).
    let mut cap = vec![0.0; n];
    for env in envelope.iter().flatten() {
        for (c, e) in cap.iter_mut().zip(env) {
            *c += e;
        }
    }
    for v in direct.iter().flatten() {
        for (c, e) in cap.iter_mut().zip(v) {
            *c += e.max(0.0);
        }
    }
    let mut theta = vec![0.0; n];
    let mut deficit = vec![0.0; n];
    for i in 0..n {
        let need = target[i].abs();
        if cap[i] > need {
            theta[i] = need / cap[i];
        } else {
            theta[i] = if cap[i] > 0.0 { 1.0 } else { 0.0 };
            deficit[i] = need - cap[i];
        }
    }
    let sign = |i: usize| -> f64 {
        if target[i] > 0.0 {
            1.0
        } else if target[i] < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    for (comp, env) in envelope.iter().enumerate() {
        if let Some(env) = env {
            let v: Vec<f64> = (0..n).map(|i| sign(i) * theta[i] * env[i]).collect();
            pieces.push(GaugePiece { component: Some(comp), vector: v, cost: envelope_cost[comp] });
        }
    }
    for (comp, d) in direct.iter().enumerate() {
        if let Some(p) = d {
            let v: Vec<f64> = (0..n).map(|i| sign(i) * theta[i] * p[i].max(0.0)).collect();
            let cost = ball_cost(&body.components()[comp], &v);
            pieces.push(GaugePiece { component: Some(comp), vector: v, cost });
        }
    }
    let costs = body.coordinate_costs();
    let mut patches: Vec<GaugePiece> = Vec::new();
    for i in 0..n {
        if deficit[i] <= 0.0 {
            continue;
        }
        let owner = costs[i].component;
        let amount = sign(i) * deficit[i];
        let cost = deficit[i] * costs[i].cost;
        match patches.iter_mut().find(|p| p.component == owner) {
            Some(p) => {
                p.vector[i] += amount;
                p.cost += cost;
            }
            None => {
                let mut v = vec![0.0; n];
                v[i] = amount;
                patches.push(GaugePiece { component: owner, vector: v, cost });
            }
        }
    }
    pieces.extend(patches);
    pieces.retain(|p| p.cost > 0.0 || p.vector.iter().any(|v| *v != 0.0));
    let hi: f64 = pieces.iter().map(|p| p.cost).sum();
    if hi.is_finite() && hi < best.hi {
        best.hi = hi;
        best.pieces = pieces;
    }
}

fn ball_cost(c: &BodyComponent, v: &[f64]) -> f64 {
    match c {
        BodyComponent::Ball { norm, radius, .. } => norm.norm(v) / radius,
        _ => f64::INFINITY,
    }
}
