//! Convex bodies given as absolute convex hulls of simple components, with
//! exact support functions and certified gauge evaluation.

mod gauge;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg;
use crate::math::{self, norm2};
use crate::randmodel::{IndexSet, ModelParams};
use crate::{Error, Result};

pub use gauge::{GaugeOptions, GaugePiece, GaugeResult};

/// The `p` of a scaled `ℓ_p` ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BallNorm {
    L1,
    L2,
    LInf,
}

impl BallNorm {
    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            BallNorm::L1 => math::norm1(v),
            BallNorm::L2 => norm2(v),
            BallNorm::LInf => math::norm_inf(v),
        }
    }

    /// Norm of the conjugate exponent.
    pub fn dual_norm(self, v: &[f64]) -> f64 {
        match self {
            BallNorm::L1 => math::norm_inf(v),
            BallNorm::L2 => norm2(v),
            BallNorm::LInf => math::norm1(v),
        }
    }

    pub fn p(self) -> f64 {
        match self {
            BallNorm::L1 => 1.0,
            BallNorm::L2 => 2.0,
            BallNorm::LInf => f64::INFINITY,
        }
    }
}

/// One piece of an absolute convex hull.
#[derive(Debug, Clone, PartialEq)]
pub enum BodyComponent {
    /// `abs.conv(±g)` over the generators, or their unconditional hull
    /// (closed under all coordinate sign flips) when `unconditional` is set.
    SignedPoints { points: Vec<Vec<f64>>, unconditional: bool },
    /// `radius · B_p^S`: the `ℓ_p` ball on the coordinates in `support`
    /// (all coordinates when `None`).
    Ball { norm: BallNorm, radius: f64, support: Option<Vec<usize>> },
}

impl BodyComponent {
    pub fn points(points: Vec<Vec<f64>>, unconditional: bool) -> Self {
        BodyComponent::SignedPoints { points, unconditional }
    }

    pub fn ball(norm: BallNorm, radius: f64) -> Self {
        BodyComponent::Ball { norm, radius, support: None }
    }

    pub fn ball_on(norm: BallNorm, radius: f64, support: Vec<usize>) -> Self {
        BodyComponent::Ball { norm, radius, support: Some(support) }
    }

    pub fn is_unconditional(&self) -> bool {
        match self {
            BodyComponent::SignedPoints { unconditional, .. } => *unconditional,
            BodyComponent::Ball { .. } => true,
        }
    }

    /// `h(y) = max_{x ∈ component} ⟨x, y⟩`.
    pub fn support(&self, y: &[f64]) -> f64 {
        match self {
            BodyComponent::SignedPoints { points, unconditional: true } => points
                .iter()
                .map(|g| g.iter().zip(y).map(|(a, b)| (a * b).abs()).sum::<f64>())
                .fold(0.0, f64::max),
            BodyComponent::SignedPoints { points, unconditional: false } => {
                points.iter().map(|g| math::dot(g, y).abs()).fold(0.0, f64::max)
            }
            BodyComponent::Ball { norm, radius, support: None } => radius * norm.dual_norm(y),
            BodyComponent::Ball { norm, radius, support: Some(s) } => {
                let restricted: Vec<f64> = s.iter().map(|&i| y[i]).collect();
                radius * norm.dual_norm(&restricted)
            }
        }
    }

    fn ball_support(&self, n: usize) -> Option<Vec<usize>> {
        match self {
            BodyComponent::Ball { support: Some(s), .. } => Some(s.clone()),
            BodyComponent::Ball { support: None, .. } => Some((0..n).collect()),
            _ => None,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            BodyComponent::SignedPoints { points, .. } => {
                if points.is_empty() {
                    return Err(Error::invalid("point component without generators"));
                }
                for g in points {
                    if g.len() != n {
                        return Err(Error::DimensionMismatch { expected: n, found: g.len() });
                    }
                    if !math::all_finite(g) {
                        return Err(Error::NonFinite("generator"));
                    }
                    if g.iter().all(|x| *x == 0.0) {
                        return Err(Error::invalid("zero generator"));
                    }
                }
            }
            BodyComponent::Ball { radius, support, .. } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::invalid("ball radius must be positive and finite"));
                }
                if let Some(s) = support {
                    if s.is_empty() {
                        return Err(Error::invalid("ball support must be nonempty"));
                    }
                    if s.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(Error::invalid("ball support must be sorted and distinct"));
                    }
                    if s.iter().any(|&i| i >= n) {
                        return Err(Error::invalid("ball support index out of range"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Cheapest known way to write a unit coordinate vector `eᵢ` as an element of
/// `cost · K`, used to patch residuals in gauge certificates.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct CoordinateCost {
    pub cost: f64,
    /// Component achieving the cost, `None` if it needs several components.
    pub component: Option<usize>,
}

/// `abs.conv` of its components; guaranteed full-dimensional.
#[derive(Debug, Clone, PartialEq)]
pub struct HullBody {
    dim: usize,
    components: Vec<BodyComponent>,
    coordinate_costs: Vec<CoordinateCost>,
}

impl HullBody {
    pub fn new(dim: usize, components: Vec<BodyComponent>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if components.is_empty() {
            return Err(Error::invalid("a body needs at least one component"));
        }
        for c in &components {
            c.validate(dim)?;
        }
        let coordinate_costs = coordinate_costs(dim, &components)?;
        Ok(Self { dim, components, coordinate_costs })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[BodyComponent] {
        &self.components
    }

    pub fn is_unconditional(&self) -> bool {
        self.components.iter().all(BodyComponent::is_unconditional)
    }

    pub(crate) fn coordinate_costs(&self) -> &[CoordinateCost] {
        &self.coordinate_costs
    }

    /// `r · B_p^n`.
    pub fn lp_ball(n: usize, norm: BallNorm, radius: f64) -> Result<Self> {
        Self::new(n, vec![BodyComponent::ball(norm, radius)])
    }

    pub fn support_function(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: y.len() });
        }
        if !math::all_finite(y) {
            return Err(Error::NonFinite("direction"));
        }
        Ok(self.support_unchecked(y))
    }

    pub(crate) fn support_unchecked(&self, y: &[f64]) -> f64 {
        self.components.iter().map(|c| c.support(y)).fold(0.0, f64::max)
    }

    /// Certified bracket `[lo, hi]` on `‖x‖_K` with relative gap at most `tol`.
    pub fn gauge(&self, x: &[f64], tol: f64) -> Result<GaugeResult> {
        self.gauge_with(x, &GaugeOptions { tol, ..GaugeOptions::default() })
    }

    pub fn gauge_with(&self, x: &[f64], opts: &GaugeOptions) -> Result<GaugeResult> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: x.len() });
        }
        if !math::all_finite(x) {
            return Err(Error::NonFinite("gauge argument"));
        }
        if !(opts.tol > 0.0) {
            return Err(Error::invalid("gauge tolerance must be positive"));
        }
        gauge::solve(self, x, opts)
    }

    /// Largest Euclidean ball centred at 0 contained in some single
    /// full-dimensional ball component.
    pub fn euclidean_inradius(&self) -> Option<f64> {
        let n = self.dim as f64;
        self.components
            .iter()
            .filter_map(|c| match c {
                BodyComponent::Ball { norm, radius, support } => {
                    let full = support.as_ref().map_or(true, |s| s.len() == self.dim);
                    full.then(|| match norm {
                        BallNorm::L1 => radius / math::sqrt(n),
                        BallNorm::L2 | BallNorm::LInf => *radius,
                    })
                }
                _ => None,
            })
            .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
    }

    /// Image under `x ↦ (σ_i x_{π(i)})`: coordinate `perm[i]` of the input
    /// becomes coordinate `i`, multiplied by `signs[i]`.
    pub fn signed_permutation_image(&self, perm: &[usize], signs: &[f64]) -> Result<Self> {
        let n = self.dim;
        if perm.len() != n || signs.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: perm.len() });
        }
        let mut inverse = vec![usize::MAX; n];
        for (i, &p) in perm.iter().enumerate() {
            if p >= n || inverse[p] != usize::MAX {
                return Err(Error::invalid("not a permutation"));
            }
            inverse[p] = i;
        }
        let map_point = |g: &Vec<f64>| -> Vec<f64> { (0..n).map(|i| signs[i] * g[perm[i]]).collect() };
        let components = self
            .components
            .iter()
            .map(|c| match c {
                BodyComponent::SignedPoints { points, unconditional } => BodyComponent::SignedPoints {
                    points: points.iter().map(map_point).collect(),
                    unconditional: *unconditional,
                },
                BodyComponent::Ball { norm, radius, support } => BodyComponent::Ball {
                    norm: *norm,
                    radius: *radius,
                    support: support.as_ref().map(|s| {
                        let mut t: Vec<usize> = s.iter().map(|&j| inverse[j]).collect();
                        t.sort_unstable();
                        t
                    }),
                },
            })
            .collect();
        Self::new(n, components)
    }
}

fn coordinate_costs(n: usize, components: &[BodyComponent]) -> Result<Vec<CoordinateCost>> {
    let mut costs = vec![CoordinateCost { cost: f64::INFINITY, component: None }; n];
    let mut consider = |i: usize, cost: f64, k: usize| {
        if cost < costs[i].cost {
            costs[i] = CoordinateCost { cost, component: Some(k) };
        }
    };
    for (k, c) in components.iter().enumerate() {
        match c {
            BodyComponent::Ball { radius, .. } => {
                for i in c.ball_support(n).unwrap_or_default() {
                    consider(i, 1.0 / radius, k);
                }
            }
            BodyComponent::SignedPoints { points, unconditional: true } => {
                for g in points {
                    for (i, gi) in g.iter().enumerate() {
                        if *gi != 0.0 {
                            consider(i, 1.0 / gi.abs(), k);
                        }
                    }
                }
            }
            BodyComponent::SignedPoints { unconditional: false, .. } => {}
        }
    }
    let uncovered: Vec<usize> = (0..n).filter(|&i| !costs[i].cost.is_finite()).collect();
    if uncovered.is_empty() {
        return Ok(costs);
    }
    // Remaining coordinates must come from plain generators, possibly helped
    // by already covered coordinate directions.
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut column_cost: Vec<f64> = Vec::new();
    let mut column_owner: Vec<usize> = Vec::new();
    for (k, c) in components.iter().enumerate() {
        if let BodyComponent::SignedPoints { points, unconditional: false } = c {
            for g in points {
                columns.push(g.clone());
                column_cost.push(1.0);
                column_owner.push(k);
            }
        }
    }
    for (i, cc) in costs.iter().enumerate() {
        if cc.cost.is_finite() {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            columns.push(e);
            column_cost.push(cc.cost);
            column_owner.push(cc.component.unwrap_or(usize::MAX));
        }
    }
    for i in uncovered {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        let coef = linalg::least_squares(&columns, &e);
        let mut residual = e.clone();
        for (col, a) in columns.iter().zip(&coef) {
            for (r, v) in residual.iter_mut().zip(col) {
                *r -= a * v;
            }
        }
        if norm2(&residual) > 1e-9 {
            return Err(Error::invalid(format!(
                "body is not full-dimensional: coordinate {i} lies outside the span of its components"
            )));
        }
        let cost: f64 = coef.iter().zip(&column_cost).map(|(a, c)| a.abs() * c).sum();
        let owners: Vec<usize> =
            coef.iter().zip(&column_owner).filter(|(a, _)| **a != 0.0).map(|(_, o)| *o).collect();
        let single = owners.first().copied().filter(|o| owners.iter().all(|x| x == o) && *o != usize::MAX);
        costs[i] = CoordinateCost { cost, component: single };
    }
    Ok(costs)
}

fn check_subsets(params: &ModelParams, subsets: &[IndexSet]) -> Result<()> {
    if subsets.is_empty() {
        return Err(Error::invalid("at least one index set is required"));
    }
    for s in subsets {
        if s.ambient() != params.n {
            return Err(Error::DimensionMismatch { expected: params.n, found: s.ambient() });
        }
        if s.len() != params.m {
            return Err(Error::invalid(format!("index set has {} elements, expected m = {}", s.len(), params.m)));
        }
    }
    Ok(())
}

/// `K = abs.conv(unc.conv(x₁,…,x_N), √(δn) B₁ⁿ, δ√n B₂ⁿ)` with `x_l = Σ_{i∈I_l} eᵢ`.
pub fn make_model_body(params: &ModelParams, subsets: &[IndexSet]) -> Result<HullBody> {
    check_subsets(params, subsets)?;
    let points = subsets.iter().map(IndexSet::indicator).collect();
    let (l1, l2) = model_radii(params);
    HullBody::new(
        params.n,
        vec![
            BodyComponent::points(points, true),
            BodyComponent::ball(BallNorm::L1, l1),
            BodyComponent::ball(BallNorm::L2, l2),
        ],
    )
}

/// `K̃ = abs.conv(√(δn) B₂^{I₁}, …, √(δn) B₂^{I_N}, δ√n B₂ⁿ)`.
pub fn make_cap_body(params: &ModelParams, subsets: &[IndexSet]) -> Result<HullBody> {
    check_subsets(params, subsets)?;
    let (cap, l2) = model_radii(params);
    let mut components: Vec<BodyComponent> = subsets
        .iter()
        .map(|s| BodyComponent::ball_on(BallNorm::L2, cap, s.as_slice().to_vec()))
        .collect();
    components.push(BodyComponent::ball(BallNorm::L2, l2));
    HullBody::new(params.n, components)
}

/// `(√(δn), δ√n)`, using `m = round(δn)` for `δn`.
pub fn model_radii(params: &ModelParams) -> (f64, f64) {
    (math::sqrt(params.m as f64), params.delta * math::sqrt(params.n as f64))
}
