//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use bmcompact::config;
use bmcompact::{Command, Overrides, Plan};
use bmcompact_core::bodies::{BallNorm, BodyComponent, GaugeOptions, HullBody};
use bmcompact_core::conclab::{self, McConfig};
use bmcompact_core::csnet::{self, CsBody, NetOptions};
use bmcompact_core::distance::{self, BmOptions, OpNormOptions};
use bmcompact_core::linalg::{self, DenseMatrix};
use bmcompact_core::randmodel::{self, ModelParams, Stream, StreamRng};
use bmcompact_core::Sequential;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn gaussian(n: usize, rng: &mut StreamRng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------

fn exact_law_concentration() -> Outcome {
    let (n, m) = (20usize, 5usize);
    let mut e = vec![0.0; n];
    e[0] = 1.0;
    let a = DenseMatrix::outer(&e, &e);
    let cfg = McConfig { trials: 100_000, ..McConfig::default() };
    let start = Instant::now();
    let q = match conclab::mc_quadratic_tail(&a, n, m, &cfg, None, &Stream::new(1, "acceptance/1"), &Sequential) {
        Ok(q) => q,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    // |Y₁²·1{1∈J} − m/n| is 1 − m/n with probability m/n and m/n otherwise.
    let p = m as f64 / n as f64;
    let law = |t: f64| {
        if t <= p {
            1.0
        } else if t <= 1.0 - p {
            p
        } else {
            0.0
        }
    };
    let c = &q.curve;
    let misses: Vec<f64> = (0..c.len()).filter(|&i| !c.within_band(i, law(c.thresholds[i]))).map(|i| c.thresholds[i]).collect();
    let distinct = {
        let mut v = c.p_hat.clone();
        v.dedup();
        v.len()
    };
    outcome(
        misses.is_empty() && secs < 10.0 && distinct == 3,
        format!("{} thresholds, {} outside band {:?}, {} distinct levels, {:.2}s", c.len(), misses.len(), misses, distinct, secs),
    )
}

fn degenerate_small_ball() -> Outcome {
    let (n, m) = (20usize, 5usize);
    let cfg = McConfig { trials: 100_000, ..McConfig::default() };
    let identity = match conclab::mc_small_ball(&DenseMatrix::identity(n), n, m, &cfg, &Stream::new(2, "acceptance/2/identity"), &Sequential) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let mut d = vec![0.0; n];
    d[0] = 1.0;
    let single = match conclab::mc_small_ball(&DenseMatrix::from_diag(&d), n, m, &cfg, &Stream::new(2, "acceptance/2/single"), &Sequential) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let target = 1.0 - m as f64 / n as f64;
    let (lo, hi) = single.band();
    outcome(
        identity.hits == 0 && identity.trials == 100_000 && single.within_band(target),
        format!("identity hits {}/{}; diag(1,0,..) p_hat {} band [{lo:.5}, {hi:.5}] vs {target}", identity.hits, identity.trials, single.p_hat),
    )
}

fn centering_identity() -> Outcome {
    let (n, m) = (100usize, 10usize);
    let cfg = McConfig { trials: 20_000, ..McConfig::default() };
    let mut worst: f64 = 0.0;
    let mut fails = 0;
    let mut rng = Stream::new(3, "acceptance/3/matrices").rng();
    for k in 0..20 {
        let a = DenseMatrix::new(n, n, gaussian(n * n, &mut rng)).unwrap();
        let q = match conclab::mc_quadratic_tail(&a, n, m, &cfg, Some(vec![1.0]), &Stream::new(3, format!("acceptance/3/{k}")), &Sequential) {
            Ok(q) => q,
            Err(e) => return outcome(false, format!("error: {e}")),
        };
        let expected = m as f64 / n as f64 * a.trace();
        let z = (q.mean - expected).abs() / q.std_error;
        worst = worst.max(z);
        if !(z <= 3.0) || (q.expected_mean - expected).abs() > 1e-9 * expected.abs().max(1.0) {
            fails += 1;
        }
    }
    outcome(fails == 0, format!("20 matrices, worst |mean - (m/n)tr A| = {worst:.3} standard errors"))
}

/// Bisection on `λ` with membership of `x/λ` decided by every separating
/// direction queried so far. Directions come from random sampling and then
/// from a gradient-sampling descent of the convex `h_K` over the slice
/// `⟨x,u⟩ = 1`, whose minimum is `1/‖x‖_K`. Only support queries are used.
fn membership_oracle(body: &HullBody, x: &[f64], budget: usize, rng: &mut StreamRng) -> f64 {
    let n = body.dim();
    let xx = dot(x, x);
    let mut seen: Vec<(f64, f64)> = Vec::with_capacity(budget);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        let mut v: Vec<f64> = (0..n).map(|j| if j == i { 1.0 } else { 0.0 }).collect();
        for b in std::iter::once(x.to_vec()).chain(basis.iter().cloned()) {
            let c = dot(&v, &b) / dot(&b, &b);
            v.iter_mut().zip(&b).for_each(|(a, bb)| *a -= c * bb);
        }
        let s = norm2(&v);
        if s > 1e-8 && basis.len() + 1 < n {
            basis.push(v.into_iter().map(|a| a / s).collect());
        }
    }
    let k = basis.len();
    let point = |c: &[f64]| -> Vec<f64> {
        let mut u: Vec<f64> = x.iter().map(|a| a / xx).collect();
        for (cj, b) in c.iter().zip(&basis) {
            u.iter_mut().zip(b).for_each(|(a, bb)| *a += cj * bb);
        }
        u
    };
    let slice = |c: &[f64], seen: &mut Vec<(f64, f64)>| -> f64 {
        let u = point(c);
        let h = body.support_function(&u).unwrap();
        seen.push((dot(x, &u), h));
        h
    };

    let mut best_c = vec![0.0; k];
    let mut best = slice(&best_c, &mut seen);
    while seen.len() < budget / 10 {
        let u = gaussian(n, rng);
        let xu = dot(x, &u);
        if xu <= 0.0 {
            continue;
        }
        let c: Vec<f64> = basis.iter().map(|b| dot(&u, b) / xu).collect();
        let g = slice(&c, &mut seen);
        if g < best {
            (best, best_c) = (g, c);
        }
    }

    let mut step = 0.1 * (1.0 + norm2(&best_c));
    let mut radius = step;
    let mut misses = 0;
    let floor = 1e-10 * norm2(&point(&best_c));
    while k > 0 && seen.len() + 80 + 4 * k * (2 * k + 1) < budget && radius > floor {
        // Gradient sampling at random points near the iterate; a sample whose
        // one-sided differences disagree straddles a kink and is dropped.
        let eta = 1e-4 * radius;
        let mut grads = Vec::with_capacity(2 * k);
        for _ in 0..2 * k {
            let g = gaussian(k, rng);
            let r = radius * rng.random::<f64>().powf(1.0 / k as f64) / norm2(&g);
            let c: Vec<f64> = best_c.iter().zip(&g).map(|(a, b)| a + r * b).collect();
            let f0 = slice(&c, &mut seen);
            let mut grad = Vec::with_capacity(k);
            for j in 0..k {
                let mut e = c.clone();
                e[j] += eta;
                let fwd = (slice(&e, &mut seen) - f0) / eta;
                e[j] -= 2.0 * eta;
                let bwd = (f0 - slice(&e, &mut seen)) / eta;
                if (fwd - bwd).abs() > 1e-5 * (fwd.abs() + bwd.abs()) + 1e-9 {
                    break;
                }
                grad.push(0.5 * (fwd + bwd));
            }
            if grad.len() == k {
                grads.push(grad);
            }
        }
        if grads.is_empty() {
            radius *= 0.5;
            continue;
        }
        let g = min_norm_hull(&grads);
        let gn = norm2(&g);
        let scale = grads.iter().map(|g| norm2(g)).fold(0.0, f64::max);
        if gn <= 1e-7 * scale {
            radius *= 0.1;
            continue;
        }
        let d: Vec<f64> = g.iter().map(|a| -a / gn).collect();
        let at = |t: f64| -> Vec<f64> { best_c.iter().zip(&d).map(|(c, dd)| c + t * dd).collect() };
        let phi = |t: f64, seen: &mut Vec<(f64, f64)>| slice(&at(t), seen);
        // Bracket a minimiser of the convex restriction, then golden-section search.
        let (mut a, mut c) = (-step, step);
        let (fa, fc) = (phi(a, &mut seen), phi(c, &mut seen));
        if fc < best || fa < best {
            let dir = if fc <= fa { 1.0 } else { -1.0 };
            let (mut lo, mut mid, mut fmid): (f64, f64, f64) = (0.0, dir * step, fc.min(fa));
            loop {
                let next = 2.0 * mid;
                let f = phi(next, &mut seen);
                if f >= fmid || seen.len() + 60 >= budget {
                    a = lo.min(next);
                    c = lo.max(next);
                    break;
                }
                (lo, mid, fmid) = (mid, next, f);
            }
        }
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let (mut p, mut q) = (c - r * (c - a), a + r * (c - a));
        let (mut fp, mut fq) = (phi(p, &mut seen), phi(q, &mut seen));
        for _ in 0..45 {
            if fp <= fq {
                (c, q, fq) = (q, p, fp);
                p = c - r * (c - a);
                fp = phi(p, &mut seen);
            } else {
                (a, p, fp) = (p, q, fq);
                q = a + r * (c - a);
                fq = phi(q, &mut seen);
            }
        }
        let (t, f) = if fp <= fq { (p, fp) } else { (q, fq) };
        if f < best {
            best = f;
            best_c = at(t);
            step = (2.0 * t.abs()).max(radius);
            misses = 0;
        } else {
            step = (0.5 * step).max(radius);
            misses += 1;
            if misses == 3 {
                radius *= 0.5;
                misses = 0;
            }
        }
    }

    let member = |lambda: f64| seen.iter().all(|&(xu, h)| xu <= lambda * h);
    let mut hi = 1.0;
    while !member(hi) {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if member(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Minimum-norm point of the convex hull of `points` (Frank-Wolfe with
/// exact line search).
fn min_norm_hull(points: &[Vec<f64>]) -> Vec<f64> {
    let mut z = points[0].clone();
    for _ in 0..5000 {
        let s = points
            .iter()
            .min_by(|a, b| dot(a, &z).total_cmp(&dot(b, &z)))
            .unwrap();
        let d: Vec<f64> = s.iter().zip(&z).map(|(a, b)| a - b).collect();
        let dd = dot(&d, &d);
        if dd == 0.0 {
            break;
        }
        let t = (-dot(&z, &d) / dd).clamp(0.0, 1.0);
        if t == 0.0 {
            break;
        }
        z.iter_mut().zip(&d).for_each(|(a, b)| *a += t * b);
    }
    z
}

fn random_hull_body(rng: &mut StreamRng) -> HullBody {
    let n = rng.random_range(1..=4usize);
    let norms = [BallNorm::L1, BallNorm::L2, BallNorm::LInf];
    let mut comps = Vec::new();
    for _ in 0..rng.random_range(1..=3) {
        if rng.random::<bool>() {
            let count = rng.random_range(1..=4);
            let pts = (0..count).map(|_| gaussian(n, rng)).collect();
            comps.push(BodyComponent::points(pts, rng.random::<bool>()));
        } else {
            let norm = norms[rng.random_range(0..3)];
            let radius = rng.random_range(0.2..2.0);
            let mut support: Vec<usize> = (0..n).filter(|_| rng.random::<bool>()).collect();
            if support.is_empty() {
                support.push(rng.random_range(0..n));
            }
            comps.push(BodyComponent::ball_on(norm, radius, support));
        }
    }
    comps.push(BodyComponent::ball(norms[rng.random_range(0..3)], rng.random_range(0.1..1.0)));
    HullBody::new(n, comps).unwrap()
}

fn gauge_oracle() -> Outcome {
    let mut rng = Stream::new(4, "acceptance/4").rng();
    let mut worst: f64 = 0.0;
    let mut fails = Vec::new();
    for b in 0..50 {
        let body = random_hull_body(&mut rng);
        let x = gaussian(body.dim(), &mut rng);
        let g = match body.gauge(&x, 1e-6) {
            Ok(g) => g,
            Err(e) => return outcome(false, format!("body {b}: {e}")),
        };
        let oracle = membership_oracle(&body, &x, 10_000, &mut rng);
        let mid = 0.5 * (g.lo + g.hi);
        let rel = (oracle - mid).abs() / mid;
        worst = worst.max(rel);
        let bracketed = g.lo * (1.0 - 1e-4) <= oracle && oracle <= g.hi * (1.0 + 1e-4);
        if !bracketed || rel > 1e-4 {
            fails.push(b);
        }
    }
    outcome(fails.is_empty(), format!("50 bodies, worst relative disagreement {worst:.2e}, failing {fails:?}"))
}

fn sandwich_inclusions() -> Outcome {
    let mut rng = Stream::new(5, "acceptance/5").rng();
    let mut fails = Vec::new();
    let mut checks = 0usize;
    let tol = 1e-6;
    for b in 0..100 {
        let n = rng.random_range(2..=64usize);
        let m = rng.random_range(1..=n);
        let big_n = rng.random_range(1..=2 * n);
        let delta = m as f64 / n as f64;
        let params = ModelParams::new(n, delta, big_n).unwrap();
        let body = randmodel::sample_body(&params, &Stream::new(5, format!("acceptance/5/body/{b}"))).unwrap().body;
        let dn = m as f64;
        let inner = delta * (n as f64).sqrt();
        let outer = dn.sqrt();
        let mut ok = true;
        for k in 0..100 {
            let u = gaussian(n, &mut rng);
            let h = body.support_function(&u).unwrap();
            let l2 = norm2(&u);
            let linf = u.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            ok &= h >= inner * l2 * (1.0 - tol);
            ok &= h <= outer * l2 * (1.0 + tol);
            ok &= h <= dn * linf * (1.0 + tol);
            checks += 3;
            if k < 3 {
                let g = body.gauge(&u, 1e-6).unwrap();
                let l1: f64 = u.iter().map(|v| v.abs()).sum();
                ok &= g.lo <= l2 / inner * (1.0 + tol);
                ok &= g.hi >= l2 / outer * (1.0 - tol);
                ok &= g.hi >= l1 / dn * (1.0 - tol);
                checks += 3;
            }
        }
        if !ok {
            fails.push(b);
        }
    }
    outcome(fails.is_empty(), format!("100 bodies, {checks} inequalities, failing bodies {fails:?}"))
}

fn op_norm_exactness() -> Outcome {
    let mut rng = Stream::new(6, "acceptance/6").rng();
    let opts = OpNormOptions::default();
    let gopts = GaugeOptions { tol: opts.gauge_tol, ..GaugeOptions::default() };
    let mut fails = Vec::new();
    for trial in 0..100 {
        let n = rng.random_range(1..=6usize);
        let count = rng.random_range(1..=3usize);
        let mut pts: Vec<Vec<f64>> = (0..count).map(|_| (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
        for i in 0..n {
            pts[i % count][i] = rng.random_range(0.2..1.5);
        }
        let k = HullBody::new(n, vec![BodyComponent::points(pts.clone(), true)]).unwrap();
        let mut target = vec![BodyComponent::points((0..2).map(|_| gaussian(n, &mut rng)).collect(), rng.random::<bool>())];
        target.push(BodyComponent::ball([BallNorm::L1, BallNorm::L2, BallNorm::LInf][rng.random_range(0..3)], rng.random_range(0.3..1.5)));
        let k2 = HullBody::new(n, target).unwrap();
        let t = DenseMatrix::new(n, n, gaussian(n * n, &mut rng)).unwrap();
        let r = match distance::op_norm(&t, &k, &k2, &opts, &Stream::new(6, format!("acceptance/6/{trial}"))) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("trial {trial}: {e}")),
        };
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for g in &pts {
            for mask in 0u32..(1 << n) {
                let x: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { -g[i] } else { g[i] }).collect();
                let res = k2.gauge_with(&t.mul_vec(&x).unwrap(), &gopts).unwrap();
                lo = lo.max(res.lo);
                hi = hi.max(res.hi);
            }
        }
        if r.lo != lo || r.hi != hi {
            fails.push(trial);
        }
    }
    outcome(fails.is_empty(), format!("100 triples with n <= 6, mismatching {fails:?}"))
}

/// `min ‖T:B₁²→D‖·‖T⁻¹:D→B₁²‖` over a grid of 2×2 maps with entries in
/// `{-2, -1.9, …, 2}`; `cube` selects `D = B∞²`, otherwise `D = B₂²`.
fn grid_distance(cube: bool) -> f64 {
    let steps: Vec<f64> = (-20..=20).map(|i| i as f64 / 10.0).collect();
    let mut best = f64::INFINITY;
    for &a in &steps {
        for &b in &steps {
            for &c in &steps {
                for &d in &steps {
                    let det = a * d - b * c;
                    if det.abs() < 1e-9 {
                        continue;
                    }
                    let inv = [[d / det, -b / det], [-c / det, a / det]];
                    let (fwd, bwd) = if cube {
                        let fwd = a.abs().max(c.abs()).max(b.abs().max(d.abs()));
                        let bwd = [(1.0, 1.0), (1.0, -1.0)]
                            .iter()
                            .map(|(s1, s2)| (inv[0][0] * s1 + inv[0][1] * s2).abs() + (inv[1][0] * s1 + inv[1][1] * s2).abs())
                            .fold(0.0, f64::max);
                        (fwd, bwd)
                    } else {
                        let fwd = (a * a + c * c).sqrt().max((b * b + d * d).sqrt());
                        let bwd = [(1.0, 1.0), (1.0, -1.0)]
                            .iter()
                            .map(|(s1, s2)| {
                                let y0 = inv[0][0] * s1 + inv[1][0] * s2;
                                let y1 = inv[0][1] * s1 + inv[1][1] * s2;
                                (y0 * y0 + y1 * y1).sqrt()
                            })
                            .fold(0.0, f64::max);
                        (fwd, bwd)
                    };
                    best = best.min(fwd * bwd);
                }
            }
        }
    }
    best
}

fn bm_calibration() -> Outcome {
    let start = Instant::now();
    let b1 = HullBody::lp_ball(2, BallNorm::L1, 1.0).unwrap();
    let binf = HullBody::lp_ball(2, BallNorm::LInf, 1.0).unwrap();
    let b2 = HullBody::lp_ball(2, BallNorm::L2, 1.0).unwrap();
    let opts = BmOptions::default();
    let cube = distance::bm_upper(&b1, &binf, &opts, &Stream::new(7, "acceptance/7/cube"));
    let disc = distance::bm_upper(&b1, &b2, &opts, &Stream::new(7, "acceptance/7/disc"));
    let (cube, disc) = match (cube, disc) {
        (Ok(a), Ok(b)) => (a.upper, b.upper),
        (Err(e), _) | (_, Err(e)) => return outcome(false, format!("error: {e}")),
    };
    let secs = start.elapsed().as_secs_f64();
    let (grid_cube, grid_disc) = (grid_distance(true), grid_distance(false));
    let r2 = 2f64.sqrt();
    let pass = cube <= 1.0 + 1e-6
        && disc >= r2 * (1.0 - 1e-6)
        && disc <= r2 * (1.0 + 1e-3)
        && (grid_cube - 1.0).abs() < 1e-9
        && (grid_disc - r2).abs() < 1e-9
        && secs < 60.0;
    outcome(
        pass,
        format!("d(B1,Binf) <= {cube:.9} (grid {grid_cube:.6}), d(B1,B2) <= {disc:.9} (grid {grid_disc:.6}, sqrt2 {r2:.9}), {secs:.2}s"),
    )
}

/// Log-uniform spectra lifted so that `s_{n/2} ∈ [1, 4)`. Spectra outside
/// the pigeonhole guarantee have no qualifying block in general; they are
/// drawn too but only checked for consistency with an exhaustive scan.
fn spectral_interval_check() -> Outcome {
    let mut rng = Stream::new(8, "acceptance/8").rng();
    let c0 = 0.5;
    let mut checked = 0;
    let mut errors = 0;
    let mut violations = 0;
    let mut capped = 0;
    let mut outside = 0;
    let mut inconsistent = 0;
    while checked < 1000 {
        let n = rng.random_range(4..=256usize);
        let spread = rng.random_range(0.0..12.0f64);
        let mut s: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * spread).exp()).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let lift = rng.random_range(1.0..4.0) / s[n / 2 - 1];
        s.iter_mut().for_each(|v| *v *= lift);
        let norm_v = s[0];
        let result = linalg::spectral_interval(&s, norm_v, c0);
        if !linalg::pigeonhole_guaranteed(n, norm_v, c0) {
            outside += 1;
            let r = linalg::interval_length(n, norm_v, c0);
            let exists = (1..=n / 2 - r).any(|i| s[i - 1] / s[i + r - 1] <= 2.0);
            if exists != result.is_ok() {
                inconsistent += 1;
            }
            continue;
        }
        checked += 1;
        match result {
            Ok(iv) => {
                let required = (c0 * n as f64 / norm_v.log2().max(1.0)).floor().max(1.0) as usize;
                let ratio = s[iv.i1 - 1] / s[iv.i2 - 1];
                // The block [i1, i2] holds r + 1 values and lies inside [1, n/2].
                let inside = iv.i1 >= 1 && iv.i2 <= n / 2 && iv.i2 == iv.i1 + iv.r;
                if required > iv.r {
                    capped += 1;
                }
                if !(inside && ratio <= 2.0 && iv.cardinality() >= required.min(n / 2) && iv.r >= required.min(n / 2 - 1)) {
                    violations += 1;
                }
            }
            Err(_) => errors += 1,
        }
    }
    outcome(
        errors == 0 && violations == 0 && inconsistent == 0,
        format!(
            "1000 spectra, {errors} pigeonhole errors, {violations} inequality violations, {capped} blocks at the n/2 cap; \
             {outside} drawn outside the guarantee, {inconsistent} disagreeing with an exhaustive scan"
        ),
    )
}

fn net_soundness() -> Outcome {
    let start = Instant::now();
    let n = 12;
    let tau = 2.0;
    let mut ps: Vec<f64> = (0..13).map(|i| 1.0 + 0.25 * i as f64).collect();
    ps.push(f64::INFINITY);
    let bodies: Vec<CsBody> = ps.iter().map(|&p| CsBody::lp(n, p).unwrap()).collect();
    let l = csnet::compute_l(n, tau).unwrap();
    let net = match csnet::build_net(&bodies, tau, &NetOptions::default(), &Sequential) {
        Ok(net) => net,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let mut fails = Vec::new();
    let mut worst: f64 = 1.0;
    for (i, b) in bodies.iter().enumerate() {
        let rep = net.representative_of(i);
        let cert = csnet::certify_pair(b, &bodies[rep], &net.family, tau, 10_000, &Stream::new(9, format!("acceptance/9/{i}"))).unwrap();
        worst = worst.max(cert.max_ratio_kd).max(cert.max_ratio_dk);
        if !cert.granted || !cert.ratios_within_tau3 {
            fails.push(b.tag());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        fails.is_empty() && l == 5 && secs < 300.0,
        format!(
            "L = {l}, {} maps, {} cells for 14 bodies, worst ratio {worst:.4} (tau^3 = 8), failing {fails:?}, {secs:.2}s",
            net.family.len(),
            net.cells.len()
        ),
    )
}

const DETERMINISM_CONFIGS: &[(Command, &str)] = &[
    (Command::Conc, "seed = 21\n[conc]\nkind = \"quadratic\"\nn = 30\nm = 6\nmatrix = \"random\"\ntrials = 30000\nbatch_size = 1000\n"),
    (Command::Conc, "seed = 21\n[conc]\nkind = \"large_deviation\"\nn = 30\ndelta = 0.2\nmatrix = \"random\"\ntrials = 20000\nbatch_size = 700\n"),
    (Command::Conc, "seed = 21\n[conc]\nkind = \"small_ball\"\nn = 30\nm = 6\nmatrix = \"random\"\ntrials = 20000\nbatch_size = 999\n"),
    (Command::Sample, "seed = 22\n[sample]\nn = 24\ndelta = 0.25\nN = 10\ncount = 6\ncap_body = true\n"),
    (Command::Gauge, "seed = 23\n[gauge]\nn = 16\ndelta = 0.25\nN = 8\nrandom_points = 12\n"),
    (Command::Dist, "seed = 24\n[dist]\nmode = \"one_vector\"\nn = 16\ndelta = 0.25\nN = 8\ntrials = 12\ndiagnostics_c0 = 0.5\n"),
    (Command::Dist, "seed = 24\n[dist]\nmode = \"one_body\"\nn = 8\ndelta = 0.25\nN = 4\ntrials = 6\n"),
    (Command::Dist, "seed = 24\n[dist]\nmode = \"bm\"\nn = 8\ndelta = 0.25\nN = 4\nrefine_evaluations = 16\n"),
    (Command::Separate, "seed = 25\n[separate]\nn = 8\ndelta = 0.25\nN = 4\nM = 4\nrefine_evaluations = 8\n"),
    (Command::Net, "seed = 26\n[net]\nn = 8\ntau = 2.0\nsamples = 2000\nfamily = [{ lp = 1.0 }, { lp = 2.0 }, { lp = 3.0 }, { lp = \"inf\" }, { topk = 3 }]\n"),
];

fn determinism() -> Outcome {
    let mut mismatches = Vec::new();
    let mut records = 0usize;
    for (command, toml) in DETERMINISM_CONFIGS {
        let mut runs = Vec::new();
        for workers in [1usize, 4, 8] {
            let loaded = config::parse(toml).unwrap();
            let overrides = Overrides { workers: Some(workers), ..Overrides::default() };
            let plan = Plan::new(*command, loaded, overrides, Path::new(".")).unwrap();
            match plan.compute(0) {
                Ok(c) => runs.push((c.report, c.artifacts)),
                Err(e) => return outcome(false, format!("{}: {e}", command.name())),
            }
        }
        records += runs[0].0.records.len();
        let payloads = |r: &bmcompact::emit::Report| {
            r.records.iter().map(|x| (x.stream.clone(), serde_json::to_string(&x.payload).unwrap())).collect::<Vec<_>>()
        };
        let base = payloads(&runs[0].0);
        for (report, artifacts) in &runs[1..] {
            if payloads(report) != base || report.table != runs[0].0.table || *artifacts != runs[0].1 {
                mismatches.push(command.name());
            }
        }
    }
    outcome(
        mismatches.is_empty(),
        format!("{} experiments x workers {{1, 4, 8}}, {records} records each, mismatching {mismatches:?}", DETERMINISM_CONFIGS.len()),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("exact-law concentration", exact_law_concentration),
        ("degenerate small ball", degenerate_small_ball),
        ("centering identity", centering_identity),
        ("gauge oracle", gauge_oracle),
        ("sandwich inclusions", sandwich_inclusions),
        ("operator-norm exactness", op_norm_exactness),
        ("distance calibration", bm_calibration),
        ("spectral interval", spectral_interval_check),
        ("net soundness", net_soundness),
        ("determinism across worker counts", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let r = check();
        let status = if r.pass { "PASS" } else { "FAIL" };
        if !r.pass {
            failed += 1;
        }
        println!("{status} [{:>2}] {name}: {} ({:.2}s)", i + 1, r.detail, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
