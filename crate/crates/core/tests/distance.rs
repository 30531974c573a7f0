use bmcompact_core::bodies::{make_cap_body, make_model_body, BallNorm, BodyComponent, GaugeOptions, HullBody};
use bmcompact_core::distance::*;
use bmcompact_core::linalg::DenseMatrix;
use bmcompact_core::randmodel::{sample_body, sample_subset, sample_test_vector, ModelParams, Stream, StreamRng};
use bmcompact_core::{Runner, Sequential};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

struct Reversed;

impl Runner for Reversed {
    fn run<T, F>(&self, jobs: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        let mut out: Vec<(usize, T)> = (0..jobs).rev().map(|i| (i, f(i))).collect();
        out.sort_by_key(|p| p.0);
        out.into_iter().map(|p| p.1).collect()
    }
}

fn ball(n: usize, norm: BallNorm, r: f64) -> HullBody {
    HullBody::lp_ball(n, norm, r).unwrap()
}

fn s(name: &str) -> Stream {
    Stream::new(5, name)
}

fn random_matrix(n: usize, rng: &mut StreamRng) -> DenseMatrix {
    let data = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    DenseMatrix::new(n, n, data).unwrap()
}

/// Unconditional generators covering every coordinate.
fn random_points(n: usize, count: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let mut pts: Vec<Vec<f64>> = (0..count)
        .map(|_| (0..n).map(|_| if rng.random::<f64>() < 0.6 { rng.random_range(0.2..1.5) } else { 0.0 }).collect())
        .collect();
    for i in 0..n {
        pts[i % count][i] = rng.random_range(0.2..1.5);
    }
    for g in &mut pts {
        if g.iter().all(|v| *v == 0.0) {
            g[rng.random_range(0..n)] = 1.0;
        }
    }
    pts
}

fn random_target(n: usize, rng: &mut StreamRng) -> HullBody {
    let kind = rng.random_range(0..3);
    let mut comps = vec![BodyComponent::points(random_points(n, 3, rng), kind != 0)];
    match kind {
        0 => comps.push(BodyComponent::ball(BallNorm::L1, rng.random_range(0.5..1.5))),
        1 => comps.push(BodyComponent::ball(BallNorm::L2, rng.random_range(0.3..1.0))),
        _ => comps.push(BodyComponent::ball_on(BallNorm::LInf, 0.7, vec![0, n - 1])),
    }
    HullBody::new(n, comps).unwrap()
}

#[test]
fn identity_on_same_body_has_norm_one() {
    let p = ModelParams::new(12, 0.25, 5).unwrap();
    let k = sample_body(&p, &s("body")).unwrap().body;
    let r = op_norm(&DenseMatrix::identity(12), &k, &k, &OpNormOptions::default(), &s("op")).unwrap();
    assert!((r.lo - 1.0).abs() < 1e-7 && (r.hi - 1.0).abs() < 1e-7, "{} {}", r.lo, r.hi);
    let g = k.gauge(&r.witness, 1e-9).unwrap();
    assert!((g.lo - 1.0).abs() < 1e-7);
}

#[test]
fn homogeneity_on_euclidean_ball() {
    let k = ball(4, BallNorm::L2, 1.0);
    let r = op_norm(&DenseMatrix::identity(4).scaled(2.0), &k, &k, &OpNormOptions::default(), &s("op")).unwrap();
    assert!((r.lo - 2.0).abs() < 1e-7 && (r.hi - 2.0).abs() < 1e-7, "{} {}", r.lo, r.hi);
}

#[test]
fn rotated_square_maps_cross_polytope_onto_cube() {
    let t = DenseMatrix::from_rows(&[vec![1.0, 1.0], vec![-1.0, 1.0]]).unwrap();
    let r = op_norm(&t, &ball(2, BallNorm::L1, 1.0), &ball(2, BallNorm::LInf, 1.0), &OpNormOptions::default(), &s("op"))
        .unwrap();
    assert!((r.lo - 1.0).abs() < 1e-9 && (r.hi - 1.0).abs() < 1e-7);
    // Witness reproduces lo.
    let z = t.mul_vec(&r.witness).unwrap();
    let g = ball(2, BallNorm::LInf, 1.0).gauge(&z, 1e-8).unwrap();
    assert!((g.lo - r.lo).abs() <= 1e-8);
}

#[test]
fn euclidean_ball_into_cross_polytope() {
    // ‖I: B₂ⁿ → B₁ⁿ‖ = √n, attained at (1,…,1)/√n.
    let n = 5;
    let r = op_norm(
        &DenseMatrix::identity(n),
        &ball(n, BallNorm::L2, 1.0),
        &ball(n, BallNorm::L1, 1.0),
        &OpNormOptions::default(),
        &s("op"),
    )
    .unwrap();
    let exact = (n as f64).sqrt();
    assert!(r.lo <= exact * (1.0 + 1e-9) && r.hi >= exact * (1.0 - 1e-9));
    assert!((r.hi - exact).abs() < 1e-7, "hi {}", r.hi);
    assert!((r.lo - exact).abs() < 1e-5, "lo {}", r.lo);
}

#[test]
fn exhaustive_mode_matches_brute_force_exactly() {
    let mut rng = Stream::new(17, "bf").rng();
    let opts = OpNormOptions::default();
    let gopts = GaugeOptions { tol: opts.gauge_tol, ..GaugeOptions::default() };
    for trial in 0..12 {
        let n = 2 + trial % 5;
        let pts = random_points(n, 2 + trial % 2, &mut rng);
        let k = HullBody::new(n, vec![BodyComponent::points(pts.clone(), true)]).unwrap();
        let k2 = random_target(n, &mut rng);
        let t = random_matrix(n, &mut rng);
        let r = op_norm(&t, &k, &k2, &opts, &s("bf")).unwrap();
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for g in &pts {
            for mask in 0u32..(1 << n) {
                let x: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { -g[i] } else { g[i] }).collect();
                let z = t.mul_vec(&x).unwrap();
                let res = k2.gauge_with(&z, &gopts).unwrap();
                lo = lo.max(res.lo);
                hi = hi.max(res.hi);
            }
        }
        assert_eq!(r.lo, lo, "trial {trial}");
        assert_eq!(r.hi, hi, "trial {trial}");
    }
}

#[test]
fn sampled_mode_brackets_exhaustive() {
    let mut rng = Stream::new(3, "sm").rng();
    let n = 6;
    let k = HullBody::new(n, vec![BodyComponent::points(random_points(n, 3, &mut rng), true)]).unwrap();
    let k2 = random_target(n, &mut rng);
    let t = random_matrix(n, &mut rng);
    let exact = op_norm(&t, &k, &k2, &OpNormOptions::default(), &s("e")).unwrap();
    let sampled = OpNormOptions { mode: OpNormMode::Sampled, sampled_patterns: 4, cutoff: 2, ..OpNormOptions::default() };
    let r = op_norm(&t, &k, &k2, &sampled, &s("e")).unwrap();
    assert!(r.lo <= exact.hi * (1.0 + 1e-9));
    assert!(r.hi >= exact.lo * (1.0 - 1e-9));
}

/// `min ‖T:B₁²→D‖·‖T⁻¹:D→B₁²‖` over a grid of 2×2 maps, with the norms in
/// closed form: the first is the largest column norm in `D`, the second the
/// largest `ℓ₁` norm of `T⁻¹` applied to a vertex of `D` (cube) or the largest
/// Euclidean norm of `T⁻ᵀs` over sign vectors `s` (disc).
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
                        let f = a.abs().max(c.abs()).max(b.abs().max(d.abs()));
                        let mut g: f64 = 0.0;
                        for (s1, s2) in [(1.0, 1.0), (1.0, -1.0)] {
                            let x = inv[0][0] * s1 + inv[0][1] * s2;
                            let y = inv[1][0] * s1 + inv[1][1] * s2;
                            g = g.max(x.abs() + y.abs());
                        }
                        (f, g)
                    } else {
                        let f = (a * a + c * c).sqrt().max((b * b + d * d).sqrt());
                        let mut g: f64 = 0.0;
                        for (s1, s2) in [(1.0, 1.0), (1.0, -1.0)] {
                            let x = inv[0][0] * s1 + inv[1][0] * s2;
                            let y = inv[0][1] * s1 + inv[1][1] * s2;
                            g = g.max((x * x + y * y).sqrt());
                        }
                        (f, g)
                    };
                    best = best.min(fwd * bwd);
                }
            }
        }
    }
    best
}

#[test]
fn calibration_against_grid_search() {
    let b1 = ball(2, BallNorm::L1, 1.0);
    let cube = bm_upper(&b1, &ball(2, BallNorm::LInf, 1.0), &BmOptions::default(), &s("bm")).unwrap();
    let grid_cube = grid_distance(true);
    assert!((grid_cube - 1.0).abs() < 1e-12);
    assert!(cube.upper <= 1.0 + 1e-6, "{}", cube.upper);

    let disc = bm_upper(&b1, &ball(2, BallNorm::L2, 1.0), &BmOptions::default(), &s("bm")).unwrap();
    let grid_disc = grid_distance(false);
    let r2 = 2f64.sqrt();
    assert!((grid_disc - r2).abs() < 1e-9, "grid {grid_disc}");
    assert!(disc.upper >= r2 * (1.0 - 1e-6) && disc.upper <= grid_disc * (1.0 + 1e-3), "{}", disc.upper);
    assert_eq!(disc.upper, disc.forward_hi * disc.backward_hi);
}

#[test]
fn scaled_copy_is_at_distance_one() {
    let p = ModelParams::new(8, 0.25, 4).unwrap();
    let sb = sample_body(&p, &s("b")).unwrap();
    let k = sb.body;
    let triple = HullBody::new(
        8,
        k.components()
            .iter()
            .map(|c| match c {
                BodyComponent::SignedPoints { points, unconditional } => BodyComponent::points(
                    points.iter().map(|g| g.iter().map(|v| 3.0 * v).collect()).collect(),
                    *unconditional,
                ),
                BodyComponent::Ball { norm, radius, support } => {
                    BodyComponent::Ball { norm: *norm, radius: 3.0 * radius, support: support.clone() }
                }
            })
            .collect(),
    )
    .unwrap();
    let same = bm_upper(&k, &k, &BmOptions::default(), &s("x")).unwrap();
    assert!(same.upper >= 1.0 && same.upper <= 1.0 + 1e-6, "{}", same.upper);
    let scaled = bm_upper(&k, &triple, &BmOptions::default(), &s("x")).unwrap();
    assert!(scaled.upper <= 1.0 + 1e-6, "{}", scaled.upper);
}

fn random_signed_permutation(n: usize, rng: &mut StreamRng) -> (Vec<usize>, Vec<f64>) {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let signs = (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
    (perm, signs)
}

#[test]
fn estimate_ignores_signed_permutations_of_either_body() {
    let p = ModelParams::new(8, 0.25, 4).unwrap();
    let mut rng = Stream::new(2, "perm").rng();
    let opts = BmOptions { refine_evaluations: 16, ..BmOptions::default() };
    for t in 0..3 {
        let k = sample_body(&p, &s(&format!("a{t}"))).unwrap().body;
        let k2 = sample_body(&p, &s(&format!("b{t}"))).unwrap().body;
        let base = bm_upper(&k, &k2, &opts, &s("inv")).unwrap();
        let (u, us) = random_signed_permutation(8, &mut rng);
        let (w, ws) = random_signed_permutation(8, &mut rng);
        let uk = k.signed_permutation_image(&u, &us).unwrap();
        let wk2 = k2.signed_permutation_image(&w, &ws).unwrap();
        let moved = bm_upper(&uk, &wk2, &opts, &s("inv")).unwrap();
        assert!((moved.upper - base.upper).abs() <= 1e-6 * base.upper, "{} vs {}", moved.upper, base.upper);
        // The permuted image of a body is found to be isometric.
        let iso = bm_upper(&k, &uk, &opts, &s("iso")).unwrap();
        assert!(iso.upper <= 1.0 + 1e-6, "{}", iso.upper);
    }
}

#[test]
fn map_is_reported_in_original_coordinates() {
    let p = ModelParams::new(8, 0.25, 4).unwrap();
    let k = sample_body(&p, &s("m1")).unwrap().body;
    let k2 = sample_body(&p, &s("m2")).unwrap().body;
    let est = bm_upper(&k, &k2, &BmOptions { refine_evaluations: 8, ..BmOptions::default() }, &s("m")).unwrap();
    let f = op_norm(&est.map, &k, &k2, &OpNormOptions::default(), &s("c")).unwrap();
    let b = op_norm(&est.map.inverse().unwrap(), &k2, &k, &OpNormOptions::default(), &s("c")).unwrap();
    assert!((f.hi * b.hi - est.upper).abs() <= 1e-6 * est.upper, "{} vs {}", f.hi * b.hi, est.upper);
    assert!(est.upper >= 1.0);
}

#[test]
fn one_vector_event() {
    let p = ModelParams::new(16, 0.25, 6).unwrap();
    let mut rng = Stream::new(4, "ev").rng();
    let subsets: Vec<_> = (0..6).map(|_| sample_subset(16, p.m, &mut rng).unwrap()).collect();
    let cap = make_cap_body(&p, &subsets).unwrap();
    let y = sample_test_vector(16, p.m, &mut rng).unwrap();
    let diag: Vec<f64> = (0..16).map(|i| if i < 8 { 2.0 } else { 1.0 }).collect();
    let v = DenseMatrix::from_diag(&diag);
    let opts = EventOptions { diagnostics_c0: Some(0.5), ..EventOptions::default() };

    assert!(check_one_vector(&DenseMatrix::zeros(16, 16), &cap, &y.y, 1.0, &opts).is_err());
    assert!(check_one_vector(&v, &cap, &y.y, 0.0, &opts).is_err());

    let alpha = alpha_one_vector(1.0, p.delta, 2.0).unwrap();
    assert!((alpha - 1.0 / (0.5 * 2f64.ln())).abs() < 1e-12);
    let r = check_one_vector(&v, &cap, &y.y, alpha, &opts).unwrap();
    assert_eq!(r.outcome, r.recompute());
    assert_eq!(r.scale, 1.0);
    assert!((r.operator_norm - 2.0).abs() < 1e-12);
    let d = r.diagnostics.as_ref().unwrap();
    assert_eq!(d.projections.len(), 6);
    assert!(d.max_projection <= d.qy_norm * (1.0 + 1e-12));

    // α at or above the certified bound always succeeds.
    let easy = check_one_vector(&v, &cap, &y.y, r.gauge_hi, &opts).unwrap();
    assert!(easy.outcome);
    let hard = check_one_vector(&v, &cap, &y.y, r.gauge_lo * 0.5, &opts).unwrap();
    assert!(!hard.outcome);

    // s_{n/2}(0.1·V) = 0.2, so the map is brought back to 0.5·V.
    let small = check_one_vector(&v.scaled(0.1), &cap, &y.y, alpha, &opts).unwrap();
    assert!((small.scale - 5.0).abs() < 1e-12);
    assert!((small.gauge_hi - 0.5 * r.gauge_hi).abs() < 1e-7 * r.gauge_hi);
}

#[test]
fn one_body_event() {
    let p = ModelParams::new(10, 0.3, 5).unwrap();
    let sb = sample_body(&p, &s("ob")).unwrap();
    let id = DenseMatrix::identity(10);
    let opts = EventOptions::default();
    let r = check_one_body(&id, &sb.body, &sb.body, &sb.subsets, 1.0, &opts, &s("e")).unwrap();
    assert!(r.outcome, "hi = {}", r.gauge_hi);
    assert_eq!(r.covered, Some(sb.covers));

    let mut rng = Stream::new(8, "ob").rng();
    let v = random_matrix(10, &mut rng);
    let other = sample_body(&p, &s("ob2")).unwrap();
    let r = check_one_body(&v, &sb.body, &other.body, &other.subsets, 1.0, &opts, &s("e")).unwrap();
    let alpha = r.gauge_lo * 0.9;
    let fail = check_one_body(&v, &sb.body, &other.body, &other.subsets, alpha, &opts, &s("e")).unwrap();
    assert!(!fail.outcome);
    // The witness lies in K and its image leaves αK′.
    let image = v.scaled(fail.scale).mul_vec(&fail.witness).unwrap();
    assert!(other.body.gauge(&image, 1e-8).unwrap().lo > alpha);
    assert!(sb.body.gauge(&fail.witness, 1e-8).unwrap().hi <= 1.0 + 1e-7);
}

#[test]
fn one_body_flags_missing_coverage() {
    let p = ModelParams::new(8, 0.25, 2).unwrap();
    let subsets = vec![
        bmcompact_core::randmodel::IndexSet::new(8, vec![0, 1]).unwrap(),
        bmcompact_core::randmodel::IndexSet::new(8, vec![2, 3]).unwrap(),
    ];
    let k = make_model_body(&p, &subsets).unwrap();
    let r = check_one_body(&DenseMatrix::identity(8), &k, &k, &subsets, 2.0, &EventOptions::default(), &s("c")).unwrap();
    assert_eq!(r.covered, Some(false));
    assert!(!r.notes.is_empty());
}

#[test]
fn separation_on_isometric_and_random_pairs() {
    let p = ModelParams::new(8, 0.25, 4).unwrap();
    let k = sample_body(&p, &s("sep")).unwrap().body;
    let mut rng = Stream::new(1, "sp").rng();
    let (perm, signs) = random_signed_permutation(8, &mut rng);
    let image = k.signed_permutation_image(&perm, &signs).unwrap();
    let opts = SeparationOptions { bm: BmOptions { refine_evaluations: 8, ..BmOptions::default() }, ..Default::default() };
    let rep = separation_matrix(&[k.clone(), k.clone(), image], &opts, &s("sep"), &Sequential).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            let v = rep.matrix[i][j].unwrap();
            assert!(v >= 1.0 && v <= 1.0 + 1e-6, "({i},{j}) = {v}");
            assert_eq!(rep.matrix[i][j], rep.matrix[j][i]);
        }
    }
    assert_eq!(rep.below_threshold, 3);

    let budget = SeparationOptions { max_pairs: Some(1), ..opts.clone() };
    let (_, partial) = run_separation(&p, 3, &budget, &s("run"), &Sequential).unwrap();
    assert_eq!(partial.pairs.iter().filter(|q| q.missing.is_some()).count(), 2);
    assert!(partial.predicted_scale.is_some());

    let (_, a) = run_separation(&p, 3, &opts, &s("run"), &Sequential).unwrap();
    let (_, b) = run_separation(&p, 3, &opts, &s("run"), &Reversed).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.histogram.iter().map(|h| h.count).sum::<usize>(), 3);
    assert!(run_separation(&p, 1, &opts, &s("run"), &Sequential).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn operator_norms_are_submultiplicative(seed in any::<u64>(), n in 2usize..6) {
        let mut rng = Stream::new(seed, "sub").rng();
        // Exactly evaluable source: generators and an ℓ₁ ball.
        let k = HullBody::new(n, vec![
            BodyComponent::points(random_points(n, 2, &mut rng), true),
            BodyComponent::ball(BallNorm::L1, 0.8),
        ]).unwrap();
        let k2 = random_target(n, &mut rng);
        let k3 = random_target(n, &mut rng);
        let t = random_matrix(n, &mut rng);
        let sm = random_matrix(n, &mut rng);
        let opts = OpNormOptions::default();
        let st = op_norm(&sm.matmul(&t).unwrap(), &k, &k3, &opts, &s("a")).unwrap();
        let a = op_norm(&sm, &k2, &k3, &opts, &s("b")).unwrap();
        let b = op_norm(&t, &k, &k2, &opts, &s("c")).unwrap();
        prop_assert!(st.hi <= a.hi * b.hi + 1e-8, "{} > {}·{}", st.hi, a.hi, b.hi);
        prop_assert!(0.0 <= st.lo && st.lo <= st.hi);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn estimate_invariant_under_relabelling(seed in any::<u64>(), n in 5usize..11, big_n in 2usize..6) {
        let p = ModelParams::new(n, 0.3, big_n).unwrap();
        let k = sample_body(&p, &Stream::new(seed, "k")).unwrap().body;
        let k2 = sample_body(&p, &Stream::new(seed, "k2")).unwrap().body;
        let mut rng = Stream::new(seed, "uw").rng();
        let (u, us) = random_signed_permutation(n, &mut rng);
        let (w, ws) = random_signed_permutation(n, &mut rng);
        let opts = BmOptions { refine_evaluations: 12, ..BmOptions::default() };
        let base = bm_upper(&k, &k2, &opts, &s("inv")).unwrap();
        let moved = bm_upper(
            &k.signed_permutation_image(&u, &us).unwrap(),
            &k2.signed_permutation_image(&w, &ws).unwrap(),
            &opts,
            &s("inv"),
        ).unwrap();
        prop_assert!((moved.upper - base.upper).abs() <= 1e-6 * base.upper, "{} vs {}", moved.upper, base.upper);
    }
}
