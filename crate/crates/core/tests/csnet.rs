use bmcompact_core::csnet::*;
use bmcompact_core::randmodel::Stream;
use bmcompact_core::Sequential;
use proptest::prelude::*;

const CAP: u128 = DEFAULT_ENUMERATION_CAP;

/// `n·τ^{−L} < 1 − τ^{−1}` for `τ = a/b`, as `n·b^L < a^{L−1}(a − b)` in integers.
fn rational_condition(n: u128, a: u128, b: u128, l: u32) -> bool {
    n * b.pow(l) < a.pow(l - 1) * (a - b)
}

#[test]
fn l_matches_integer_oracle_and_is_monotone() {
    for (tau, a, b) in [(1.5, 3u128, 2u128), (2.0, 2, 1), (4.0, 4, 1)] {
        let mut prev = 0;
        for n in 1..=100usize {
            let l = compute_l(n, tau).unwrap();
            assert!(rational_condition(n as u128, a, b, l), "n={n} tau={tau}");
            assert!(l == 1 || !rational_condition(n as u128, a, b, l - 1), "n={n} tau={tau}: not minimal");
            assert!(l >= prev);
            prev = l;
        }
    }
}

fn binom(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

#[test]
fn enumeration_matches_brute_force() {
    for n in 1..=5usize {
        for l in 1..=4u32 {
            let f = enumerate_psi(n, l, CAP).unwrap();
            assert_eq!(f.len() as u64, binom((n + l as usize - 1) as u64, l as u64));
            // Every L-tuple over [n], filtered to nondecreasing ones, in lexicographic order.
            let mut all = Vec::new();
            let total = (n as u32).pow(l);
            for code in 0..total {
                let mut c = code;
                let mut t = vec![0u32; l as usize];
                for slot in t.iter_mut().rev() {
                    *slot = c % n as u32 + 1;
                    c /= n as u32;
                }
                if t.windows(2).all(|w| w[0] <= w[1]) {
                    all.push(t);
                }
            }
            assert_eq!(f.maps, all);
        }
    }
}

#[test]
fn phi_closed_forms() {
    let tau = 2.0;
    let inf = CsBody::lp(6, f64::INFINITY).unwrap();
    let one = CsBody::lp(6, 1.0).unwrap();
    for psi in enumerate_psi(6, 3, CAP).unwrap().maps {
        assert_eq!(phi(&inf, &psi, tau).unwrap(), 0.5);
    }
    for k in 1..=6u32 {
        assert!((phi(&one, &[k, k, k], tau).unwrap() - k as f64 / 2.0).abs() < 1e-15);
    }
    let l = 5;
    let ident: Vec<u32> = (1..=l).collect();
    let one5 = CsBody::lp(5, 1.0).unwrap();
    let geo: f64 = (1..=l).map(|i| 0.5f64.powi(i as i32)).sum();
    assert!((phi(&one5, &ident, tau).unwrap() - geo).abs() < 1e-15);
    assert!(phi(&one5, &[0, 1, 2, 3, 4], tau).is_err());
}

#[test]
fn theta_examples() {
    let tau = 2.0;
    let l = compute_l(4, tau).unwrap();
    let fam = enumerate_psi(4, l, CAP).unwrap();
    let inf = theta(&CsBody::lp(4, f64::INFINITY).unwrap(), &fam, tau).unwrap();
    assert!(inf.values.iter().all(|v| (v + tau.ln()).abs() < 1e-15));
    assert!(inf.out_of_range.is_empty());
    let one = theta(&CsBody::lp(4, 1.0).unwrap(), &fam, tau).unwrap();
    assert!(one.values.iter().zip(&inf.values).all(|(a, b)| a >= b));
}

fn lp_family(n: usize, ps: &[f64]) -> Vec<CsBody> {
    ps.iter().map(|&p| CsBody::lp(n, p).unwrap()).collect()
}

#[test]
fn net_examples() {
    let k = CsBody::lp(6, 3.0).unwrap();
    let net = build_net(&[k.clone(), k], 2.0, &NetOptions::default(), &Sequential).unwrap();
    assert_eq!(net.cells.len(), 1);

    let net = build_net(&lp_family(8, &[1.0, f64::INFINITY]), 2.0, &NetOptions::default(), &Sequential).unwrap();
    assert_eq!(net.cells.len(), 2);

    let mut ps: Vec<f64> = (0..=30).map(|i| 1.0 + 0.1 * i as f64).collect();
    ps.push(f64::INFINITY);
    let fam = lp_family(8, &ps);
    let net = build_net(&fam, 4.0, &NetOptions::default(), &Sequential).unwrap();
    assert!(net.cells.len() <= fam.len());
    assert!((net.cells.len() as f64).ln() <= net.stats.ln_cell_bound);
    assert_eq!(net.stats.psi_count, binom(8 + net.l as u64 - 1, net.l as u64) as usize);
}

#[test]
fn certificate_examples() {
    let s = Stream::new(4, "cert");
    let n = 8;
    let tau = 2.0;
    let fam = enumerate_psi(n, compute_l(n, tau).unwrap(), CAP).unwrap();
    let l2 = CsBody::lp(n, 2.0).unwrap();
    let same = certify_pair(&l2, &l2, &fam, tau, 500, &s).unwrap();
    assert!(same.granted && same.max_ratio_kd == 1.0 && same.max_ratio_dk == 1.0);

    let refused = certify_pair(&CsBody::lp(n, 1.0).unwrap(), &CsBody::lp(n, f64::INFINITY).unwrap(), &fam, tau, 100, &s).unwrap();
    assert!(!refused.granted);
    let w = refused.witness.unwrap();
    assert!(w.phi_k > tau * w.phi_d);

    let close = certify_pair(&l2, &CsBody::lp(n, 2.1).unwrap(), &fam, tau, 10_000, &s).unwrap();
    assert!(close.granted && close.ratios_within_tau3);
    assert_eq!(close.distance_bound, 64.0);
}

fn arb_body(n: usize) -> impl Strategy<Value = CsBody> {
    prop_oneof![
        (1.0f64..6.0).prop_map(move |p| CsBody::lp(n, p).unwrap()),
        Just(CsBody::lp(n, f64::INFINITY).unwrap()),
        (1..=n).prop_map(move |k| CsBody::top_k(n, k).unwrap()),
        prop::collection::vec(0.0f64..1.0, n).prop_map(move |mut w| {
            w.sort_by(|a, b| b.total_cmp(a));
            w[0] += 0.1;
            CsBody::lorentz(n, w).unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn bodies_are_completely_symmetric_norms(
        k in arb_body(6),
        x in prop::collection::vec(-2.0f64..2.0, 6),
        y in prop::collection::vec(-2.0f64..2.0, 6),
        s in -5.0f64..5.0,
        perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(),
        signs in prop::collection::vec(any::<bool>(), 6),
    ) {
        let nx = k.norm(&x).unwrap();
        let sx: Vec<f64> = x.iter().map(|v| s * v).collect();
        prop_assert!((k.norm(&sx).unwrap() - s.abs() * nx).abs() <= 1e-10 * (1.0 + nx));
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        prop_assert!(k.norm(&xy).unwrap() <= nx + k.norm(&y).unwrap() + 1e-10);
        let px: Vec<f64> = perm.iter().zip(&signs).map(|(&p, &f)| if f { -x[p] } else { x[p] }).collect();
        prop_assert!((k.norm(&px).unwrap() - nx).abs() <= 1e-12 * (1.0 + nx));
        let mut e1 = vec![0.0; 6];
        e1[0] = 1.0;
        prop_assert!((k.norm(&e1).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quantization_chain(k in arb_body(10), raw in prop::collection::vec(0.0f64..1.0, 10), decay in 0.0f64..6.0, tau in 1.3f64..4.0) {
        let n = 10;
        let l = compute_l(n, tau).unwrap();
        let mut x: Vec<f64> = raw.iter().enumerate().map(|(j, v)| v * (-decay * j as f64).exp()).collect();
        x.sort_by(|a, b| b.total_cmp(a));
        let nx = k.norm(&x).unwrap();
        prop_assume!(nx > 0.0);
        for v in x.iter_mut() { *v /= nx; }
        let q = quantize(&x, tau, l).unwrap();
        let floor = tau.powi(-(l as i32));
        for (xj, yj) in x.iter().zip(&q.y) {
            if *xj >= floor {
                prop_assert!(*yj <= *xj);
                // Strict except at xⱼ = 1; rounding in τ^{−l} allows an ulp either way.
                prop_assert!(*xj < tau * yj * (1.0 + 1e-12));
            } else {
                prop_assert_eq!(*yj, 0.0);
            }
        }
        let ny = k.norm(&q.y).unwrap();
        prop_assert!(1.0 <= tau * tau * ny * (1.0 + 1e-9));
        let psi = q.psi.unwrap();
        prop_assert!(psi.windows(2).all(|w| w[0] <= w[1]) && psi[0] >= 1 && psi.len() == l as usize);
        let v = psi_vector(n, &psi, tau);
        let scale = tau.powi(-(q.shift as i32));
        for (a, b) in v.iter().zip(&q.y) {
            prop_assert!((a * scale - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn every_body_is_certified_against_its_representative(bodies in prop::collection::vec(arb_body(6), 1..8), tau in 1.5f64..3.0) {
        let net = build_net(&bodies, tau, &NetOptions::default(), &Sequential).unwrap();
        for (i, b) in bodies.iter().enumerate() {
            let rep = &bodies[net.representative_of(i)];
            let th = &net.theta[i];
            let tr = &net.theta[net.representative_of(i)];
            prop_assert!(th.iter().zip(tr).all(|(a, b)| (a - b).abs() <= tau.ln() * (1.0 + 1e-12)));
            let c = certify_pair(b, rep, &net.family, tau, 200, &Stream::new(i as u64, "rep")).unwrap();
            prop_assert!(c.granted && c.ratios_within_tau3);
        }
    }
}
