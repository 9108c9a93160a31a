use proptest::prelude::*;

use nlskam::lattice::{build_blocks, norm2, Lattice, LatticeConfig};
use nlskam::nonresonance::{
    check_melnikov_kam, check_melnikov_nf, estimate_excluded_measure, exclusion_flags, frequencies, DivisorKind,
    NfThresholds, ParameterPoint, SamplingBox,
};
use nlskam::random::rng;

fn lattice() -> Lattice {
    Lattice::new(LatticeConfig { d: 1, tangential: vec![vec![1], vec![-2]], cutoff: 4 }).unwrap()
}

/// Site-level enumeration of the KAM divisors for a diagonal quadratic form.
fn brute_kam(lat: &Lattice, w: &ParameterPoint, delta: f64, kappa: f64, dp: i32) -> (usize, [usize; 4], f64) {
    let q = frequencies(lat, w).unwrap();
    let dec = build_blocks(lat, delta).unwrap();
    let n = lat.n_normal();
    let reach = dp as f64 + 2.0 * dec.d_delta;
    let (mut tested, mut counts, mut worst) = (0, [0usize; 4], f64::INFINITY);
    let mut visit = |kind: usize, v: f64| {
        tested += 1;
        worst = f64::min(worst, v.abs() - kappa);
        if v.abs() < kappa {
            counts[kind] += 1;
        }
    };
    for k0 in -dp..=dp {
        for k1 in -(dp - k0.abs())..=(dp - k0.abs()) {
            let x = k0 as f64 * q.omega[0] + k1 as f64 * q.omega[1];
            let zero = k0 == 0 && k1 == 0;
            if !zero {
                visit(0, x);
            }
            for i in 0..n {
                visit(1, x + q.big_omega[i]);
            }
            for i in 0..n {
                for j in 0..n {
                    let (p, r) = (dec.block_of[i], dec.block_of[j]);
                    if p <= r {
                        visit(2, x + q.big_omega[i] + q.big_omega[j]);
                    }
                    let exempt = zero && (p == r || norm2(&lat.normal()[i]) == norm2(&lat.normal()[j]));
                    if dec.block_distance(p, r, lat) <= reach && !exempt {
                        visit(3, x + q.big_omega[i] - q.big_omega[j]);
                    }
                }
            }
        }
    }
    (tested, counts, worst)
}

fn kind_index(k: DivisorKind) -> usize {
    match k {
        DivisorKind::Diophantine => 0,
        DivisorKind::FirstMelnikov => 1,
        DivisorKind::SecondSameSign => 2,
        DivisorKind::SecondOppositeSign => 3,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kam_check_matches_brute_force(seed in any::<u64>(), delta in prop::sample::select(vec![0.0, 2.0, 8.0]), kappa in 0.01f64..0.3) {
        let lat = lattice();
        let w = ParameterPoint::sample(&lat, SamplingBox::default(), &mut rng(seed));
        let q = frequencies(&lat, &w).unwrap();
        let dec = build_blocks(&lat, delta).unwrap();
        let rep = check_melnikov_kam(&q, &dec, &lat, kappa, 3.0).unwrap();
        let (tested, counts, worst) = brute_kam(&lat, &w, delta, kappa, 3);
        let mut got = [0usize; 4];
        for v in &rep.violations {
            got[kind_index(v.kind)] += 1;
        }
        prop_assert_eq!(rep.tested, tested);
        prop_assert_eq!(got, counts);
        prop_assert!((rep.worst_margin - worst).abs() < 1e-12);
        prop_assert_eq!(rep.passed, counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn shrinking_kappa_never_adds_violations(seed in any::<u64>(), k1 in 0.005f64..0.2, k2 in 0.005f64..0.2) {
        let lat = lattice();
        let w = ParameterPoint::sample(&lat, SamplingBox::default(), &mut rng(seed));
        let q = frequencies(&lat, &w).unwrap();
        let dec = build_blocks(&lat, 2.0).unwrap();
        let (lo, hi) = if k1 < k2 { (k1, k2) } else { (k2, k1) };
        let a = check_melnikov_kam(&q, &dec, &lat, lo, 3.0).unwrap();
        let b = check_melnikov_kam(&q, &dec, &lat, hi, 3.0).unwrap();
        prop_assert!(a.violations.len() <= b.violations.len());
        prop_assert!(!b.passed || a.passed);
    }

    #[test]
    fn nf_check_matches_brute_force(seed in any::<u64>()) {
        let lat = Lattice::new(LatticeConfig { d: 1, tangential: vec![vec![1]], cutoff: 4 }).unwrap();
        let w = ParameterPoint::sample(&lat, SamplingBox::default(), &mut rng(seed));
        let q = frequencies(&lat, &w).unwrap();
        let dec = build_blocks(&lat, 0.0).unwrap();
        let th = NfThresholds { kappa_t: 0.9, delta_t: 2.0, m: 1, n: 2.0, d: 1, c0: 0.05 };
        let low: Vec<(usize, f64)> = (0..lat.n_normal())
            .filter(|&i| norm2(&lat.normal()[i]) <= 4)
            .map(|i| (i, q.big_omega[i]))
            .collect();
        let high: Vec<usize> = (0..lat.n_normal()).filter(|&i| norm2(&lat.normal()[i]) > 4).collect();
        let rep = check_melnikov_nf(&q, &dec, &lat, &low, &th).unwrap();

        let nl = low.len();
        let lmax = 3i32;
        let mut tested = 0usize;
        let mut count = 0usize;
        let mut worst = f64::INFINITY;
        let total = (2 * lmax + 1).pow(nl as u32);
        for code in 0..total {
            let mut c = code;
            let mut l = vec![0i32; nl];
            for e in l.iter_mut() {
                *e = c % (2 * lmax + 1) - lmax;
                c /= 2 * lmax + 1;
            }
            let l1: i32 = l.iter().map(|x| x.abs()).sum();
            if l1 > lmax {
                continue;
            }
            let thr = th.surrogate(l1 as u32);
            let s: f64 = l.iter().zip(&low).map(|(&e, x)| e as f64 * x.1).sum();
            for k in -2i32..=2 {
                if k == 0 && l1 == 0 {
                    continue;
                }
                let x = k as f64 * q.omega[0] + s;
                let mut values = vec![x];
                for &a in &high {
                    values.push(x + q.big_omega[a]);
                }
                for &a in &high {
                    for &b in &high {
                        if dec.block_of[a] <= dec.block_of[b] {
                            values.push(x + q.big_omega[a] + q.big_omega[b]);
                        }
                        if dec.block_distance(dec.block_of[a], dec.block_of[b], &lat) <= 2.0 + 2.0 * dec.d_delta {
                            values.push(x + q.big_omega[a] - q.big_omega[b]);
                        }
                    }
                }
                for v in values {
                    tested += 1;
                    worst = worst.min(v.abs() - thr);
                    if v.abs() < thr {
                        count += 1;
                    }
                }
            }
        }
        prop_assert_eq!(rep.tested, tested);
        prop_assert_eq!(rep.violations.len(), count);
        prop_assert!((rep.worst_margin - worst).abs() < 1e-12);
    }
}

#[test]
fn measure_estimate_is_monotone_in_kappa_with_shared_samples() {
    let lat = lattice();
    let dec = build_blocks(&lat, 2.0).unwrap();
    let bx = SamplingBox::default();
    let mut prev = 0.0;
    for kappa in [0.005, 0.01, 0.02, 0.05, 0.1] {
        let est = estimate_excluded_measure(&lat, &dec, kappa, 3.0, 200, bx, 7).unwrap();
        assert!(est.fraction >= prev);
        assert!(est.ci_low <= est.fraction && est.fraction <= est.ci_high);
        prev = est.fraction;
    }
    let a = exclusion_flags(&lat, &dec, 0.02, 3.0, 120, bx, 3).unwrap();
    let b = exclusion_flags(&lat, &dec, 0.02, 3.0, 120, bx, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn too_few_samples_rejected() {
    let lat = lattice();
    let dec = build_blocks(&lat, 2.0).unwrap();
    assert!(estimate_excluded_measure(&lat, &dec, 0.02, 3.0, 50, SamplingBox::default(), 1).is_err());
}
