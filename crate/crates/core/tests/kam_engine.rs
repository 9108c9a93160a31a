use std::sync::OnceLock;

use nlskam::algebra::LieOptions;
use nlskam::homological::{compatible_blocks, high_modes};
use nlskam::kam::*;
use nlskam::lattice::{build_blocks, norm2};
use nlskam::nonresonance::{check_melnikov_nf, ParameterPoint, SamplingBox};
use nlskam::norms::{ptame_vfield_norm, DomainParams};
use nlskam::pipeline::*;
use nlskam::Error;

struct Fixture {
    spec: ModelSpec,
    sched: ScheduleParams,
    w: ParameterPoint,
    kam: KamResult,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let spec = ModelSpec::toy(1e-3, 3);
        let sched = ScheduleParams::new(1e-3);
        let lat = spec.lattice().unwrap();
        let (_, w) = first_admissible(&lat, SamplingBox::default(), &sched, 0..100).unwrap().expect("an admissible draw");
        let kam = run_kam(&spec, &w, &sched).unwrap();
        Fixture { spec, sched, w, kam }
    })
}

#[test]
fn low_jet_decays_below_outer_schedule() {
    let f = fixture();
    assert!(!f.kam.rounds.is_empty());
    for m in 1..=2usize {
        // a finished iteration keeps its last measured value
        let measured = f.kam.rounds.iter().take(m).last().unwrap().low_norm;
        assert!(measured < f.sched.eps_outer(m), "round {m}: {measured:e} vs {:e}", f.sched.eps_outer(m));
    }
    assert!(f.kam.final_low_norm < LOW_JET_FLOOR);
}

#[test]
fn inner_steps_decrease_strictly() {
    for s in &fixture().kam.steps {
        assert!(s.low_norm < s.low_norm_before, "{}: {:e} -> {:e}", s.id(), s.low_norm_before, s.low_norm);
    }
}

#[test]
fn every_step_is_a_conjugacy() {
    for s in &fixture().kam.steps {
        assert!(s.conjugacy_error < 1e-8, "{}: {:e}", s.id(), s.conjugacy_error);
        assert!(s.residual < 1e-9);
    }
}

#[test]
fn generators_preserve_brackets() {
    let lie = LieOptions::default();
    for (i, s) in fixture().kam.generators.iter().enumerate() {
        let defect = bracket_preservation_defect(s, 4, 100 + i as u64, lie).unwrap();
        assert!(defect < 1e-8, "generator {i}: {defect:e}");
    }
}

#[test]
fn frequency_shift_is_first_order_in_eps() {
    // ∫|u|⁴ contributes 2εq r_a on the tangential site
    let f = fixture();
    let expected = 2.0 * f.spec.eps * f.spec.q[0];
    assert!((f.kam.omega_shift - expected).abs() < 10.0 * f.spec.eps.powi(2), "{:e}", f.kam.omega_shift);
}

#[test]
fn final_normal_correction_couples_equal_norm_sites() {
    let f = fixture();
    let lat = f.kam.f_inf.lattice();
    for (&(a, b), c) in f.kam.h_inf().entries() {
        if c.norm() > 0.0 {
            assert_eq!(norm2(&lat.normal()[a]), norm2(&lat.normal()[b]));
        }
    }
    assert!(f.kam.h_inf().hermitian_deviation() < 1e-12);
}

#[test]
fn unperturbed_model_is_a_fixed_point() {
    let f = fixture();
    let spec = ModelSpec { eps: 0.0, ..f.spec.clone() };
    let kam = run_kam(&spec, &f.w, &f.sched).unwrap();
    assert!(kam.steps.is_empty());
    assert_eq!(kam.omega_shift, 0.0);
    assert!(kam.f_inf.is_empty());
}

#[test]
fn resonant_parameter_is_excluded() {
    let f = fixture();
    let lat = f.spec.lattice().unwrap();
    // ω = 1 + w₁ = 2 and Ω_{−1} = 1 + w₋₁ = 2 give ⟨k,ω⟩ − Ω = 0 at k = 1
    let mut w = f.w.clone();
    w.set(&[1], 1.0);
    w.set(&[-1], 1.0);
    w.set(&[0], 0.5);
    let report = first_round_check(&lat, &w, &f.sched).unwrap();
    assert!(!report.passed);
    match run_kam(&f.spec, &w, &f.sched) {
        Err(Error::ParameterExcluded(_)) => {}
        other => panic!("expected exclusion, got {:?}", other.map(|r| r.steps.len())),
    }
}

fn assert_nf_structure(nf: &NormalFormResult, n: f64, m: u32) {
    let lat = nf.transformed.lattice().clone();
    let high = high_modes(&lat, n);
    let sum = nf.z.plus(&nf.p).plus(&nf.r).plus(&nf.q);
    assert_eq!(sum.max_abs_diff(&nf.transformed), 0.0);
    for (t, _) in nf.z.iter() {
        assert!(t.k.iter().all(|&k| k == 0));
        for s in 0..lat.n_normal() {
            if !high[s] {
                assert_eq!(t.mu(s), t.nu(s));
            }
        }
        let hu: Vec<usize> = t.mu_iter().filter(|p| high[p.0]).flat_map(|(s, e)| std::iter::repeat_n(s, e as usize)).collect();
        let hv: Vec<usize> = t.nu_iter().filter(|p| high[p.0]).flat_map(|(s, e)| std::iter::repeat_n(s, e as usize)).collect();
        assert!(hu.len() == hv.len() && hu.len() <= 1);
        if let (Some(&a), Some(&b)) = (hu.first(), hv.first()) {
            assert_eq!(norm2(&lat.normal()[a]), norm2(&lat.normal()[b]));
        }
        assert_eq!(t.weighted_degree() % 2, 0, "odd resonant layer");
    }
    for (t, _) in nf.q.iter() {
        assert!(t.count_on(&high) >= 3);
    }
    for s in &nf.steps {
        assert!(s.conjugacy_error < 1e-8);
        assert!(s.residual < 1e-9);
    }
    let mut worst = 0.0f64;
    for (t, c) in nf.transformed.iter() {
        if t.weighted_degree() <= m + 2 && t.count_on(&high) <= 2 && !is_nf_resonant(t, &high, &lat) {
            worst = worst.max(c.norm());
        }
    }
    assert!(worst < 1e-9, "non-resonant coefficient {worst:e}");
}

#[test]
fn normal_form_with_literal_n() {
    let f = fixture();
    let settings = NfSettings::new(0.05, 2);
    let (choice, nf) = run_normal_form(&f.kam, &f.sched, &settings).unwrap();
    assert!((choice.n - 20.0).abs() < 1e-9);
    assert!(nf.max_nonresonant < 1e-9);
    assert_nf_structure(&nf, choice.n, 2);
}

#[test]
fn normal_form_with_high_modes() {
    let f = fixture();
    let settings = NfSettings { c0: 0.5, n: Some(1.5), delta_t: Some(6.0), ..NfSettings::new(0.05, 2) };
    let (_, nf) = run_normal_form(&f.kam, &f.sched, &settings).unwrap();
    assert!(!nf.q.is_empty());
    let high = high_modes(nf.transformed.lattice(), 1.5);
    assert!(nf.z.iter().any(|(t, _)| t.count_on(&high) == 2));
    assert_nf_structure(&nf, 1.5, 2);
}

#[test]
fn normal_form_small_divisor_raised_exactly_when_scan_fails() {
    let f = fixture();
    let lat = f.kam.f_inf.lattice().clone();
    for n in [1.5, 2.5, 20.0] {
        let settings = NfSettings { n: Some(n), ..NfSettings::new(0.05, 2) };
        let (_, th, radius) = nf_thresholds(&f.kam, &f.sched, &settings, 1).unwrap();
        let dec = compatible_blocks(&f.kam.q_inf, &build_blocks(&lat, radius).unwrap(), &lat);
        let high = high_modes(&lat, n);
        let lambda: Vec<(usize, f64)> =
            (0..lat.n_normal()).filter(|&a| !high[a]).map(|a| (a, f.kam.q_inf.big_omega[a] + f.kam.q_inf.h.get(a, a).re)).collect();
        let scan = check_melnikov_nf(&f.kam.q_inf, &dec, &lat, &lambda, &th).unwrap();
        match run_normal_form(&f.kam, &f.sched, &settings) {
            Err(Error::SmallDivisor { value, threshold, .. }) => assert!(!scan.passed && value < threshold),
            Ok(_) => assert!(scan.passed),
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}

#[test]
fn low_jet_of_result_has_small_tame_norm() {
    let f = fixture();
    let dom = DomainParams::kam(f.sched.sigma / 2.0, 0.0, f.sched.p);
    let low = f.kam.f_inf.split_low_high().0;
    assert!(ptame_vfield_norm(&low, &dom) < LOW_JET_FLOOR);
}

#[test]
fn artifact_reproduces_the_normal_form() {
    let f = fixture();
    let settings = NfSettings::new(0.05, 2);
    let art = KamArtifact::new(&f.kam, &f.w).unwrap();
    assert_eq!(art.parameter(), f.w);
    let (_, direct) = run_normal_form(&f.kam, &f.sched, &settings).unwrap();
    let (_, restored) = art.normal_form(f.kam.f_inf.lattice(), &f.sched, &settings).unwrap();
    assert_eq!(direct.transformed.max_abs_diff(&restored.transformed), 0.0);
}
