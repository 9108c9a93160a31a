//! The KAM iteration (finite inner loops nested in a super-convergent outer
//! loop) and the partial normal form of order `M+2` around the resulting
//! torus.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::algebra::{is_low, lie_transform, poisson_bracket, LieOptions, Monomial, Polynomial};
use crate::error::{Error, Result};
use crate::homological::{compatible_blocks, high_modes, solve_kam_homological, solve_nf_homological, NfGeneratorStep};
use crate::lattice::{block_diameter, build_blocks, norm2, BlockDecomposition, Lattice};
use crate::nonresonance::{check_melnikov_kam, check_melnikov_nf, MelnikovReport, NfThresholds};
use crate::norms::{ptame_vfield_norm, DomainParams};
use crate::quadratic::{NormalMatrix, QuadraticForm};
use crate::random::{random_graded_polynomial, realify, rng, MonomialShape};

/// Below this low-jet norm the iteration stops.
pub const LOW_JET_FLOOR: f64 = 1e-13;
/// Largest per-step conjugacy defect accepted.
pub const CONJUGACY_TOL: f64 = 1e-8;

/// Smallness, domain and cap parameters of the KAM iteration. The literal
/// ladders are computed from `epsilon`; `kappa`, `delta_cap` and `n_inner`
/// override the values that are too large to run at desk scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub epsilon: f64,
    pub rho: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub p: f64,
    /// Initial block radius `Δ`.
    pub delta: f64,
    /// Initial `Λ`.
    pub lambda: f64,
    pub kappa: Option<f64>,
    pub delta_cap: Option<f64>,
    pub n_inner: Option<usize>,
    pub m_max: usize,
    pub cte: f64,
    pub lie_order: usize,
}

impl ScheduleParams {
    pub fn new(epsilon: f64) -> Self {
        ScheduleParams {
            epsilon,
            rho: 0.5,
            sigma: 0.5,
            gamma: 0.5,
            p: 4.0,
            delta: 2.0,
            lambda: 3.0,
            kappa: Some(0.02),
            delta_cap: Some(10.0),
            n_inner: None,
            m_max: 3,
            cte: 1.0,
            lie_order: crate::algebra::lie::DEFAULT_ORDER_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(self.epsilon) || !unit(self.rho) || !unit(self.sigma) {
            return Err(Error::InvalidConfig("epsilon, rho, sigma must lie in (0,1)".into()));
        }
        if !(self.gamma > 0.0) || self.delta < 0.0 || self.m_max == 0 || self.cte <= 0.0 {
            return Err(Error::InvalidConfig("need gamma > 0, delta >= 0, m_max >= 1, cte > 0".into()));
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0) {
                return Err(Error::InvalidConfig(format!("kappa {k} must be positive")));
            }
        }
        Ok(())
    }

    /// `κ` with `κ²⁰ = ε^{1/20}`.
    pub fn literal_kappa(&self) -> f64 {
        self.epsilon.powf(1.0 / 400.0)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa.unwrap_or_else(|| self.literal_kappa())
    }

    /// `ε_m = exp(−(log 1/ε_{m−1})²/20)`, `ε_0 = ε`.
    pub fn eps_outer(&self, m: usize) -> f64 {
        (0..m).fold(self.epsilon, |e, _| (-(e.ln()).powi(2) / 20.0).exp())
    }

    /// `ϑ_m = Σ_{j≤m} j^{−2} / (2·π²/6)`.
    pub fn theta(m: usize) -> f64 {
        (1..=m).map(|j| 1.0 / (j * j) as f64).sum::<f64>() / (2.0 * std::f64::consts::PI.powi(2) / 6.0)
    }

    pub fn rho_m(&self, m: usize) -> f64 {
        (1.0 - Self::theta(m)) * self.rho
    }

    pub fn sigma_m(&self, m: usize) -> f64 {
        (1.0 - Self::theta(m)) * self.sigma
    }

    /// `Δ' = 80 (log 1/ε)² / min(γ−γ₊, ρ−ρ₊)` of one inner loop.
    pub fn inner_delta_prime(eps: f64, gap_gamma: f64, gap_rho: f64) -> f64 {
        80.0 * eps.ln().powi(2) / gap_gamma.min(gap_rho)
    }

    /// The literal and enforced values of every outer round.
    pub fn plan(&self, lat: &Lattice) -> Result<Vec<RoundPlan>> {
        self.validate()?;
        let d0 = build_blocks(lat, self.delta)?;
        let mut gamma_prev = self.gamma.min(1.0 / d0.d_delta.max(1.0));
        let mut out = Vec::new();
        for m in 1..=self.m_max {
            let eps_prev = self.eps_outer(m - 1);
            let (rho_prev, rho_m) = (self.rho_m(m - 1), self.rho_m(m));
            let literal = 80.0 * eps_prev.ln().powi(2) / gamma_prev.min(rho_prev - rho_m);
            let delta_m = self.delta_cap.map_or(literal, |c| literal.min(c));
            let dec = build_blocks(lat, delta_m)?;
            let d_delta_m = block_diameter(&dec, lat).max(1.0);
            let n_literal = (1.0 / eps_prev).ln().floor().max(0.0) as usize;
            let n = self.n_inner.unwrap_or(n_literal).max(1);
            let lambda_0 = self.cte * self.lambda.max(d0.d_delta.powi(2)).max(d_delta_m.powi(2));
            let lambda_ladder = (0..=n).map(|j| lambda_0 + j as f64 * (d0.d_delta + 30.0)).collect();
            out.push(RoundPlan {
                m,
                eps_prev,
                eps_m: self.eps_outer(m),
                theta: Self::theta(m),
                rho_prev,
                rho_m,
                sigma_prev: self.sigma_m(m - 1),
                sigma_m: self.sigma_m(m),
                gamma_prev,
                gamma_m: 1.0 / d_delta_m,
                delta_m_literal: literal,
                delta_m,
                d_delta_m,
                lambda_m: self.cte * d_delta_m.powi(2),
                lambda_ladder,
                n_literal,
                n,
                kappa: self.kappa(),
                kappa_literal: self.literal_kappa(),
            });
            gamma_prev = 1.0 / d_delta_m;
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundPlan {
    pub m: usize,
    pub eps_prev: f64,
    pub eps_m: f64,
    pub theta: f64,
    pub rho_prev: f64,
    pub rho_m: f64,
    pub sigma_prev: f64,
    pub sigma_m: f64,
    pub gamma_prev: f64,
    pub gamma_m: f64,
    pub delta_m_literal: f64,
    /// Fourier cutoff and block radius used in the round.
    pub delta_m: f64,
    pub d_delta_m: f64,
    pub lambda_m: f64,
    pub lambda_ladder: Vec<f64>,
    pub n_literal: usize,
    pub n: usize,
    pub kappa: f64,
    pub kappa_literal: f64,
}

impl RoundPlan {
    /// `σ_j` of the inner ladder, `j = 0..=n`.
    pub fn sigma_j(&self, j: usize) -> f64 {
        self.sigma_prev - j as f64 * (self.sigma_prev - self.sigma_m) / self.n as f64
    }

    pub fn rho_j(&self, j: usize) -> f64 {
        self.rho_prev - j as f64 * (self.rho_prev - self.rho_m) / self.n as f64
    }
}

/// Current quadratic part, perturbation and accumulated transformation.
#[derive(Clone, Debug)]
pub struct KamState {
    pub q: QuadraticForm,
    pub f: Polynomial,
    /// Constant part removed from `f`.
    pub energy: f64,
    pub generators: Vec<Polynomial>,
}

impl KamState {
    pub fn new(q: QuadraticForm, f: &Polynomial) -> Self {
        let na = f.lattice().n_tangential();
        let one = Monomial::one(na);
        let energy = f.coeff(&one).re;
        let f = f.filter(|m, _| *m != one);
        KamState { q, f, energy, generators: Vec::new() }
    }

    pub fn hamiltonian(&self) -> Polynomial {
        let lat = self.f.lattice();
        let c = self.f.degree_cutoff();
        self.q
            .to_polynomial(lat, c)
            .plus(&self.f)
            .plus(&Polynomial::constant(lat.clone(), c, self.energy.into()))
    }

    pub fn low_jet(&self) -> Polynomial {
        self.f.filter(|m, _| is_low(m))
    }

    pub fn high_jet(&self) -> Polynomial {
        self.f.filter(|m, _| !is_low(m))
    }
}

/// Per-step measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostic {
    pub round: usize,
    pub step: usize,
    pub low_norm_before: f64,
    pub low_norm: f64,
    pub high_norm: f64,
    /// `high_norm / high_norm_before`: the realized growth of the high jet.
    pub growth: f64,
    pub divisor_margin: f64,
    pub residual: f64,
    pub conjugacy_error: f64,
    pub omega_shift: f64,
    pub h_shift: f64,
    pub generator_terms: usize,
    pub wall_seconds: f64,
}

impl StepDiagnostic {
    pub fn id(&self) -> String {
        format!("{}.{}", self.round, self.step)
    }
}

/// Settings for one inner step.
#[derive(Clone, Debug)]
pub struct StepContext<'a> {
    pub dec: &'a BlockDecomposition,
    pub delta_prime: f64,
    pub kappa: f64,
    pub domain: DomainParams,
    pub lie: LieOptions,
    pub round: usize,
    pub step: usize,
}

fn matrix_shift(a: &QuadraticForm, b: &QuadraticForm) -> f64 {
    let diag: f64 = a.big_omega.iter().zip(&b.big_omega).map(|(x, y)| (x - y).powi(2)).sum();
    let off = a.h.difference(&b.h).frobenius();
    (diag + off * off).sqrt()
}

/// Removes the low jet of `f` up to second order in its size: solves the
/// homological equation, applies the time-one map and moves the resonant
/// part into the quadratic form.
pub fn kam_inner_step(state: &mut KamState, q0: &QuadraticForm, ctx: &StepContext) -> Result<StepDiagnostic> {
    let start = Instant::now();
    let low = state.low_jet();
    let high = state.high_jet();
    let low_before = ptame_vfield_norm(&low, &ctx.domain);
    let high_before = ptame_vfield_norm(&high, &ctx.domain);
    let sol = solve_kam_homological(&state.q, &low, &high, ctx.dec, ctx.delta_prime, ctx.kappa)?;
    let cutoff = state.f.degree_cutoff();
    let lat = state.f.lattice().clone();
    let ham = state.hamiltonian();
    let moved = lie_transform(&ham, &sol.s, cutoff, ctx.lie)?.result;

    let mut q = state.q.clone();
    for (w, c) in q.omega.iter_mut().zip(&sol.chi1) {
        *w += c;
    }
    q.h = q.h.sum(&sol.h1_matrix);
    let na = lat.n_tangential();
    let one = Monomial::one(na);
    let energy = moved.coeff(&one).re;
    let f = moved.minus(&q.to_polynomial(&lat, cutoff)).filter(|m, _| *m != one);

    let check = LieOptions { order_cap: 2 * ctx.lie.order_cap + 4, tail_tol: ctx.lie.tail_tol };
    let reference = lie_transform(&ham, &sol.s, cutoff, check)?.result;
    let next = KamState { q, f, energy, generators: Vec::new() };
    let conjugacy_error = reference.max_abs_diff(&next.hamiltonian());

    let low_norm = ptame_vfield_norm(&next.low_jet(), &ctx.domain);
    let high_norm = ptame_vfield_norm(&next.high_jet(), &ctx.domain);
    state.q = next.q;
    state.f = next.f;
    state.energy = next.energy;
    state.generators.push(sol.s.clone());
    Ok(StepDiagnostic {
        round: ctx.round,
        step: ctx.step,
        low_norm_before: low_before,
        low_norm,
        high_norm,
        growth: if high_before > 0.0 { high_norm / high_before } else { 0.0 },
        divisor_margin: sol.divisor_margin,
        residual: sol.residual,
        conjugacy_error,
        omega_shift: state.q.tangential_shift(q0),
        h_shift: matrix_shift(&state.q, q0),
        generator_terms: sol.s.len(),
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub plan: RoundPlan,
    pub melnikov_worst_margin: f64,
    pub melnikov_tested: usize,
    pub steps_taken: usize,
    /// Low-jet norm at the end of the round on the round's domain.
    pub low_norm: f64,
}

#[derive(Clone, Debug)]
pub struct KamResult {
    pub omega_inf: Vec<f64>,
    pub q_inf: QuadraticForm,
    pub f_inf: Polynomial,
    pub energy: f64,
    pub generators: Vec<Polynomial>,
    pub steps: Vec<StepDiagnostic>,
    pub rounds: Vec<RoundSummary>,
    pub omega_shift: f64,
    pub h_shift: f64,
    /// Parameter points rejected (0 or 1 for a single run).
    pub excluded: usize,
    pub final_low_norm: f64,
}

impl KamResult {
    pub fn h_inf(&self) -> &NormalMatrix {
        &self.q_inf.h
    }
}

fn excluded(report: &MelnikovReport) -> Error {
    match report.violations.iter().min_by(|a, b| a.value.abs().total_cmp(&b.value.abs())) {
        Some(v) => Error::ParameterExcluded(format!(
            "{:?} divisor {:.3e} below {:.3e} at k={:?} blocks {:?}",
            v.kind,
            v.value.abs(),
            v.threshold,
            v.k,
            v.blocks
        )),
        None => Error::ParameterExcluded("Melnikov check failed".into()),
    }
}

/// Runs up to `m_max` outer rounds of `n` inner steps each, rechecking the
/// Melnikov conditions at the start of every round. After the very first
/// step the low-jet norm must have dropped, otherwise the perturbation is
/// declared too large.
pub fn kam_outer_iterate(q: &QuadraticForm, f: &Polynomial, sched: &ScheduleParams) -> Result<KamResult> {
    let lat: Arc<Lattice> = f.lattice().clone();
    let plans = sched.plan(&lat)?;
    let mut state = KamState::new(q.clone(), f);
    let lie = LieOptions { order_cap: sched.lie_order, tail_tol: crate::algebra::lie::DEFAULT_TAIL_TOL };
    let mut steps = Vec::new();
    let mut rounds = Vec::new();
    let mut done = false;
    let mut final_low = ptame_vfield_norm(&state.low_jet(), &DomainParams::kam(sched.sigma, sched.gamma, sched.p));
    for plan in plans {
        if done {
            break;
        }
        let dec = compatible_blocks(&state.q, &build_blocks(&lat, plan.delta_m)?, &lat);
        let report = check_melnikov_kam(&state.q, &dec, &lat, plan.kappa, plan.delta_m)?;
        if !report.passed {
            return Err(excluded(&report));
        }
        let mut taken = 0;
        let mut low_norm = ptame_vfield_norm(&state.low_jet(), &DomainParams::kam(plan.sigma_prev, plan.gamma_prev, sched.p));
        for j in 1..=plan.n {
            if low_norm < LOW_JET_FLOOR {
                done = true;
                break;
            }
            let ctx = StepContext {
                dec: &dec,
                delta_prime: plan.delta_m,
                kappa: plan.kappa,
                domain: DomainParams::kam(plan.sigma_j(j), plan.gamma_m, sched.p),
                lie,
                round: plan.m,
                step: j,
            };
            let diag = kam_inner_step(&mut state, q, &ctx).map_err(|e| match e {
                Error::SmallDivisor { .. } => Error::ParameterExcluded(e.to_string()),
                other => other,
            })?;
            if diag.conjugacy_error > CONJUGACY_TOL {
                return Err(Error::LieSeriesDiverged { tail: diag.conjugacy_error, tol: CONJUGACY_TOL, order: lie.order_cap });
            }
            if steps.is_empty() && !(diag.low_norm < diag.low_norm_before) {
                return Err(Error::NoContraction { before: diag.low_norm_before, after: diag.low_norm });
            }
            low_norm = diag.low_norm;
            steps.push(diag);
            taken += 1;
        }
        if low_norm < LOW_JET_FLOOR {
            done = true;
        }
        final_low = low_norm;
        rounds.push(RoundSummary {
            melnikov_worst_margin: report.worst_margin,
            melnikov_tested: report.tested,
            steps_taken: taken,
            low_norm,
            plan,
        });
    }
    Ok(KamResult {
        omega_inf: state.q.omega.clone(),
        omega_shift: state.q.tangential_shift(q),
        h_shift: matrix_shift(&state.q, q),
        q_inf: state.q,
        f_inf: state.f,
        energy: state.energy,
        generators: state.generators,
        steps,
        rounds,
        excluded: 0,
        final_low_norm: final_low,
    })
}

/// Largest coefficient of `{a∘Φ, b∘Φ} − {a,b}∘Φ` over `pairs` random real
/// pairs of weighted degree 2..=3, `Φ` the time-one map of `s`.
pub fn bracket_preservation_defect(s: &Polynomial, pairs: usize, seed: u64, lie: LieOptions) -> Result<f64> {
    let lat = s.lattice().clone();
    let cutoff = s.degree_cutoff();
    let mut r = rng(seed);
    let shape = MonomialShape { max_degree: 3, max_k: 2 };
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let draw = |r: &mut _| realify(&random_graded_polynomial(&lat, shape, 6, cutoff, r).0.filter(|m, _| m.weighted_degree() >= 2));
        let a = draw(&mut r);
        let b = draw(&mut r);
        let at = lie_transform(&a, s, cutoff, lie)?.result;
        let bt = lie_transform(&b, s, cutoff, lie)?.result;
        let lhs = poisson_bracket(&at, &bt, cutoff)?;
        let rhs = lie_transform(&poisson_bracket(&a, &b, cutoff)?, s, cutoff, lie)?.result;
        worst = worst.max(lhs.max_abs_diff(&rhs));
    }
    Ok(worst)
}

/// `N`, `κ̃`, `Δ̃` and the tail bound `δ^{M+1}` of the normal-form stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NfChoice {
    pub n: f64,
    pub kappa_t: f64,
    pub delta_t: f64,
    pub tail_bound: f64,
}

pub fn choose_nf_parameters(delta: f64, m: u32, p: f64, rho: f64, gamma_m: f64) -> Result<NfChoice> {
    if !(delta > 0.0 && delta < 1.0) || m == 0 || !(p > 1.0) {
        return Err(Error::InvalidConfig("need delta in (0,1), M >= 1, p > 1".into()));
    }
    let mf = m as f64;
    Ok(NfChoice {
        n: delta.powf(-(mf + 1.0) / (p - 1.0)),
        kappa_t: delta.powf(1.0 / (900.0 * mf)),
        delta_t: 800.0 * mf * (1.0 / delta).ln().powi(2) / gamma_m.min(rho),
        tail_bound: delta.powf(mf + 1.0),
    })
}

/// `k = 0`, equal `u`/`v` exponents on every low mode, and a high part
/// that is empty or a single `u_a v_b` with `|a| = |b|`.
pub fn is_nf_resonant(m: &Monomial, high: &[bool], lat: &Lattice) -> bool {
    if m.k.iter().any(|&k| k != 0) {
        return false;
    }
    let mut hu = Vec::new();
    let mut hv = Vec::new();
    for (s, e) in m.mu_iter() {
        if high[s] {
            hu.extend(std::iter::repeat_n(s, e as usize));
        } else if m.nu(s) != e {
            return false;
        }
    }
    for (s, e) in m.nu_iter() {
        if high[s] {
            hv.extend(std::iter::repeat_n(s, e as usize));
        } else if m.mu(s) != e {
            return false;
        }
    }
    match (hu.as_slice(), hv.as_slice()) {
        ([], []) => true,
        ([a], [b]) => norm2(&lat.normal()[*a]) == norm2(&lat.normal()[*b]),
        _ => false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NfStepDiagnostic {
    pub j0: u32,
    pub residual: f64,
    pub divisor_margin: f64,
    pub conjugacy_error: f64,
    pub generator_terms: usize,
    pub resonant_terms: usize,
}

#[derive(Clone, Debug)]
pub struct NormalFormResult {
    /// Resonant terms of weighted degree `3..=M+2`.
    pub z: Polynomial,
    /// Every other term with at most two high factors and `|k| ≤ Δ̃`.
    pub p: Polynomial,
    /// Terms with `|k| > Δ̃` and at most two high factors.
    pub r: Polynomial,
    /// Terms with at least three high factors.
    pub q: Polynomial,
    pub generators: Vec<NfGeneratorStep>,
    pub lambda_t: Vec<(usize, f64)>,
    pub steps: Vec<NfStepDiagnostic>,
    /// Transformed perturbation (`Z + P + R + Q`).
    pub transformed: Polynomial,
    pub melnikov: MelnikovReport,
    /// Largest non-resonant coefficient of weighted degree `≤ M+2` with at
    /// most two high factors and `|k| ≤ Δ̃`.
    pub max_nonresonant: f64,
    /// ℓ¹ mass of the terms above the cutoff produced by the last bracket
    /// series, which the truncation discards.
    pub unmodeled_tail: f64,
}

impl NormalFormResult {
    /// Layer `deg` of `P`.
    pub fn p_layer(&self, deg: u32) -> Polynomial {
        self.p.layer(deg)
    }
}

/// Removes, order by order for `j₀ = 2..=M+1`, every non-resonant term of
/// weighted degree `j₀+1` with at most two high factors and `|k| ≤ Δ̃`;
/// brackets are truncated at weighted degree `M+3`.
pub fn partial_normal_form(q: &QuadraticForm, f: &Polynomial, th: &NfThresholds, dec: &BlockDecomposition) -> Result<NormalFormResult> {
    let lat = f.lattice().clone();
    let cutoff = th.m + 3;
    let high = high_modes(&lat, th.n);
    let dec = compatible_blocks(q, dec, &lat);
    let lambda_t: Vec<(usize, f64)> =
        (0..lat.n_normal()).filter(|&a| !high[a]).map(|a| (a, q.big_omega[a] + q.h.get(a, a).re)).collect();
    let melnikov = check_melnikov_nf(q, &dec, &lat, &lambda_t, th)?;
    if !melnikov.passed {
        let v = melnikov.violations.iter().min_by(|a, b| a.value.abs().total_cmp(&b.value.abs())).unwrap();
        return Err(Error::SmallDivisor {
            k: v.k.clone(),
            value: v.value.abs(),
            threshold: v.threshold,
            context: format!("{:?} l={:?} blocks {:?}", v.kind, v.l_tilde, v.blocks),
        });
    }
    let h = q.to_polynomial(&lat, cutoff);
    let mut ham = h.plus(&f.with_cutoff(cutoff));
    let lie = LieOptions { order_cap: cutoff as usize + 2, tail_tol: crate::algebra::lie::DEFAULT_TAIL_TOL };
    let mut generators = Vec::new();
    let mut steps = Vec::new();
    let mut tail = 0.0;
    for j0 in 2..=th.m + 1 {
        let p_top = ham
            .minus(&h)
            .layer(j0 + 1)
            .filter(|m, _| m.count_on(&high) <= 2 && m.k_norm() as f64 <= th.delta_t);
        let step = solve_nf_homological(q, &p_top, &dec, th)?;
        let moved = lie_transform(&ham, &step.f, cutoff, lie)?.result;
        let check = lie_transform(&ham, &step.f, cutoff, LieOptions { order_cap: 2 * lie.order_cap + 4, ..lie })?.result;
        if j0 == th.m + 1 {
            tail = poisson_bracket(&ham, &step.f, cutoff + 1)?.layer(cutoff + 1).l1();
        }
        steps.push(NfStepDiagnostic {
            j0,
            residual: step.residual,
            divisor_margin: step.divisor_margin,
            conjugacy_error: moved.max_abs_diff(&check),
            generator_terms: step.f.len(),
            resonant_terms: step.zhat.len(),
        });
        ham = moved;
        generators.push(step);
    }
    let transformed = ham.minus(&h);
    let top = th.m + 2;
    let mut z = Polynomial::zero(lat.clone(), cutoff);
    let mut p = z.clone();
    let mut r = z.clone();
    let mut qq = z.clone();
    let mut max_nonres = 0.0f64;
    for (m, &c) in transformed.iter() {
        let deg = m.weighted_degree();
        if m.count_on(&high) >= 3 {
            qq.add_term(m.clone(), c);
        } else if m.k_norm() as f64 > th.delta_t {
            r.add_term(m.clone(), c);
        } else if is_nf_resonant(m, &high, &lat) && (3..=top).contains(&deg) {
            z.add_term(m.clone(), c);
        } else {
            if deg <= top && !is_nf_resonant(m, &high, &lat) {
                max_nonres = max_nonres.max(c.norm());
            }
            p.add_term(m.clone(), c);
        }
    }
    Ok(NormalFormResult {
        z,
        p,
        r,
        q: qq,
        generators,
        lambda_t,
        steps,
        transformed,
        melnikov,
        max_nonresonant: max_nonres,
        unmodeled_tail: tail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeConfig;

    fn toy() -> Arc<Lattice> {
        Arc::new(Lattice::new(LatticeConfig { d: 1, tangential: vec![vec![1]], cutoff: 2 }).unwrap())
    }

    #[test]
    fn outer_smallness_recursion() {
        let s = ScheduleParams::new(1e-3);
        let e1 = s.eps_outer(1);
        assert!((e1 - (-(1e3f64.ln()).powi(2) / 20.0).exp()).abs() < 1e-15);
        assert!((e1 - 0.0920).abs() < 1e-3);
        // the recursion only decreases below e^{-20}
        assert!(s.eps_outer(2) > e1);
        let t = ScheduleParams::new((-21f64).exp());
        assert!(t.eps_outer(1) < t.epsilon && t.eps_outer(2) < t.eps_outer(1));
    }

    #[test]
    fn ladders_stay_above_half() {
        let s = ScheduleParams::new(1e-3);
        for m in 0..50 {
            assert!(s.rho_m(m) >= s.rho / 2.0 && s.sigma_m(m) >= s.sigma / 2.0);
            assert!(s.rho_m(m + 1) < s.rho_m(m));
        }
    }

    #[test]
    fn plan_reports_literal_and_capped_values() {
        let s = ScheduleParams::new(1e-3);
        let plan = s.plan(&toy()).unwrap();
        assert_eq!(plan.len(), 3);
        assert!(plan[0].delta_m_literal > 1e3);
        assert_eq!(plan[0].delta_m, 10.0);
        assert_eq!(plan[0].n_literal, 6);
        assert!((plan[0].kappa_literal - 1e-3f64.powf(1.0 / 400.0)).abs() < 1e-15);
        assert_eq!(plan[0].sigma_j(0), s.sigma);
        assert!((plan[0].sigma_j(plan[0].n) - s.sigma_m(1)).abs() < 1e-15);
    }

    #[test]
    fn zero_perturbation_is_a_fixed_point() {
        let lat = toy();
        let q = QuadraticForm::new(vec![1.37], vec![4.23, 1.11, 0.47, 4.91]);
        let f = Polynomial::zero(lat, 4);
        let res = kam_outer_iterate(&q, &f, &ScheduleParams::new(1e-3)).unwrap();
        assert_eq!(res.omega_inf, q.omega);
        assert!(res.q_inf.h.is_empty());
        assert!(res.f_inf.is_empty() && res.steps.is_empty());
    }

    #[test]
    fn nf_parameters_closed_forms() {
        let c = choose_nf_parameters(0.1, 2, 4.0, 0.5, 0.5).unwrap();
        assert!((c.n - 10.0).abs() < 1e-12);
        assert!((c.kappa_t - 0.998721).abs() < 1e-6);
        assert!((c.n.powf(3.0) * c.tail_bound - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resonance_predicate() {
        let lat = toy();
        // normal sites -2, -1, 0, 2
        let high = vec![true, false, false, true];
        let res = Monomial::from_parts(&[0], &[1], &[(1, 1), (0, 1)], &[(1, 1), (3, 1)]);
        assert!(is_nf_resonant(&res, &high, &lat));
        let off = Monomial::from_parts(&[0], &[0], &[(1, 1)], &[(2, 1)]);
        assert!(!is_nf_resonant(&off, &high, &lat));
        let k = Monomial::from_parts(&[1], &[0], &[(0, 1)], &[(0, 1)]);
        assert!(!is_nf_resonant(&k, &high, &lat));
    }
}
