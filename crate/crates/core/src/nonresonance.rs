//! Frequencies as functions of the parameter `w`, block spectra, small
//! divisor checks for the KAM and normal-form homological equations, and
//! Monte Carlo estimates of the excluded parameter measure.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{norm2, BlockDecomposition, Lattice, Site};
use crate::norms::{lipschitz_seminorm, LatticeMatrix};
use crate::quadratic::{BlockEigen, QuadraticForm};
use crate::random::rng;

/// Values `w_a = V̂(a)` on every retained site.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterPoint {
    pub w: BTreeMap<Site, f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingBox {
    pub lo: f64,
    pub hi: f64,
}

impl Default for SamplingBox {
    fn default() -> Self {
        SamplingBox { lo: 0.0, hi: 1.0 }
    }
}

impl ParameterPoint {
    pub fn constant(lat: &Lattice, value: f64) -> Self {
        ParameterPoint { w: lat.all_sites().into_iter().map(|a| (a, value)).collect() }
    }

    /// Uniform draw from the box, sites in the order of `Lattice::all_sites`.
    pub fn sample(lat: &Lattice, bx: SamplingBox, r: &mut impl Rng) -> Self {
        ParameterPoint {
            w: lat.all_sites().into_iter().map(|a| (a, r.random_range(bx.lo..=bx.hi))).collect(),
        }
    }

    pub fn get(&self, a: &[i32]) -> Result<f64> {
        self.w.get(a).copied().ok_or_else(|| Error::MissingParameter(a.to_vec()))
    }

    pub fn set(&mut self, a: &[i32], value: f64) {
        self.w.insert(a.to_vec(), value);
    }

    pub fn within(&self, bx: SamplingBox) -> bool {
        self.w.values().all(|&x| x >= bx.lo && x <= bx.hi)
    }
}

/// `ω_a = |a|² + w_a` on the tangential set, `Ω_a = |a|² + w_a` on the
/// normal set, `H = 0`.
pub fn frequencies(lat: &Lattice, w: &ParameterPoint) -> Result<QuadraticForm> {
    let omega = lat
        .tangential()
        .iter()
        .map(|a| Ok(norm2(a) as f64 + w.get(a)?))
        .collect::<Result<Vec<f64>>>()?;
    let big_omega = lat
        .normal()
        .iter()
        .map(|a| Ok(norm2(a) as f64 + w.get(a)?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(QuadraticForm::new(omega, big_omega))
}

/// Ascending eigenvalues of each block of `Ω+H`.
pub fn block_spectra(q: &QuadraticForm, dec: &BlockDecomposition) -> Result<Vec<Vec<f64>>> {
    Ok(BlockEigen::new(q, dec)?.values)
}

/// All `k ∈ Z^n` with `|k|_1 ≤ max`, in lexicographic order.
pub fn fourier_indices(n: usize, max: u32) -> Vec<Vec<i32>> {
    fn rec(n: usize, left: i32, prefix: &mut Vec<i32>, out: &mut Vec<Vec<i32>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for x in -left..=left {
            prefix.push(x);
            rec(n, left - x.abs(), prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, max as i32, &mut Vec::new(), &mut out);
    out
}

pub fn dot(k: &[i32], omega: &[f64]) -> f64 {
    k.iter().zip(omega).map(|(&a, b)| a as f64 * b).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DivisorKind {
    /// `⟨k,ω⟩`
    Diophantine,
    /// `⟨k,ω⟩ + α`
    FirstMelnikov,
    /// `⟨k,ω⟩ + α + β`
    SecondSameSign,
    /// `⟨k,ω⟩ + α − β`
    SecondOppositeSign,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: DivisorKind,
    pub k: Vec<i32>,
    /// Sparse `l̃` over low modes (normal-site index, entry); empty for the
    /// KAM conditions.
    pub l_tilde: Vec<(usize, i32)>,
    pub blocks: Vec<usize>,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MelnikovReport {
    pub passed: bool,
    /// Minimum of `|divisor| − threshold` over every tested combination.
    pub worst_margin: f64,
    pub violations: Vec<Violation>,
    pub tested: usize,
    /// Which threshold family was enforced.
    pub enforced: String,
    /// `log10` of the literal normal-form threshold for `|l̃| = 0, 1, …`.
    pub literal_log10_thresholds: Vec<f64>,
}

struct Tally {
    worst: f64,
    tested: usize,
    violations: Vec<Violation>,
}

impl Tally {
    fn new() -> Self {
        Tally { worst: f64::INFINITY, tested: 0, violations: Vec::new() }
    }

    fn record(&mut self, value: f64, threshold: f64, make: impl FnOnce() -> Violation) {
        self.tested += 1;
        let margin = value.abs() - threshold;
        self.worst = self.worst.min(margin);
        if margin < 0.0 {
            self.violations.push(make());
        }
    }

    fn finish(self, enforced: &str, literal: Vec<f64>) -> MelnikovReport {
        MelnikovReport {
            passed: self.violations.is_empty(),
            worst_margin: if self.tested == 0 { f64::INFINITY } else { self.worst },
            violations: self.violations,
            tested: self.tested,
            enforced: enforced.into(),
            literal_log10_thresholds: literal,
        }
    }
}

/// The four divisor families of the KAM step with threshold `κ` and
/// `|k| ≤ Δ′`. The opposite-sign family is restricted to block pairs at
/// distance `≤ Δ′ + 2d_Δ`; at `k = 0` pairs inside one block or between
/// blocks of equal norm are exempt (they feed the resonant correction).
pub fn check_melnikov_kam(
    q: &QuadraticForm,
    dec: &BlockDecomposition,
    lat: &Lattice,
    kappa: f64,
    delta_prime: f64,
) -> Result<MelnikovReport> {
    let spectra = block_spectra(q, dec)?;
    let nb = spectra.len();
    let ks = fourier_indices(q.omega.len(), delta_prime.floor() as u32);
    let reach = delta_prime + 2.0 * dec.d_delta;
    let mut near = vec![vec![false; nb]; nb];
    let norms: Vec<i64> = (0..nb).map(|p| dec.block_norm2(p, lat)).collect();
    for p in 0..nb {
        for q2 in 0..nb {
            near[p][q2] = dec.block_distance(p, q2, lat) <= reach * (1.0 + 1e-12);
        }
    }
    let mut t = Tally::new();
    for k in &ks {
        let x = dot(k, &q.omega);
        let zero = k.iter().all(|&c| c == 0);
        if !zero {
            t.record(x, kappa, || Violation {
                kind: DivisorKind::Diophantine,
                k: k.clone(),
                l_tilde: vec![],
                blocks: vec![],
                value: x,
                threshold: kappa,
            });
        }
        for (p, sp) in spectra.iter().enumerate() {
            for &a in sp {
                t.record(x + a, kappa, || Violation {
                    kind: DivisorKind::FirstMelnikov,
                    k: k.clone(),
                    l_tilde: vec![],
                    blocks: vec![p],
                    value: x + a,
                    threshold: kappa,
                });
            }
        }
        for p in 0..nb {
            for q2 in p..nb {
                for &a in &spectra[p] {
                    for &b in &spectra[q2] {
                        t.record(x + a + b, kappa, || Violation {
                            kind: DivisorKind::SecondSameSign,
                            k: k.clone(),
                            l_tilde: vec![],
                            blocks: vec![p, q2],
                            value: x + a + b,
                            threshold: kappa,
                        });
                    }
                }
            }
        }
        for p in 0..nb {
            for q2 in 0..nb {
                if !near[p][q2] || (zero && (p == q2 || norms[p] == norms[q2])) {
                    continue;
                }
                for &a in &spectra[p] {
                    for &b in &spectra[q2] {
                        t.record(x + a - b, kappa, || Violation {
                            kind: DivisorKind::SecondOppositeSign,
                            k: k.clone(),
                            l_tilde: vec![],
                            blocks: vec![p, q2],
                            value: x + a - b,
                            threshold: kappa,
                        });
                    }
                }
            }
        }
    }
    Ok(t.finish("kappa", vec![]))
}

/// Thresholds `κ̃ / (4^M N^{e(|l̃|)})` of the normal-form conditions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NfThresholds {
    pub kappa_t: f64,
    pub delta_t: f64,
    pub m: u32,
    pub n: f64,
    pub d: usize,
    /// Enforced exponent `c₀ (|l̃|+4)²`.
    pub c0: f64,
}

impl NfThresholds {
    pub fn surrogate(&self, l1: u32) -> f64 {
        let e = self.c0 * ((l1 + 4) as f64).powi(2);
        self.kappa_t / (4f64.powi(self.m as i32) * self.n.powf(e))
    }

    /// `log10` of the literal threshold with exponent `(4d)^{4d}(|l̃|+4)²`.
    pub fn literal_log10(&self, l1: u32) -> f64 {
        let d4 = 4.0 * self.d as f64;
        let e = d4.powf(d4) * ((l1 + 4) as f64).powi(2);
        self.kappa_t.log10() - self.m as f64 * 4f64.log10() - e * self.n.log10()
    }
}

/// Every `l̃ ∈ Z^n` with `|l̃|_1 ≤ max`, as sparse `(index, entry)` lists.
pub fn integer_vectors(n: usize, max: u32) -> Vec<Vec<(usize, i32)>> {
    fn rec(n: usize, start: usize, left: u32, cur: &mut Vec<(usize, i32)>, out: &mut Vec<Vec<(usize, i32)>>) {
        out.push(cur.clone());
        for i in start..n {
            for mag in 1..=left as i32 {
                for s in [mag, -mag] {
                    cur.push((i, s));
                    rec(n, i + 1, left - mag as u32, cur, out);
                    cur.pop();
                }
            }
        }
    }
    let mut out = Vec::new();
    rec(n, 0, max, &mut Vec::new(), &mut out);
    out
}

/// Values within `thr` of `target` in a sorted list, with their positions.
fn near_values(sorted: &[(f64, usize, usize)], target: f64, thr: f64) -> impl Iterator<Item = &(f64, usize, usize)> {
    let lo = sorted.partition_point(|e| e.0 < target - thr);
    sorted[lo..].iter().take_while(move |e| e.0 <= target + thr)
}

/// Nearest distance from `target` to a sorted list.
fn nearest(sorted: &[(f64, usize, usize)], target: f64) -> f64 {
    let i = sorted.partition_point(|e| e.0 < target);
    let mut best = f64::INFINITY;
    if i < sorted.len() {
        best = best.min((sorted[i].0 - target).abs());
    }
    if i > 0 {
        best = best.min((sorted[i - 1].0 - target).abs());
    }
    best
}

/// Normal-form conditions: `|⟨k,ω⟩ + ⟨l̃,λ̃⟩ (+ α (± β))|` against the
/// `|l̃|`-dependent threshold for `|k| ≤ Δ̃`, `|l̃| ≤ M+2`, `|k|+|l̃| ≠ 0`.
/// `α, β` range over spectra of blocks made of high modes (`|a| > N`), the
/// only blocks entering the normal-form homological equations.
pub fn check_melnikov_nf(
    q: &QuadraticForm,
    dec: &BlockDecomposition,
    lat: &Lattice,
    lambda_t: &[(usize, f64)],
    th: &NfThresholds,
) -> Result<MelnikovReport> {
    let spectra = block_spectra(q, dec)?;
    let high_block: Vec<bool> = dec
        .blocks
        .iter()
        .map(|b| (norm2(&lat.normal()[b[0]]) as f64).sqrt() > th.n)
        .collect();
    let reach = th.delta_t + 2.0 * dec.d_delta;
    let mut singles = Vec::new();
    let mut sums = Vec::new();
    let mut diffs = Vec::new();
    for (p, sp) in spectra.iter().enumerate() {
        if !high_block[p] {
            continue;
        }
        for &a in sp {
            singles.push((a, p, p));
        }
        for (q2, sq) in spectra.iter().enumerate() {
            if !high_block[q2] {
                continue;
            }
            for &a in sp {
                for &b in sq {
                    if p <= q2 {
                        sums.push((a + b, p, q2));
                    }
                    if dec.block_distance(p, q2, lat) <= reach * (1.0 + 1e-12) {
                        diffs.push((a - b, p, q2));
                    }
                }
            }
        }
    }
    for v in [&mut singles, &mut sums, &mut diffs] {
        v.sort_by(|x, y| x.0.total_cmp(&y.0));
    }
    let ks = fourier_indices(q.omega.len(), th.delta_t.floor() as u32);
    let ls = integer_vectors(lambda_t.len(), th.m + 2);
    let mut t = Tally::new();
    for l in &ls {
        let l1: u32 = l.iter().map(|e| e.1.unsigned_abs()).sum();
        let s: f64 = l.iter().map(|&(i, c)| c as f64 * lambda_t[i].1).sum();
        let thr = th.surrogate(l1);
        let l_sites: Vec<(usize, i32)> = l.iter().map(|&(i, c)| (lambda_t[i].0, c)).collect();
        for k in &ks {
            let k1: i32 = k.iter().map(|x| x.abs()).sum();
            if k1 == 0 && l1 == 0 {
                continue;
            }
            let x = dot(k, &q.omega) + s;
            let viol = |kind, blocks: Vec<usize>, value: f64| Violation {
                kind,
                k: k.clone(),
                l_tilde: l_sites.clone(),
                blocks,
                value,
                threshold: thr,
            };
            t.record(x, thr, || viol(DivisorKind::Diophantine, vec![], x));
            for (list, kind) in [
                (&singles, DivisorKind::FirstMelnikov),
                (&sums, DivisorKind::SecondSameSign),
                (&diffs, DivisorKind::SecondOppositeSign),
            ] {
                if list.is_empty() {
                    continue;
                }
                // |x + v| is small exactly when v is near −x
                let gap = nearest(list, -x);
                t.tested += list.len();
                t.worst = t.worst.min(gap - thr);
                for e in near_values(list, -x, thr) {
                    let blocks = if kind == DivisorKind::FirstMelnikov { vec![e.1] } else { vec![e.1, e.2] };
                    t.violations.push(viol(kind, blocks, x + e.0));
                }
            }
        }
    }
    let literal = (0..=th.m + 2).map(|l| th.literal_log10(l)).collect();
    Ok(t.finish("surrogate", literal))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureEstimate {
    pub kappa: f64,
    pub delta_prime: f64,
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_samples: usize,
    pub seed: u64,
}

/// 95% Wilson score interval.
pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let nf = n as f64;
    let p = hits as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z * ((p * (1.0 - p) + z * z / (4.0 * nf)) / nf).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Parameter point number `i` of a seeded battery; independent of how the
/// battery is scheduled.
pub fn battery_point(lat: &Lattice, bx: SamplingBox, seed: u64, i: usize) -> ParameterPoint {
    let mut r = rng(seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    ParameterPoint::sample(lat, bx, &mut r)
}

/// Per-sample exclusion flags of the KAM conditions over a seeded battery.
pub fn exclusion_flags(
    lat: &Lattice,
    dec: &BlockDecomposition,
    kappa: f64,
    delta_prime: f64,
    n_samples: usize,
    bx: SamplingBox,
    seed: u64,
) -> Result<Vec<bool>> {
    (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let w = battery_point(lat, bx, seed, i);
            let q = frequencies(lat, &w)?;
            Ok(!check_melnikov_kam(&q, dec, lat, kappa, delta_prime)?.passed)
        })
        .collect()
}

pub fn estimate_excluded_measure(
    lat: &Lattice,
    dec: &BlockDecomposition,
    kappa: f64,
    delta_prime: f64,
    n_samples: usize,
    bx: SamplingBox,
    seed: u64,
) -> Result<MeasureEstimate> {
    if n_samples < 100 {
        return Err(Error::InvalidConfig("measure estimates need at least 100 samples".into()));
    }
    let flags = exclusion_flags(lat, dec, kappa, delta_prime, n_samples, bx, seed)?;
    let hits = flags.iter().filter(|&&b| b).count();
    let (ci_low, ci_high) = wilson_interval(hits, n_samples);
    Ok(MeasureEstimate {
        kappa,
        delta_prime,
        fraction: hits as f64 / n_samples as f64,
        ci_low,
        ci_high,
        n_samples,
        seed,
    })
}

/// Least-squares slope of `log fraction` against `log κ` over points with a
/// positive fraction.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.1 > 0.0 && p.0 > 0.0).map(|p| (p.0.ln(), p.1.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub lambda: f64,
}

impl Default for AssumptionConstants {
    fn default() -> Self {
        AssumptionConstants { c1: 1.0, c2: 1.0, c3: 0.5, c4: 1.0, c5: 1.0, lambda: 3.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: Option<bool>,
    /// Worst observed value of the checked quantity.
    pub observed: f64,
    pub bound: f64,
    pub note: String,
}

/// Evaluates the standing hypotheses on `Ω`, `H` and their `w`-derivatives.
/// Results are reported; none aborts a run.
pub fn assumption_battery(
    lat: &Lattice,
    w: &ParameterPoint,
    q: &QuadraticForm,
    c: &AssumptionConstants,
) -> Result<Vec<AssumptionCheck>> {
    let mut out = Vec::new();
    let sites = lat.normal();
    let n = sites.len();
    // derivative identities by forward differences
    let base = frequencies(lat, w)?;
    let mut worst_dev: f64 = 0.0;
    for a in lat.all_sites() {
        let mut wp = w.clone();
        wp.set(&a, w.get(&a)? + 1e-6);
        let qp = frequencies(lat, &wp)?;
        for (i, b) in lat.tangential().iter().enumerate() {
            let dv = (qp.omega[i] - base.omega[i]) / 1e-6;
            worst_dev = worst_dev.max((dv - if *b == a { 1.0 } else { 0.0 }).abs());
        }
        for (i, b) in sites.iter().enumerate() {
            let dv = (qp.big_omega[i] - base.big_omega[i]) / 1e-6;
            worst_dev = worst_dev.max((dv - if *b == a { 1.0 } else { 0.0 }).abs());
        }
    }
    out.push(AssumptionCheck {
        name: "frequency_derivatives".into(),
        passed: Some(worst_dev < 1e-6),
        observed: worst_dev,
        bound: 1e-6,
        note: "d omega_b / d w_a = delta_ab by finite differences".into(),
    });
    let mut as3: f64 = 0.0;
    let mut as3_ok = true;
    for (i, a) in sites.iter().enumerate() {
        let na = (norm2(a) as f64).sqrt();
        let dev = (q.big_omega[i] - norm2(a) as f64).abs();
        as3 = as3.max(dev);
        as3_ok &= dev <= c.c1 * (-c.c2 * na).exp();
    }
    out.push(AssumptionCheck {
        name: "omega_near_square".into(),
        passed: Some(as3_ok),
        observed: as3,
        bound: c.c1,
        note: "|Omega_a - |a|^2| <= c1 exp(-c2 |a|)".into(),
    });
    let min_abs = q.big_omega.iter().map(|x| x.abs()).fold(f64::INFINITY, f64::min);
    out.push(AssumptionCheck {
        name: "omega_lower_bound".into(),
        passed: Some(min_abs >= c.c3),
        observed: min_abs,
        bound: c.c3,
        note: "|Omega_a| >= c3".into(),
    });
    let mut min_sum = f64::INFINITY;
    let mut min_diff = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            min_sum = min_sum.min((q.big_omega[i] + q.big_omega[j]).abs());
            if norm2(&sites[i]) != norm2(&sites[j]) {
                min_diff = min_diff.min((q.big_omega[i] - q.big_omega[j]).abs());
            }
        }
    }
    out.push(AssumptionCheck {
        name: "omega_sum_gap".into(),
        passed: Some(min_sum >= c.c3),
        observed: min_sum,
        bound: c.c3,
        note: "|Omega_a + Omega_b| >= c3".into(),
    });
    out.push(AssumptionCheck {
        name: "omega_difference_gap".into(),
        passed: Some(min_diff >= c.c3),
        observed: min_diff,
        bound: c.c3,
        note: "|Omega_a - Omega_b| >= c3 for |a| != |b|".into(),
    });
    let hm = LatticeMatrix::from_normal_matrix(&q.h);
    let h_norm = crate::norms::matrix_gamma_norm(&hm, 0.0, lat)?;
    out.push(AssumptionCheck {
        name: "correction_small".into(),
        passed: Some(h_norm <= c.c3 / 4.0),
        observed: h_norm,
        bound: c.c3 / 4.0,
        note: "|H| <= c3/4".into(),
    });
    out.push(AssumptionCheck {
        name: "correction_derivative".into(),
        passed: Some(true),
        observed: 0.0,
        bound: c.c4,
        note: "H does not depend on w at this stage".into(),
    });
    let lip = match lipschitz_seminorm(&hm, c.lambda, 0.0, 1, lat) {
        Ok(rep) => AssumptionCheck {
            name: "correction_toplitz_lipschitz".into(),
            passed: Some(rep.value <= c.c5),
            observed: rep.value,
            bound: c.c5,
            note: format!("{} probes", rep.probed),
        },
        Err(Error::Inconclusive(msg)) => AssumptionCheck {
            name: "correction_toplitz_lipschitz".into(),
            passed: None,
            observed: f64::NAN,
            bound: c.c5,
            note: msg,
        },
        Err(e) => return Err(e),
    };
    out.push(lip);
    Ok(out)
}
