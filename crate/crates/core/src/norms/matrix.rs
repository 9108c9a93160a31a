//! Matrices over `L×L` with `2×2` blocks acting on `(ξ_a, η_a)`: the γ-norm,
//! band truncation and the Töplitz-Lipschitz seminorm surrogate.

use std::collections::BTreeMap;

use nalgebra::Matrix2;
use num_complex::Complex64 as C64;

use crate::algebra::{var_site, var_slot, Polynomial, SLOT_U};
use crate::error::{Error, Result};
use crate::lattice::{box_sites, norm2, Lattice, Site};
use crate::quadratic::NormalMatrix;

pub type Block2 = Matrix2<C64>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatticeMatrix {
    pub entries: BTreeMap<(usize, usize), Block2>,
}

fn zero_block() -> Block2 {
    Block2::zeros()
}

/// `(∂ξ, ∂η)` of `u = (ξ+iη)/√2` or `v = (ξ−iη)/√2`.
fn slot_gradient(slot: u32) -> [C64; 2] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    if slot == SLOT_U {
        [C64::new(h, 0.0), C64::new(0.0, h)]
    } else {
        [C64::new(h, 0.0), C64::new(0.0, -h)]
    }
}

fn outer(x: [C64; 2], y: [C64; 2]) -> Block2 {
    Block2::new(x[0] * y[0], x[0] * y[1], x[1] * y[0], x[1] * y[1])
}

impl LatticeMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, a: usize, b: usize) -> Block2 {
        self.entries.get(&(a, b)).copied().unwrap_or_else(zero_block)
    }

    pub fn add(&mut self, a: usize, b: usize, m: Block2) {
        let e = self.entries.entry((a, b)).or_insert_with(zero_block);
        *e += m;
        if e.iter().all(|c| c.norm() == 0.0) {
            self.entries.remove(&(a, b));
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Hessian in `ζ = (ξ, η)` of the `α = 0`, `z`-quadratic terms with
    /// Fourier index `k`.
    pub fn from_quadratic(f: &Polynomial, k: &[i32]) -> LatticeMatrix {
        let mut out = LatticeMatrix::new();
        for (m, &c) in f.iter() {
            if m.z_degree() != 2 || m.r_degree() != 0 || m.k.as_slice() != k {
                continue;
            }
            let vars: Vec<u32> = m.z.iter().flat_map(|&(x, e)| std::iter::repeat_n(x, e as usize)).collect();
            let (x, y) = (vars[0], vars[1]);
            let (gx, gy) = (slot_gradient(var_slot(x)), slot_gradient(var_slot(y)));
            let (a, b) = (var_site(x), var_site(y));
            out.add(a, b, outer(gx, gy) * c);
            out.add(b, a, outer(gy, gx) * c);
        }
        out
    }

    /// Hessian of `Σ H_ab u_a v_b`.
    pub fn from_normal_matrix(h: &NormalMatrix) -> LatticeMatrix {
        let (gu, gv) = (slot_gradient(SLOT_U), slot_gradient(1 - SLOT_U));
        let mut out = LatticeMatrix::new();
        for (&(a, b), &c) in h.entries() {
            out.add(a, b, outer(gu, gv) * c);
            out.add(b, a, outer(gv, gu) * c);
        }
        out
    }

    fn map(&self, f: impl Fn(&Block2) -> Block2) -> LatticeMatrix {
        let mut out = LatticeMatrix::new();
        for (&(a, b), m) in &self.entries {
            out.add(a, b, f(m));
        }
        out
    }

    /// Entrywise `πA`, the part commuting with the complex structure.
    pub fn pi_part(&self) -> LatticeMatrix {
        self.map(pi_block)
    }

    /// Entrywise `(1−π)A`.
    pub fn anti_part(&self) -> LatticeMatrix {
        self.map(|m| m - pi_block(m))
    }

    pub fn plus(&self, other: &LatticeMatrix) -> LatticeMatrix {
        let mut out = self.clone();
        for (&(a, b), m) in &other.entries {
            out.add(a, b, *m);
        }
        out
    }

    pub fn scaled(&self, s: C64) -> LatticeMatrix {
        self.map(|m| m * s)
    }
}

pub fn pi_block(m: &Block2) -> Block2 {
    let tr = (m[(0, 0)] + m[(1, 1)]) * 0.5;
    let off = (m[(0, 1)] - m[(1, 0)]) * 0.5;
    Block2::new(tr, off, -off, tr)
}

/// Operator norm of the entrywise modulus `[A]`.
pub fn modulus_norm(m: &Block2) -> f64 {
    let (a, b, c, d) = (m[(0, 0)].norm(), m[(0, 1)].norm(), m[(1, 0)].norm(), m[(1, 1)].norm());
    let s = a * a + b * b + c * c + d * d;
    let det = a * d - b * c;
    ((s + (s * s - 4.0 * det * det).max(0.0).sqrt()) / 2.0).sqrt()
}

fn site_sum_norm(a: &[i32], b: &[i32], sign: i32) -> f64 {
    let s: Vec<i32> = a.iter().zip(b).map(|(x, y)| x + sign * y).collect();
    (norm2(&s) as f64).sqrt()
}

/// `|a−b|` for the π sector, `|a+b|` for the complementary one.
fn sector_distance(lat: &Lattice, a: usize, b: usize, pi_sector: bool) -> f64 {
    let (sa, sb) = (&lat.normal()[a], &lat.normal()[b]);
    site_sum_norm(sa, sb, if pi_sector { -1 } else { 1 })
}

/// `|A|_γ = max(|E⁺_γ πA|, |E⁻_γ (1−π)A|)`, with `E^±_γ` weighting the
/// modulus of entry `(a,b)` by `e^{γ|a∓b|}`.
pub fn matrix_gamma_norm(m: &LatticeMatrix, gamma: f64, lat: &Lattice) -> Result<f64> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::InvalidConfig(format!("gamma must be nonnegative, got {gamma}")));
    }
    let mut best: f64 = 0.0;
    for (&(a, b), blk) in &m.entries {
        let p = pi_block(blk);
        let q = blk - p;
        best = best.max(modulus_norm(&p) * (gamma * sector_distance(lat, a, b, true)).exp());
        best = best.max(modulus_norm(&q) * (gamma * sector_distance(lat, a, b, false)).exp());
    }
    Ok(best)
}

/// `T_Δ A = T⁺_Δ πA + T⁻_Δ (1−π)A`: π part kept where `|a−b| ≤ Δ`, the
/// complement where `|a+b| ≤ Δ`.
pub fn band_truncate(m: &LatticeMatrix, delta: f64, lat: &Lattice) -> Result<LatticeMatrix> {
    if delta.is_nan() || delta < 0.0 {
        return Err(Error::NegativeDelta(delta));
    }
    let tol = delta * (1.0 + 1e-12);
    let mut out = LatticeMatrix::new();
    for (&(a, b), blk) in &m.entries {
        let p = pi_block(blk);
        if sector_distance(lat, a, b, true) <= tol {
            out.add(a, b, p);
        }
        if sector_distance(lat, a, b, false) <= tol {
            out.add(a, b, blk - p);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LipschitzReport {
    /// `max(Lip⁺ πA, Lip⁻ (1−π)A) + |A|_γ`.
    pub value: f64,
    pub lip_plus: f64,
    pub lip_minus: f64,
    pub gamma_norm: f64,
    /// Number of `(direction, a, b)` triples that were evaluated.
    pub probed: usize,
    pub worst_direction: Option<Site>,
}

fn euclid(a: &[i32]) -> f64 {
    (norm2(a) as f64).sqrt()
}

/// Membership of `(a, b)` in `D⁺_Λ(c)`, deciding the existential over
/// `t ∈ {0, …, probe_shift}`.
pub fn in_lipschitz_domain(a: &[i32], b: &[i32], c: &[i32], lambda: f64, probe_shift: i32) -> bool {
    let nc = euclid(c);
    let (na, nb) = (euclid(a), euclid(b));
    if na / nc < 2.0 * lambda * lambda || nb / nc < 2.0 * lambda * lambda {
        return false;
    }
    (0..=probe_shift).any(|t| {
        let a0: Vec<i32> = a.iter().zip(c).map(|(x, y)| x - t * y).collect();
        let b0: Vec<i32> = b.iter().zip(c).map(|(x, y)| x - t * y).collect();
        na >= lambda * (euclid(&a0) + nc) * nc && nb >= lambda * (euclid(&b0) + nc) * nc
    })
}

/// Finite-truncation surrogate of `⟨A⟩_{Λ,γ}`. The limit `A(±,c)` at
/// `(a,b)` is read off at `(a+Tc, b±Tc)` with `T = probe_shift`; pairs whose
/// shifted entry leaves the retained lattice are skipped. Directions are
/// all `c ≠ 0` with `|c|_∞ ≤ 2`.
pub fn lipschitz_seminorm(
    m: &LatticeMatrix,
    lambda: f64,
    gamma: f64,
    probe_shift: i32,
    lat: &Lattice,
) -> Result<LipschitzReport> {
    let gamma_norm = matrix_gamma_norm(m, gamma, lat)?;
    let pi = m.pi_part();
    let anti = m.anti_part();
    let n = lat.n_normal();
    let sites = lat.normal();
    let mut lip = [0.0f64; 2];
    let mut worst = (0.0f64, None);
    let mut probed = 0;
    for c in box_sites(lat.d(), 2) {
        if c.iter().all(|&x| x == 0) {
            continue;
        }
        let nc = euclid(&c);
        for (sector, part) in [(0usize, &pi), (1, &anti)] {
            let sign = if sector == 0 { 1 } else { -1 };
            for a in 0..n {
                let sa = &sites[a];
                let shifted_a: Vec<i32> = sa.iter().zip(&c).map(|(x, y)| x + probe_shift * y).collect();
                let Some(ia) = lat.normal_index(&shifted_a) else { continue };
                for b in 0..n {
                    let sb = &sites[b];
                    let minus_b: Vec<i32> = sb.iter().map(|x| -x).collect();
                    let probe_b: &[i32] = if sector == 0 { sb } else { &minus_b };
                    if !in_lipschitz_domain(sa, probe_b, &c, lambda, probe_shift) {
                        continue;
                    }
                    let shifted_b: Vec<i32> = sb.iter().zip(&c).map(|(x, y)| x + sign * probe_shift * y).collect();
                    let Some(ib) = lat.normal_index(&shifted_b) else { continue };
                    probed += 1;
                    let diff = part.get(a, b) - part.get(ia, ib);
                    let mc = euclid(sa).max(euclid(sb)) / nc + 1.0;
                    let dist = site_sum_norm(sa, sb, -sign);
                    let v = modulus_norm(&diff) * mc * (gamma * dist).exp();
                    lip[sector] = lip[sector].max(v);
                    if v > worst.0 {
                        worst = (v, Some(c.clone()));
                    }
                }
            }
        }
    }
    if probed == 0 {
        return Err(Error::Inconclusive(
            "no retained pair lies in a Lipschitz domain with its shifted entry retained".into(),
        ));
    }
    Ok(LipschitzReport {
        value: lip[0].max(lip[1]) + gamma_norm,
        lip_plus: lip[0],
        lip_minus: lip[1],
        gamma_norm,
        probed,
        worst_direction: worst.1,
    })
}
