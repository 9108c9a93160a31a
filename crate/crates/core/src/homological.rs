//! Homological equations `{h, s} + R = Z` for a quadratic `h` with block
//! diagonal normal part, solved class by class in the monomial basis.
//!
//! A right-hand-side term `e^{i⟨k,φ⟩} r^α ũ^β ṽ^υ · (high part)` is split
//! into a prefactor over tangential and low normal modes and a part of
//! degree ≤ 2 in the high modes. The prefactor contributes the scalar
//! `D = ⟨k,ω⟩ + ⟨υ−β, λ̃⟩`; the high part is solved through shifted
//! Sylvester systems in the eigenbases of the blocks.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::algebra::{is_low, poisson_bracket, var, var_site, var_slot, Monomial, Polynomial, ZPower, SLOT_U, SLOT_V};
use crate::error::{Error, Result};
use crate::lattice::{norm2, BlockDecomposition, Lattice};
use crate::nonresonance::{check_melnikov_kam, dot, NfThresholds};
use crate::quadratic::{hermitian_eigen, BlockEigen, NormalMatrix, QuadraticForm};

/// Block systems whose divisors spread beyond this ratio are rejected.
pub const MAX_CONDITION: f64 = 1e12;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Solves `λX + AX + sign·XB = RHS` for Hermitian `A`, `B` by
/// diagonalizing both. Every divisor `λ + α_i + sign·β_j` must have modulus
/// at least `threshold`.
pub fn sylvester_block_solve(
    lambda: C64,
    a: &DMatrix<C64>,
    b: &DMatrix<C64>,
    rhs: &DMatrix<C64>,
    sign: f64,
    threshold: f64,
) -> Result<DMatrix<C64>> {
    if rhs.nrows() != a.nrows() || rhs.ncols() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "rhs {}x{} against blocks {} and {}",
            rhs.nrows(),
            rhs.ncols(),
            a.nrows(),
            b.nrows()
        )));
    }
    let (va, ua) = hermitian_eigen(a);
    let (vb, ub) = hermitian_eigen(b);
    let ctx = SolveContext { k: &[], note: "sylvester" };
    Ok(sylvester_eigen(lambda, (&va, &ua), (&vb, &ub), sign, rhs, threshold, &ctx)?.0)
}

struct SolveContext<'a> {
    k: &'a [i32],
    note: &'a str,
}

/// Eigenbasis form of the Sylvester solve; also returns the smallest
/// divisor modulus.
fn sylvester_eigen(
    lambda: C64,
    (va, ua): (&[f64], &DMatrix<C64>),
    (vb, ub): (&[f64], &DMatrix<C64>),
    sign: f64,
    rhs: &DMatrix<C64>,
    threshold: f64,
    ctx: &SolveContext,
) -> Result<(DMatrix<C64>, f64)> {
    let mut t = ua.adjoint() * rhs * ub;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..va.len() {
        for j in 0..vb.len() {
            let div = lambda + va[i] + sign * vb[j];
            let m = div.norm();
            if m < threshold {
                return Err(Error::SmallDivisor {
                    k: ctx.k.to_vec(),
                    value: m,
                    threshold,
                    context: ctx.note.to_string(),
                });
            }
            lo = lo.min(m);
            hi = hi.max(m);
            t[(i, j)] /= div;
        }
    }
    let condition = if lo == 0.0 { f64::INFINITY } else { hi / lo };
    if condition > MAX_CONDITION {
        return Err(Error::SolveFailure { condition, context: ctx.note.to_string() });
    }
    Ok((ua * t * ub.adjoint(), lo))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum HighPart {
    None,
    U(usize),
    V(usize),
    Uv(usize, usize),
    Uu(usize, usize),
    Vv(usize, usize),
}

fn split_high(m: &Monomial, high: &[bool]) -> Result<(Monomial, HighPart)> {
    let mut pre = m.clone();
    let mut us: SmallVec<[usize; 2]> = SmallVec::new();
    let mut vs: SmallVec<[usize; 2]> = SmallVec::new();
    let mut low_z = ZPower::new();
    for &(x, e) in &m.z {
        if high[var_site(x)] {
            for _ in 0..e {
                if var_slot(x) == SLOT_U {
                    us.push(var_site(x));
                } else {
                    vs.push(var_site(x));
                }
            }
        } else {
            low_z.push((x, e));
        }
    }
    pre.z = low_z;
    let part = match (us.as_slice(), vs.as_slice()) {
        ([], []) => HighPart::None,
        ([a], []) => HighPart::U(*a),
        ([], [b]) => HighPart::V(*b),
        ([a], [b]) => HighPart::Uv(*a, *b),
        ([a, b], []) => HighPart::Uu(*a.min(b), *a.max(b)),
        ([], [a, b]) => HighPart::Vv(*a.min(b), *a.max(b)),
        _ => {
            return Err(Error::InvalidModel(format!(
                "term with {} high-mode factors in a homological right-hand side",
                us.len() + vs.len()
            )))
        }
    };
    Ok((pre, part))
}

/// Quadratic part and spectral data shared by all classes of one solve.
struct Spectral<'a> {
    q: &'a QuadraticForm,
    lat: &'a Lattice,
    dec: &'a BlockDecomposition,
    eig: BlockEigen,
    conj_vectors: Vec<DMatrix<C64>>,
    high: Vec<bool>,
    /// `λ̃_a = (Ω+H)_aa` on low modes.
    lambda_low: Vec<f64>,
}

impl<'a> Spectral<'a> {
    fn new(q: &'a QuadraticForm, lat: &'a Lattice, dec: &'a BlockDecomposition, high: Vec<bool>) -> Result<Self> {
        let eig = BlockEigen::new(q, dec)?;
        let conj_vectors = eig.vectors.iter().map(|u| u.map(|c| c.conj())).collect();
        let mut lambda_low = vec![0.0; lat.n_normal()];
        for (a, l) in lambda_low.iter_mut().enumerate() {
            if !high[a] {
                *l = q.big_omega[a] + q.h.get(a, a).re;
            }
        }
        for (&(a, b), c) in q.h.entries() {
            if a != b && (!high[a] || !high[b]) && c.norm() > 0.0 {
                return Err(Error::InvalidModel(format!(
                    "quadratic part couples low mode {a} off the diagonal"
                )));
            }
        }
        Ok(Spectral { q, lat, dec, eig, conj_vectors, high, lambda_low })
    }

    fn block(&self, p: usize) -> (&[f64], &DMatrix<C64>) {
        (&self.eig.values[p], &self.eig.vectors[p])
    }

    /// Spectral data of `B_Pᵀ = conj(B_P)`.
    fn block_t(&self, p: usize) -> (&[f64], &DMatrix<C64>) {
        (&self.eig.values[p], &self.conj_vectors[p])
    }
}

#[derive(Clone, Debug)]
struct LayerOutput {
    generator: Polynomial,
    resonant: Polynomial,
    min_divisor: f64,
}

/// Solves `{h, F} + R = Z` for one right-hand side; `threshold(|l̃|)` is the
/// lower bound required of every divisor.
fn solve_layer(sp: &Spectral, rhs: &Polynomial, threshold: &dyn Fn(u32) -> f64) -> Result<LayerOutput> {
    let lat = rhs.lattice().clone();
    let cutoff = rhs.degree_cutoff();
    let mut classes: BTreeMap<Monomial, Vec<(HighPart, C64)>> = BTreeMap::new();
    for (m, &c) in rhs.iter() {
        let (pre, part) = split_high(m, &sp.high)?;
        classes.entry(pre).or_default().push((part, c));
    }
    let mut gen = Polynomial::zero(lat.clone(), cutoff);
    let mut res = Polynomial::zero(lat.clone(), cutoff);
    let mut min_div = f64::INFINITY;
    for (pre, entries) in classes {
        let mut d = dot(&pre.k, &sp.q.omega);
        let mut l1 = 0u32;
        let mut balanced = true;
        let mut per_site: BTreeMap<usize, i64> = BTreeMap::new();
        for &(x, e) in &pre.z {
            let s = if var_slot(x) == SLOT_V { 1 } else { -1 };
            *per_site.entry(var_site(x)).or_default() += s * e as i64;
        }
        for (&a, &n) in &per_site {
            d += n as f64 * sp.lambda_low[a];
            l1 += n.unsigned_abs() as u32;
            balanced &= n == 0;
        }
        let resonant = balanced && pre.k.iter().all(|&x| x == 0);
        let thr = threshold(l1);
        let note = format!("low exponents {:?}", per_site.iter().filter(|e| *e.1 != 0).collect::<Vec<_>>());
        let ctx = SolveContext { k: &pre.k, note: &note };
        let mut u_rhs: BTreeMap<usize, Vec<(usize, C64)>> = BTreeMap::new();
        let mut v_rhs: BTreeMap<usize, Vec<(usize, C64)>> = BTreeMap::new();
        let mut uv_rhs: BTreeMap<(usize, usize), Vec<(usize, usize, C64)>> = BTreeMap::new();
        let mut uu_rhs: BTreeMap<(usize, usize), Vec<(usize, usize, C64)>> = BTreeMap::new();
        let mut vv_rhs: BTreeMap<(usize, usize), Vec<(usize, usize, C64)>> = BTreeMap::new();
        let bo = &sp.dec.block_of;
        for (part, c) in entries {
            match part {
                HighPart::None => {
                    if resonant {
                        res.add_term(pre.clone(), c);
                    } else {
                        let m = d.abs();
                        if m < thr {
                            return Err(Error::SmallDivisor { k: pre.k.to_vec(), value: m, threshold: thr, context: note });
                        }
                        if m == 0.0 {
                            return Err(Error::SolveFailure { condition: f64::INFINITY, context: note });
                        }
                        min_div = min_div.min(m);
                        gen.add_term(pre.clone(), -I * c / d);
                    }
                }
                HighPart::U(a) => u_rhs.entry(bo[a]).or_default().push((a, c)),
                HighPart::V(a) => v_rhs.entry(bo[a]).or_default().push((a, c)),
                HighPart::Uv(a, b) => uv_rhs.entry((bo[a], bo[b])).or_default().push((a, b, c)),
                HighPart::Uu(a, b) => {
                    let (p, q) = (bo[a].min(bo[b]), bo[a].max(bo[b]));
                    uu_rhs.entry((p, q)).or_default().push((a, b, c));
                }
                HighPart::Vv(a, b) => {
                    let (p, q) = (bo[a].min(bo[b]), bo[a].max(bo[b]));
                    vv_rhs.entry((p, q)).or_default().push((a, b, c));
                }
            }
        }
        let zero1 = (&[0.0][..], &DMatrix::from_element(1, 1, C64::new(1.0, 0.0)));
        let dl = C64::new(d, 0.0);
        let pos = |p: usize, a: usize| sp.dec.blocks[p].binary_search(&a).unwrap();
        // (B − D) x = iR
        for (p, list) in u_rhs {
            let mut r = DMatrix::zeros(sp.dec.blocks[p].len(), 1);
            for (a, c) in list {
                r[(pos(p, a), 0)] += I * c;
            }
            let (x, m) = sylvester_eigen(-dl, sp.block(p), zero1, 1.0, &r, thr, &ctx)?;
            min_div = min_div.min(m);
            for (i, &a) in sp.dec.blocks[p].iter().enumerate() {
                gen.add_term(pre.clone().times_var(var(a, SLOT_U), 1), x[(i, 0)]);
            }
        }
        // (Bᵀ + D) y = −iR
        for (p, list) in v_rhs {
            let mut r = DMatrix::zeros(sp.dec.blocks[p].len(), 1);
            for (a, c) in list {
                r[(pos(p, a), 0)] += -I * c;
            }
            let (y, m) = sylvester_eigen(dl, sp.block_t(p), zero1, 1.0, &r, thr, &ctx)?;
            min_div = min_div.min(m);
            for (i, &a) in sp.dec.blocks[p].iter().enumerate() {
                gen.add_term(pre.clone().times_var(var(a, SLOT_V), 1), y[(i, 0)]);
            }
        }
        // BX − XB − DX = iR, equal-norm pairs of a resonant class excepted
        for ((p, q), list) in uv_rhs {
            if resonant && sp.dec.block_norm2(p, sp.lat) == sp.dec.block_norm2(q, sp.lat) {
                for (a, b, c) in list {
                    res.add_term(pre.clone().times_var(var(a, SLOT_U), 1).times_var(var(b, SLOT_V), 1), c);
                }
                continue;
            }
            let mut r = DMatrix::zeros(sp.dec.blocks[p].len(), sp.dec.blocks[q].len());
            for (a, b, c) in list {
                r[(pos(p, a), pos(q, b))] += I * c;
            }
            let (x, m) = sylvester_eigen(-dl, sp.block(p), sp.block(q), -1.0, &r, thr, &ctx)?;
            min_div = min_div.min(m);
            for (i, &a) in sp.dec.blocks[p].iter().enumerate() {
                for (j, &b) in sp.dec.blocks[q].iter().enumerate() {
                    gen.add_term(pre.clone().times_var(var(a, SLOT_U), 1).times_var(var(b, SLOT_V), 1), x[(i, j)]);
                }
            }
        }
        // BY + YBᵀ − DY = iR and BᵀZ + ZB + DZ = −iR over symmetric R
        for (slot, lists, lam, scale) in [(SLOT_U, uu_rhs, -dl, I), (SLOT_V, vv_rhs, dl, -I)] {
            for ((p, q), list) in lists {
                let mut r = DMatrix::zeros(sp.dec.blocks[p].len(), sp.dec.blocks[q].len());
                for (a, b, c) in list {
                    let (a, b) = if bo[a] == p { (a, b) } else { (b, a) };
                    if a == b {
                        r[(pos(p, a), pos(q, b))] += 2.0 * scale * c;
                    } else {
                        r[(pos(p, a), pos(q, b))] += scale * c;
                        if p == q {
                            r[(pos(p, b), pos(q, a))] += scale * c;
                        }
                    }
                }
                let (left, right) = if slot == SLOT_U { (sp.block(p), sp.block_t(q)) } else { (sp.block_t(p), sp.block(q)) };
                let (y, m) = sylvester_eigen(lam, left, right, 1.0, &r, thr, &ctx)?;
                min_div = min_div.min(m);
                for (i, &a) in sp.dec.blocks[p].iter().enumerate() {
                    for (j, &b) in sp.dec.blocks[q].iter().enumerate() {
                        if p == q && b < a {
                            continue;
                        }
                        let coeff = if a == b { y[(i, j)] / 2.0 } else { y[(i, j)] };
                        gen.add_term(pre.clone().times_var(var(a, slot), 1).times_var(var(b, slot), 1), coeff);
                    }
                }
            }
        }
    }
    gen.prune();
    res.prune();
    Ok(LayerOutput { generator: gen, resonant: res, min_divisor: min_div })
}

/// Block decomposition refined so that every entry of `H` stays inside a
/// block.
pub fn compatible_blocks(q: &QuadraticForm, dec: &BlockDecomposition, lat: &Lattice) -> BlockDecomposition {
    let links: Vec<(usize, usize)> = q
        .h
        .links()
        .into_iter()
        .filter(|&(a, b)| dec.block_of[a] != dec.block_of[b])
        .collect();
    if links.is_empty() {
        dec.clone()
    } else {
        dec.coarsened(&links, lat)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub residual: f64,
    pub divisor_margin: f64,
    pub generator_terms: usize,
    pub resonant_terms: usize,
}

#[derive(Clone, Debug)]
pub struct HomologicalSolution {
    pub s: Polynomial,
    /// `a₁ + ⟨χ₁, r⟩ + Σ H₁_ab u_a v_b`.
    pub h1: Polynomial,
    pub a1: f64,
    pub chi1: Vec<f64>,
    pub h1_matrix: NormalMatrix,
    pub residual: f64,
    /// Smallest divisor modulus used by the solve.
    pub divisor_margin: f64,
}

impl HomologicalSolution {
    pub fn summary(&self) -> ResidualSummary {
        ResidualSummary {
            residual: self.residual,
            divisor_margin: self.divisor_margin,
            generator_terms: self.s.len(),
            resonant_terms: self.h1.len(),
        }
    }
}

/// `{h, s} + T f_low + T {f_high, s}^low − h₁` with `T` the truncation at
/// `Δ′`.
pub fn kam_residual(
    q: &QuadraticForm,
    f_low: &Polynomial,
    f_high: &Polynomial,
    s: &Polynomial,
    h1: &Polynomial,
    delta_prime: f64,
) -> Result<f64> {
    let cutoff = f_low.degree_cutoff().max(f_high.degree_cutoff());
    let h = q.to_polynomial(f_low.lattice(), cutoff);
    let lhs = poisson_bracket(&h, s, cutoff)?
        .plus(&f_low.truncate_fourier(delta_prime))
        .plus(&poisson_bracket(f_high, s, cutoff)?.filter(|m, _| is_low(m)).truncate_fourier(delta_prime))
        .minus(h1);
    Ok(lhs.max_abs())
}

/// Solves the KAM homological equation. The generator's angle part comes
/// from the degree-0 layer alone; its `ζ`-linear part then sees
/// `{f_high, s^φ}`; its degree-2 part sees `{f_high, s^φ + s¹}`. No other
/// contribution of `{f_high, s}` reaches the low jet, so the three solves
/// are exact.
pub fn solve_kam_homological(
    q: &QuadraticForm,
    f_low: &Polynomial,
    f_high: &Polynomial,
    dec: &BlockDecomposition,
    delta_prime: f64,
    kappa: f64,
) -> Result<HomologicalSolution> {
    f_low.same_lattice(f_high)?;
    let lat: Arc<Lattice> = f_low.lattice().clone();
    if let Some((m, _)) = f_low.iter().find(|(m, _)| !is_low(m)) {
        return Err(Error::InvalidModel(format!("low jet contains a term of degree {}", m.weighted_degree())));
    }
    let dec = compatible_blocks(q, dec, &lat);
    let report = check_melnikov_kam(q, &dec, &lat, kappa, delta_prime)?;
    if let Some(v) = report.violations.iter().min_by(|a, b| a.value.abs().total_cmp(&b.value.abs())) {
        return Err(Error::SmallDivisor {
            k: v.k.clone(),
            value: v.value.abs(),
            threshold: kappa,
            context: format!("{:?} blocks {:?}", v.kind, v.blocks),
        });
    }
    let cutoff = f_low.degree_cutoff().max(f_high.degree_cutoff());
    let sp = Spectral::new(q, &lat, &dec, vec![true; lat.n_normal()])?;
    let thr = |_: u32| kappa;
    let t = |p: &Polynomial| p.truncate_fourier(delta_prime);
    let f_low = f_low.with_cutoff(cutoff);

    let l0 = solve_layer(&sp, &t(&f_low.layer(0)), &thr)?;
    let s_phi = l0.generator;
    let g1 = poisson_bracket(f_high, &s_phi, cutoff)?.layer(1);
    let l1 = solve_layer(&sp, &t(&f_low.layer(1).plus(&g1)), &thr)?;
    let s_lin = s_phi.plus(&l1.generator);
    let g2 = poisson_bracket(f_high, &s_lin, cutoff)?.layer(2);
    let l2 = solve_layer(&sp, &t(&f_low.layer(2).plus(&g2)), &thr)?;
    let s = s_lin.plus(&l2.generator);
    let h1 = l0.resonant.plus(&l1.resonant).plus(&l2.resonant);

    let na = lat.n_tangential();
    let a1 = h1.coeff(&Monomial::one(na)).re;
    let chi1 = (0..na).map(|a| h1.coeff(&Monomial::r(na, a)).re).collect();
    let mut h1_matrix = NormalMatrix::new();
    for (m, &c) in h1.iter() {
        if m.z_degree() == 2 {
            let u = m.z.iter().find(|p| var_slot(p.0) == SLOT_U).map(|p| var_site(p.0));
            let v = m.z.iter().find(|p| var_slot(p.0) == SLOT_V).map(|p| var_site(p.0));
            if let (Some(a), Some(b)) = (u, v) {
                h1_matrix.add(a, b, c);
            }
        }
    }
    let residual = kam_residual(q, &f_low, f_high, &s, &h1, delta_prime)?;
    Ok(HomologicalSolution {
        s,
        h1,
        a1,
        chi1,
        h1_matrix,
        residual,
        divisor_margin: l0.min_divisor.min(l1.min_divisor).min(l2.min_divisor),
    })
}

#[derive(Clone, Debug)]
pub struct NfGeneratorStep {
    pub j0: u32,
    pub f: Polynomial,
    pub zhat: Polynomial,
    pub residual: f64,
    pub divisor_margin: f64,
}

/// Normal sites with `|a| > N`.
pub fn high_modes(lat: &Lattice, n: f64) -> Vec<bool> {
    lat.normal().iter().map(|a| norm2(a) as f64 > n * n).collect()
}

/// Solves `{h, F} + P = Ẑ` on one homogeneous layer of degree `j₀+1`
/// whose terms carry at most two high-mode factors. `Ẑ` collects the terms
/// with `k = 0`, balanced low exponents and an equal-norm (or absent) high
/// pair.
pub fn solve_nf_homological(
    q: &QuadraticForm,
    p_top: &Polynomial,
    dec: &BlockDecomposition,
    th: &NfThresholds,
) -> Result<NfGeneratorStep> {
    let lat = p_top.lattice().clone();
    let mut degrees = p_top.iter().map(|(m, _)| m.weighted_degree());
    let deg = degrees.next().unwrap_or(1);
    if degrees.any(|x| x != deg) {
        return Err(Error::InvalidModel("normal-form layer is not homogeneous".into()));
    }
    let dec = compatible_blocks(q, dec, &lat);
    let sp = Spectral::new(q, &lat, &dec, high_modes(&lat, th.n))?;
    let p = p_top.filter(|m, _| m.k_norm() as f64 <= th.delta_t);
    let out = solve_layer(&sp, &p, &|l| th.surrogate(l))?;
    let h = q.to_polynomial(&lat, p.degree_cutoff());
    let residual = poisson_bracket(&h, &out.generator, p.degree_cutoff())?
        .plus(&p)
        .minus(&out.resonant)
        .max_abs();
    Ok(NfGeneratorStep {
        j0: deg.saturating_sub(1),
        f: out.generator,
        zhat: out.resonant,
        residual,
        divisor_margin: out.min_divisor,
    })
}
