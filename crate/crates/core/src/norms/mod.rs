//! Norms on a finite truncation: the p-tame vector-field norm, the sampled
//! weighted norm it dominates, matrix γ-norms and Töplitz-Lipschitz
//! surrogates.
//!
//! Everything is evaluated in the complex coordinates `z = (u, v)`; since
//! `C` is unitary the `ℓ²_p` norms agree with those of `ζ = (ξ, η)`. The
//! layer `h = 0, 1` branches of the tame norm are applied verbatim.

pub mod forms;
pub mod matrix;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{gradient, poisson_bracket, PhaseState, Polynomial, ZPower};
use crate::error::{Error, Result};
use crate::lattice::{bracket_weight, Lattice};
use crate::random::rng;
use forms::{scalar_sup, vector_sup, ModForm};

pub use matrix::{
    band_truncate, lipschitz_seminorm, matrix_gamma_norm, modulus_norm, pi_block, Block2, LatticeMatrix,
    LipschitzReport,
};

/// Forward-difference step for parameter derivatives.
pub const PARAM_FD_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainParams {
    pub rho: f64,
    pub mu: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub p: f64,
}

impl DomainParams {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !(unit(self.rho) && unit(self.mu) && unit(self.sigma)) {
            return Err(Error::InvalidConfig("rho, mu, sigma must lie in (0,1)".into()));
        }
        if self.gamma.is_nan() || self.gamma < 0.0 || self.p.is_nan() || self.p < 1.0 {
            return Err(Error::InvalidConfig("need gamma >= 0 and p >= 1".into()));
        }
        Ok(())
    }

    /// `ρ = σ`, `μ = σ²`.
    pub fn kam(sigma: f64, gamma: f64, p: f64) -> Self {
        DomainParams { rho: sigma, mu: sigma * sigma, sigma, gamma, p }
    }
}

/// One layer's moduli. `r[a]`, `phi[a]` are the scalar forms of `∂_{r_a}`
/// and `∂_{φ_a}`; `zeta[j]` the form of the derivative in variable `j`.
struct Layer {
    r: Vec<ModForm>,
    phi: Vec<ModForm>,
    zeta: Vec<ModForm>,
}

/// Per-layer contributions and their total.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TameNorm {
    pub value: f64,
    /// `(h, |||f_r|||, |||f_φ|||/μ, |||f_ζ|||/σ)` after the σ scalings.
    pub layers: Vec<(u32, f64, f64, f64)>,
}

fn var_weights(lat: &Lattice) -> Vec<f64> {
    lat.normal().iter().flat_map(|a| [bracket_weight(a); 2]).collect()
}

/// Groups coefficients by `(α, z)` and returns, for each group and each
/// weighting `w(k)`, `sup_a Σ_k (|c_k| + |∂_{w_a} c_k|) w(k) e^{|k|ρ}`.
fn group_moduli(
    f: &Polynomial,
    derivs: &[Polynomial],
    rho: f64,
    weights: &[&dyn Fn(&[i32]) -> f64],
) -> BTreeMap<(Vec<u32>, ZPower), Vec<f64>> {
    let mut out: BTreeMap<(Vec<u32>, ZPower), Vec<f64>> = BTreeMap::new();
    let n_params = derivs.len().max(1);
    let mut acc: BTreeMap<(Vec<u32>, ZPower), Vec<Vec<f64>>> = BTreeMap::new();
    for (m, &c) in f.iter() {
        let key = (m.alpha.to_vec(), m.z.clone());
        let e = (m.k_norm() as f64 * rho).exp();
        let slot = acc.entry(key).or_insert_with(|| vec![vec![0.0; n_params]; weights.len()]);
        for (wi, w) in weights.iter().enumerate() {
            let base = c.norm() * w(&m.k) * e;
            for a in 0..n_params {
                let dc = derivs.get(a).map(|d| d.coeff(m).norm()).unwrap_or(0.0);
                slot[wi][a] += base + dc * w(&m.k) * e;
            }
        }
    }
    // derivative terms whose base coefficient vanishes
    for (a, d) in derivs.iter().enumerate() {
        for (m, &dc) in d.iter() {
            if f.coeff(m) != C64::new(0.0, 0.0) {
                continue;
            }
            let key = (m.alpha.to_vec(), m.z.clone());
            let e = (m.k_norm() as f64 * rho).exp();
            let slot = acc.entry(key).or_insert_with(|| vec![vec![0.0; n_params]; weights.len()]);
            for (wi, w) in weights.iter().enumerate() {
                slot[wi][a] += dc.norm() * w(&m.k) * e;
            }
        }
    }
    for (key, per_w) in acc {
        out.insert(key, per_w.iter().map(|v| v.iter().copied().fold(0.0, f64::max)).collect());
    }
    out
}

fn build_layers(f: &Polynomial, derivs: &[Polynomial], dom: &DomainParams) -> BTreeMap<u32, Layer> {
    let na = f.lattice().n_tangential();
    let nvar = 2 * f.lattice().n_normal();
    let mut weights: Vec<Box<dyn Fn(&[i32]) -> f64>> = vec![Box::new(|_| 1.0)];
    for a in 0..na {
        weights.push(Box::new(move |k: &[i32]| k[a].unsigned_abs() as f64));
    }
    let wrefs: Vec<&dyn Fn(&[i32]) -> f64> = weights.iter().map(|b| b.as_ref()).collect();
    let groups = group_moduli(f, derivs, dom.rho, &wrefs);
    let mut layers: BTreeMap<u32, Layer> = BTreeMap::new();
    for ((alpha, z), mods) in groups {
        let h: u32 = z.iter().map(|p| p.1).sum();
        let ar: u32 = alpha.iter().sum();
        let layer = layers.entry(h).or_insert_with(|| Layer {
            r: vec![ModForm { degree: h, terms: vec![] }; na],
            phi: vec![ModForm { degree: h, terms: vec![] }; na],
            zeta: vec![ModForm { degree: h.saturating_sub(1), terms: vec![] }; nvar],
        });
        let base = mods[0] * dom.mu.powi(ar as i32);
        for a in 0..na {
            if alpha[a] > 0 {
                let c = mods[0] * alpha[a] as f64 * dom.mu.powi(ar as i32 - 1);
                layer.r[a].terms.push((z.clone(), c));
            }
            let cphi = mods[1 + a] * dom.mu.powi(ar as i32);
            if cphi > 0.0 {
                layer.phi[a].terms.push((z.clone(), cphi));
            }
        }
        if base > 0.0 {
            for (i, &(x, e)) in z.iter().enumerate() {
                let mut reduced = z.clone();
                if e == 1 {
                    reduced.remove(i);
                } else {
                    reduced[i].1 -= 1;
                }
                layer.zeta[x as usize].terms.push((reduced, base * e as f64));
            }
        }
    }
    layers
}

/// `Σ_h |||X_{f_h}|||` on `D(ρ,μ,σ)`, with parameter sensitivities given
/// as derivative polynomials `∂_{w_a} f` (possibly none).
pub fn ptame_vfield_norm_with_params(f: &Polynomial, derivs: &[Polynomial], dom: &DomainParams) -> TameNorm {
    let lat = f.lattice();
    let w = var_weights(lat);
    let mut total = 0.0;
    let mut report = Vec::new();
    for (h, layer) in build_layers(f, derivs, dom) {
        let seed = 0x5eed_u64 + h as u64;
        let r = layer.r.iter().map(|fm| scalar_sup(fm, &w, seed)).fold(0.0, f64::max) * dom.sigma.powi(h as i32);
        let phi = layer.phi.iter().map(|fm| scalar_sup(fm, &w, seed)).fold(0.0, f64::max) * dom.sigma.powi(h as i32)
            / dom.mu;
        let zeta = if h == 0 {
            0.0
        } else {
            let tp = vector_sup(&layer.zeta, h - 1, &w, dom.p, seed);
            let t1 = vector_sup(&layer.zeta, h - 1, &w, 1.0, seed);
            tp.max(t1) * dom.sigma.powi(h as i32 - 1) / dom.sigma
        };
        total += r + phi + zeta;
        report.push((h, r, phi, zeta));
    }
    TameNorm { value: total, layers: report }
}

pub fn ptame_vfield_norm(f: &Polynomial, dom: &DomainParams) -> f64 {
    ptame_vfield_norm_with_params(f, &[], dom).value
}

/// Forward differences `(f(w + h e_a) − f(w))/h` of a parameter-dependent
/// family, step [`PARAM_FD_STEP`].
pub fn parameter_sensitivities(
    build: impl Fn(&[f64]) -> Result<Polynomial>,
    w: &[f64],
) -> Result<Vec<Polynomial>> {
    let f0 = build(w)?;
    let mut out = Vec::with_capacity(w.len());
    for a in 0..w.len() {
        let mut wp = w.to_vec();
        wp[a] += PARAM_FD_STEP;
        out.push(build(&wp)?.minus(&f0).scaled(C64::new(1.0 / PARAM_FD_STEP, 0.0)));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightedNorm {
    pub value: f64,
    pub ptame: f64,
    /// `value ≤ ptame + 1e−12`.
    pub bound_holds: bool,
    pub witness: usize,
}

/// Empirical sup of `|f_r| + |f_φ|/μ + ‖f_ζ‖_p/σ` over sampled points of
/// `D(ρ,μ,σ)`. Seven in ten samples sit on the boundary; half the normal
/// directions are concentrated on a single site.
pub fn weighted_vfield_norm(f: &Polynomial, dom: &DomainParams, samples: usize, seed: u64) -> Result<WeightedNorm> {
    if samples == 0 {
        return Err(Error::InvalidConfig("samples must be at least 1".into()));
    }
    let lat = f.lattice().clone();
    let (na, nl) = (lat.n_tangential(), lat.n_normal());
    let weights: Vec<f64> = lat.normal().iter().map(|a| bracket_weight(a).powf(dom.p)).collect();
    let mut r = rng(seed);
    let mut best = (0.0f64, 0usize);
    for s in 0..samples {
        let boundary = r.random_bool(0.7);
        let phi: Vec<C64> = (0..na)
            .map(|_| {
                let im = if boundary { dom.rho * if r.random_bool(0.5) { 1.0 } else { -1.0 } } else { r.random_range(-dom.rho..=dom.rho) };
                C64::new(r.random_range(0.0..std::f64::consts::TAU), im)
            })
            .collect();
        let act: Vec<C64> = (0..na)
            .map(|_| {
                let rad = if boundary { dom.mu } else { dom.mu * r.random_range(0.0..1.0f64) };
                C64::from_polar(rad, r.random_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        let mut u = vec![C64::new(0.0, 0.0); nl];
        let mut v = vec![C64::new(0.0, 0.0); nl];
        if nl > 0 {
            if r.random_bool(0.5) {
                let site = r.random_range(0..nl);
                u[site] = C64::from_polar(r.random_range(0.0..1.0), r.random_range(0.0..std::f64::consts::TAU));
                v[site] = C64::from_polar(r.random_range(0.0..1.0), r.random_range(0.0..std::f64::consts::TAU));
            } else {
                for j in 0..nl {
                    u[j] = C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
                    v[j] = C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
                }
            }
            let norm = (0..nl).map(|j| (u[j].norm_sqr() + v[j].norm_sqr()) * weights[j] * weights[j]).sum::<f64>().sqrt();
            if norm > 0.0 {
                let rad = if boundary { dom.sigma } else { dom.sigma * r.random_range(0.0..1.0f64) };
                let scale = rad / norm;
                u.iter_mut().chain(v.iter_mut()).for_each(|c| *c *= scale);
            }
        }
        let state = PhaseState { phi, r: act, u, v };
        let g = gradient(f, &state)?;
        let fr = g.r.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let fphi = g.phi.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let fz = (0..nl)
            .map(|j| (g.u[j].norm_sqr() + g.v[j].norm_sqr()) * weights[j] * weights[j])
            .sum::<f64>()
            .sqrt();
        let val = fr + fphi / dom.mu + fz / dom.sigma;
        if val > best.0 {
            best = (val, s);
        }
    }
    let ptame = ptame_vfield_norm(f, dom);
    Ok(WeightedNorm {
        value: best.0,
        ptame,
        bound_holds: best.0 <= ptame + 1e-12,
        witness: best.1,
    })
}

/// Both sides of the bracket estimate
/// `|||X_{f,g}|||(ρ−τ, (σ−τ′)², σ−τ′) ≤ C max(1/τ, σ/τ′) |||X_f||| |||X_g|||`.
#[derive(Clone, Debug, PartialEq)]
pub struct BracketNormCheck {
    pub lhs: f64,
    /// `max(1/τ, σ/τ′) |||X_f||| |||X_g|||` on `D(ρ, σ², σ)`.
    pub rhs_without_constant: f64,
    /// `lhs / rhs_without_constant` (0 when both vanish).
    pub constant: f64,
}

pub fn bracket_norm_check(
    f: &Polynomial,
    g: &Polynomial,
    dom: &DomainParams,
    tau: f64,
    tau_prime: f64,
) -> Result<BracketNormCheck> {
    if !(tau > 0.0 && tau < dom.rho && tau_prime > 0.0 && tau_prime < dom.sigma / 2.0) {
        return Err(Error::InvalidConfig("need 0 < tau < rho and 0 < tau' < sigma/2".into()));
    }
    let cutoff = f.degree_cutoff() + g.degree_cutoff();
    let b = poisson_bracket(&f.with_cutoff(cutoff), &g.with_cutoff(cutoff), cutoff)?;
    let outer = DomainParams { mu: dom.sigma * dom.sigma, ..*dom };
    let s2 = dom.sigma - tau_prime;
    let inner = DomainParams { rho: dom.rho - tau, mu: s2 * s2, sigma: s2, ..*dom };
    let lhs = ptame_vfield_norm(&b, &inner);
    let rhs = (1.0 / tau).max(dom.sigma / tau_prime) * ptame_vfield_norm(f, &outer) * ptame_vfield_norm(g, &outer);
    let constant = if rhs > 0.0 { lhs / rhs } else { 0.0 };
    Ok(BracketNormCheck { lhs, rhs_without_constant: rhs, constant })
}

/// Flat key/value record of one norm evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct NormReport {
    pub name: String,
    pub params: DomainParams,
    pub value: f64,
    pub witness: String,
}

impl NormReport {
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let p = &self.params;
        let _ = writeln!(s, "norm={}", self.name);
        let _ = writeln!(s, "rho={}\nmu={}\nsigma={}\ngamma={}\np={}", p.rho, p.mu, p.sigma, p.gamma, p.p);
        let _ = writeln!(s, "value={:.17e}", self.value);
        let _ = writeln!(s, "witness={}", self.witness);
        s
    }
}
