//! The truncated NLS Hamiltonian `Σ (|a|² + V̂(a)) |u_a|² + ε ∫ F(|u|²) dx`
//! (normalized measure on the torus), expanded into monomials and rewritten
//! in action-angle variables on the tangential sites.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::algebra::{var, Monomial, Polynomial, SLOT_U, SLOT_V};
use crate::error::{Error, Result};
use crate::lattice::{norm2, Lattice};
use crate::nonresonance::{frequencies, ParameterPoint};
use crate::quadratic::QuadraticForm;

/// Monomial budget of a single expansion.
pub const TERM_BUDGET: usize = 5_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlsModel {
    /// `V̂(a)` on every retained site.
    pub v_hat: ParameterPoint,
    /// `F(y) = Σ_j c_j y^j`.
    pub f_taylor: Vec<f64>,
    pub eps: f64,
    /// Torus amplitudes `q_a > 0`, one per tangential site.
    pub q: Vec<f64>,
    /// Weighted-degree cutoff of the expansion.
    pub degree_cutoff: u32,
}

impl NlsModel {
    pub fn validate(&self, lat: &Lattice) -> Result<()> {
        if self.q.len() != lat.n_tangential() {
            return Err(Error::DimensionMismatch(format!(
                "{} amplitudes for {} tangential sites",
                self.q.len(),
                lat.n_tangential()
            )));
        }
        if let Some(q) = self.q.iter().find(|&&q| !(q > 0.0 && q.is_finite())) {
            return Err(Error::InvalidModel(format!("torus amplitude {q} is not positive")));
        }
        if self.f_taylor.iter().any(|c| !c.is_finite()) || !self.eps.is_finite() {
            return Err(Error::InvalidModel("nonlinearity coefficients must be finite".into()));
        }
        for a in lat.all_sites() {
            self.v_hat.get(&a)?;
        }
        Ok(())
    }
}

/// Multisets of `j` site indices, grouped by momentum sum.
fn multisets_by_momentum(sites: &[Vec<i32>], j: usize) -> HashMap<Vec<i32>, Vec<Vec<usize>>> {
    fn rec(
        sites: &[Vec<i32>],
        start: usize,
        left: usize,
        cur: &mut Vec<usize>,
        mom: &mut Vec<i32>,
        out: &mut HashMap<Vec<i32>, Vec<Vec<usize>>>,
    ) {
        if left == 0 {
            out.entry(mom.clone()).or_default().push(cur.clone());
            return;
        }
        for i in start..sites.len() {
            cur.push(i);
            mom.iter_mut().zip(&sites[i]).for_each(|(m, x)| *m += x);
            rec(sites, i, left - 1, cur, mom, out);
            mom.iter_mut().zip(&sites[i]).for_each(|(m, x)| *m -= x);
            cur.pop();
        }
    }
    let d = sites.first().map(|s| s.len()).unwrap_or(0);
    let mut out = HashMap::new();
    rec(sites, 0, j, &mut Vec::new(), &mut vec![0; d], &mut out);
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|x| x as f64).product()
}

/// Number of orderings of a multiset given as sorted indices.
fn orderings(ms: &[usize]) -> f64 {
    let mut out = factorial(ms.len());
    let mut i = 0;
    while i < ms.len() {
        let mut j = i;
        while j < ms.len() && ms[j] == ms[i] {
            j += 1;
        }
        out /= factorial(j - i);
        i = j;
    }
    out
}

/// `s(s−1)…(s−n+1)/n!` for real `s`.
pub fn binomial(s: f64, n: u32) -> f64 {
    (0..n).fold(1.0, |acc, i| acc * (s - i as f64) / (i as f64 + 1.0))
}

/// `∫ |u|^{2j} dx = Σ_{Σa = Σb} Π u_{a_i} Π ū_{b_i}` as `(μ, ν, count)` over
/// all retained sites (tangential first).
fn field_power_terms(sites: &[Vec<i32>], j: usize) -> Vec<(Vec<usize>, Vec<usize>, f64)> {
    let groups = multisets_by_momentum(sites, j);
    let mut out = Vec::new();
    let mut keys: Vec<&Vec<i32>> = groups.keys().collect();
    keys.sort();
    for key in keys {
        let list = &groups[key];
        for mu in list {
            for nu in list {
                out.push((mu.clone(), nu.clone(), orderings(mu) * orderings(nu)));
            }
        }
    }
    out
}

/// `h` (frequencies `|a|² + V̂(a)`, `H = 0`) and `f = ε ∫ F(|u|²)` in the
/// variables of `lat`; tangential factors become
/// `u_a = √(r_a+q_a) e^{−iφ_a}`, `ū_a = √(r_a+q_a) e^{iφ_a}` expanded in
/// `r` up to the degree cutoff.
pub fn build_nls_hamiltonian(model: &NlsModel, lat: &Arc<Lattice>) -> Result<(QuadraticForm, Polynomial)> {
    model.validate(lat)?;
    let q = frequencies(lat, &model.v_hat)?;
    let na = lat.n_tangential();
    let cutoff = model.degree_cutoff;
    let sites = lat.all_sites();
    let mut f = Polynomial::zero(lat.clone(), cutoff);
    if model.eps == 0.0 {
        return Ok((q, f));
    }
    for (j, &cj) in model.f_taylor.iter().enumerate() {
        if cj == 0.0 {
            continue;
        }
        if j == 0 {
            f.add_term(Monomial::one(na), C64::new(model.eps * cj, 0.0));
            continue;
        }
        for (mu, nu, count) in field_power_terms(&sites, j) {
            let mut base = Monomial::one(na);
            let mut tang = vec![(0u32, 0u32); na];
            for &i in &mu {
                if i < na {
                    tang[i].0 += 1;
                } else {
                    base = base.times_var(var(i - na, SLOT_U), 1);
                }
            }
            for &i in &nu {
                if i < na {
                    tang[i].1 += 1;
                } else {
                    base = base.times_var(var(i - na, SLOT_V), 1);
                }
            }
            let zdeg = base.z_degree();
            if zdeg > cutoff {
                continue;
            }
            for (a, &(m, n)) in tang.iter().enumerate() {
                base.k[a] = n as i32 - m as i32;
            }
            // Π_a (q_a + r_a)^{s_a}, s_a = (μ_a+ν_a)/2, up to r-degree budget
            let budget = (cutoff - zdeg) / 2;
            let mut expansions: Vec<(Vec<u32>, f64)> = vec![(vec![0; na], 1.0)];
            for (a, &(m, n)) in tang.iter().enumerate() {
                let s = (m + n) as f64 / 2.0;
                let mut next = Vec::new();
                for (alpha, c) in &expansions {
                    let used: u32 = alpha.iter().sum();
                    for e in 0..=budget - used {
                        let b = binomial(s, e);
                        if b == 0.0 {
                            break;
                        }
                        let mut al = alpha.clone();
                        al[a] = e;
                        next.push((al, c * b * model.q[a].powf(s - e as f64)));
                    }
                }
                expansions = next;
            }
            for (alpha, c) in expansions {
                let mut m = base.clone();
                m.alpha.copy_from_slice(&alpha);
                f.add_term(m, C64::new(model.eps * cj * count * c, 0.0));
            }
            if f.len() > TERM_BUDGET {
                return Err(Error::DegreeOverflow { terms: f.len(), limit: TERM_BUDGET });
            }
        }
    }
    f.prune();
    Ok((q, f))
}

/// Value `Σ λ_a |u_a|² + ε ∫ F(|u|²)` of the field with Fourier
/// coefficients `u` on all sites of `lat` (tangential first).
pub fn field_energy(model: &NlsModel, lat: &Lattice, u: &[C64]) -> Result<f64> {
    let sites = lat.all_sites();
    let mut e = 0.0;
    for (a, c) in sites.iter().zip(u) {
        e += (norm2(a) as f64 + model.v_hat.get(a)?) * c.norm_sqr();
    }
    for (j, &cj) in model.f_taylor.iter().enumerate() {
        if cj == 0.0 {
            continue;
        }
        if j == 0 {
            e += model.eps * cj;
            continue;
        }
        for (mu, nu, count) in field_power_terms(&sites, j) {
            let term: C64 = mu.iter().map(|&i| u[i]).product::<C64>() * nu.iter().map(|&i| u[i].conj()).product::<C64>();
            e += model.eps * cj * count * term.re;
        }
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeConfig;

    fn toy(eps: f64, f_taylor: Vec<f64>, cutoff: u32) -> (Arc<Lattice>, NlsModel) {
        let lat = Arc::new(Lattice::new(LatticeConfig { d: 1, tangential: vec![vec![1]], cutoff: 2 }).unwrap());
        let mut v = ParameterPoint::constant(&lat, 0.0);
        v.set(&[1], 0.3);
        let model = NlsModel { v_hat: v, f_taylor, eps, q: vec![0.5], degree_cutoff: cutoff };
        (lat, model)
    }

    #[test]
    fn mass_nonlinearity_is_parseval() {
        let (lat, model) = toy(0.1, vec![0.0, 1.0], 4);
        let (q, f) = build_nls_hamiltonian(&model, &lat).unwrap();
        assert_eq!(q.omega, vec![1.3]);
        let mut expect = Polynomial::zero(lat.clone(), 4);
        expect.add_term(Monomial::one(1), C64::new(0.05, 0.0));
        expect.add_term(Monomial::r(1, 0), C64::new(0.1, 0.0));
        for s in 0..lat.n_normal() {
            expect.add_term(Monomial::uv(1, s, s), C64::new(0.1, 0.0));
        }
        assert!(f.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn zero_eps_gives_zero_perturbation() {
        let (lat, model) = toy(0.0, vec![0.0, 0.0, 1.0], 4);
        assert!(build_nls_hamiltonian(&model, &lat).unwrap().1.is_empty());
    }

    #[test]
    fn quartic_terms_have_zero_momentum_and_are_real() {
        let (lat, model) = toy(0.2, vec![0.0, 0.0, 1.0], 5);
        let (_, f) = build_nls_hamiltonian(&model, &lat).unwrap();
        assert!(!f.is_empty());
        assert!(f.iter().all(|(m, _)| m.momentum(&lat).iter().all(|&x| x == 0)));
        assert!(f.is_real(1e-14));
        // the pure torus term ε q² and its action derivative 2εq r
        assert!((f.coeff(&Monomial::one(1)).re - 0.2 * 0.25).abs() < 1e-15);
        assert!((f.coeff(&Monomial::r(1, 0)).re - 0.2 * 2.0 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_amplitude_rejected() {
        let (lat, mut model) = toy(0.1, vec![0.0, 0.0, 1.0], 4);
        model.q = vec![0.0];
        assert!(matches!(build_nls_hamiltonian(&model, &lat), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn generalized_binomial() {
        assert!((binomial(0.5, 2) + 0.125).abs() < 1e-16);
        assert_eq!(binomial(2.0, 3), 0.0);
    }
}
