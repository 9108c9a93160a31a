//! Poisson bracket for the structure `dφ∧dr + dξ∧dη`:
//!
//! `{f,g} = Σ_A (f_φ g_r − f_r g_φ) + Σ_L (f_ξ g_η − f_η g_ξ)`,
//!
//! which in `u = (ξ+iη)/√2`, `v = (ξ−iη)/√2` reads
//! `Σ_L −i (f_u g_v − f_v g_u)`, so that `{ξ,η} = 1` and `{u,v} = −i`.

use std::collections::BTreeMap;

use num_complex::Complex64 as C64;

use super::monomial::{conj_var, var_site, Monomial, SLOT_U};
use super::polynomial::Polynomial;
use crate::error::Result;

struct Index<'a> {
    terms: Vec<(&'a Monomial, C64)>,
    with_alpha: Vec<Vec<usize>>,
    with_k: Vec<Vec<usize>>,
    with_var: Vec<Vec<usize>>,
}

impl<'a> Index<'a> {
    fn new(g: &'a Polynomial) -> Self {
        let na = g.lattice().n_tangential();
        let nvar = 2 * g.lattice().n_normal();
        let terms: Vec<(&Monomial, C64)> = g.iter().map(|(m, &c)| (m, c)).collect();
        let mut with_alpha = vec![Vec::new(); na];
        let mut with_k = vec![Vec::new(); na];
        let mut with_var = vec![Vec::new(); nvar];
        for (j, (m, _)) in terms.iter().enumerate() {
            for a in 0..na {
                if m.alpha[a] > 0 {
                    with_alpha[a].push(j);
                }
                if m.k[a] != 0 {
                    with_k[a].push(j);
                }
            }
            for &(x, _) in &m.z {
                with_var[x as usize].push(j);
            }
        }
        Index {
            terms,
            with_alpha,
            with_k,
            with_var,
        }
    }
}

pub fn poisson_bracket(f: &Polynomial, g: &Polynomial, cutoff: u32) -> Result<Polynomial> {
    f.same_lattice(g)?;
    let mut acc: BTreeMap<Monomial, C64> = BTreeMap::new();
    if !f.is_empty() && !g.is_empty() {
        let idx = Index::new(g);
        let na = f.lattice().n_tangential();
        let i = C64::new(0.0, 1.0);
        for (mf, &cf) in f.iter() {
            let df = mf.weighted_degree();
            let fits = |mg: &Monomial| df + mg.weighted_degree() <= cutoff + 2;
            for a in 0..na {
                if mf.k[a] != 0 {
                    for &j in &idx.with_alpha[a] {
                        let (mg, cg) = idx.terms[j];
                        if fits(mg) {
                            let c = i * (mf.k[a] as f64) * (mg.alpha[a] as f64) * cf * cg;
                            let mut m = mf.product(mg);
                            m.alpha[a] -= 1;
                            *acc.entry(m).or_default() += c;
                        }
                    }
                }
                if mf.alpha[a] > 0 {
                    for &j in &idx.with_k[a] {
                        let (mg, cg) = idx.terms[j];
                        if fits(mg) {
                            let c = -i * (mf.alpha[a] as f64) * (mg.k[a] as f64) * cf * cg;
                            let mut m = mf.product(mg);
                            m.alpha[a] -= 1;
                            *acc.entry(m).or_default() += c;
                        }
                    }
                }
            }
            for &(x, ex) in &mf.z {
                let partner = conj_var(x);
                // −i(μ_f ν_g − ν_f μ_g)
                let sign = if x % 2 == SLOT_U { -i } else { i };
                for &j in &idx.with_var[partner as usize] {
                    let (mg, cg) = idx.terms[j];
                    if fits(mg) {
                        let eg = mg.exponent(partner);
                        let c = sign * (ex as f64) * (eg as f64) * cf * cg;
                        let mut m = mf.product(mg);
                        m.drop_var(x);
                        m.drop_var(partner);
                        debug_assert_eq!(var_site(x), var_site(partner));
                        *acc.entry(m).or_default() += c;
                    }
                }
            }
        }
    }
    Ok(Polynomial::from_terms(f.lattice().clone(), cutoff, acc))
}
