use std::collections::BTreeMap;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::monomial::{var, var_site, var_slot, Monomial, SLOT_U, SLOT_V};
use crate::error::{Error, Result};
use crate::lattice::{dist2, Lattice, Site};

/// Coefficients below this magnitude are discarded after every operation.
pub const PRUNE_TOL: f64 = 1e-14;

/// Sparse Hamiltonian `Σ c · e^{i⟨k,φ⟩} r^α u^μ v^ν`, truncated at a
/// weighted degree.
#[derive(Clone, Debug)]
pub struct Polynomial {
    lattice: Arc<Lattice>,
    terms: BTreeMap<Monomial, C64>,
    degree_cutoff: u32,
}

impl PartialEq for Polynomial {
    fn eq(&self, other: &Self) -> bool {
        self.terms == other.terms && self.degree_cutoff == other.degree_cutoff && self.lattice == other.lattice
    }
}

impl Polynomial {
    pub fn zero(lattice: Arc<Lattice>, degree_cutoff: u32) -> Self {
        Polynomial {
            lattice,
            terms: BTreeMap::new(),
            degree_cutoff,
        }
    }

    pub fn from_terms(
        lattice: Arc<Lattice>,
        degree_cutoff: u32,
        terms: impl IntoIterator<Item = (Monomial, C64)>,
    ) -> Self {
        let mut p = Polynomial::zero(lattice, degree_cutoff);
        for (m, c) in terms {
            p.add_term(m, c);
        }
        p.prune();
        p
    }

    pub fn constant(lattice: Arc<Lattice>, degree_cutoff: u32, c: C64) -> Self {
        let na = lattice.n_tangential();
        Polynomial::from_terms(lattice, degree_cutoff, [(Monomial::one(na), c)])
    }

    /// `ξ_s = (u_s + v_s)/√2`.
    pub fn xi(lattice: Arc<Lattice>, degree_cutoff: u32, s: usize) -> Self {
        let na = lattice.n_tangential();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Polynomial::from_terms(
            lattice,
            degree_cutoff,
            [(Monomial::u(na, s), C64::new(h, 0.0)), (Monomial::v(na, s), C64::new(h, 0.0))],
        )
    }

    /// `η_s = −i(u_s − v_s)/√2`.
    pub fn eta(lattice: Arc<Lattice>, degree_cutoff: u32, s: usize) -> Self {
        let na = lattice.n_tangential();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Polynomial::from_terms(
            lattice,
            degree_cutoff,
            [(Monomial::u(na, s), C64::new(0.0, -h)), (Monomial::v(na, s), C64::new(0.0, h))],
        )
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn degree_cutoff(&self) -> u32 {
        self.degree_cutoff
    }

    pub fn terms(&self) -> &BTreeMap<Monomial, C64> {
        &self.terms
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Monomial, &C64)> {
        self.terms.iter()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, m: &Monomial) -> C64 {
        self.terms.get(m).copied().unwrap_or_default()
    }

    pub fn same_lattice(&self, other: &Polynomial) -> Result<()> {
        if Arc::ptr_eq(&self.lattice, &other.lattice) || self.lattice == other.lattice {
            Ok(())
        } else {
            Err(Error::ConfigMismatch)
        }
    }

    /// Accumulates `c·m`; terms above the degree cutoff are dropped.
    pub fn add_term(&mut self, m: Monomial, c: C64) {
        if m.weighted_degree() > self.degree_cutoff {
            return;
        }
        *self.terms.entry(m).or_default() += c;
    }

    pub fn prune(&mut self) {
        self.terms.retain(|_, c| c.norm() >= PRUNE_TOL);
    }

    pub fn add_assign(&mut self, other: &Polynomial) {
        for (m, &c) in &other.terms {
            self.add_term(m.clone(), c);
        }
        self.prune();
    }

    pub fn plus(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    pub fn minus(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), -c);
        }
        out.prune();
        out
    }

    pub fn scaled(&self, s: C64) -> Polynomial {
        let mut out = Polynomial::zero(self.lattice.clone(), self.degree_cutoff);
        out.terms = self.terms.iter().map(|(m, &c)| (m.clone(), c * s)).collect();
        out.prune();
        out
    }

    pub fn with_cutoff(&self, degree_cutoff: u32) -> Polynomial {
        self.filter(|m, _| m.weighted_degree() <= degree_cutoff).recut(degree_cutoff)
    }

    fn recut(mut self, degree_cutoff: u32) -> Polynomial {
        self.degree_cutoff = degree_cutoff;
        self
    }

    pub fn filter(&self, mut keep: impl FnMut(&Monomial, C64) -> bool) -> Polynomial {
        let mut out = Polynomial::zero(self.lattice.clone(), self.degree_cutoff);
        out.terms = self
            .terms
            .iter()
            .filter(|(m, &c)| keep(m, c))
            .map(|(m, &c)| (m.clone(), c))
            .collect();
        out
    }

    /// Terms of weighted degree exactly `deg`.
    pub fn layer(&self, deg: u32) -> Polynomial {
        self.filter(|m, _| m.weighted_degree() == deg)
    }

    /// Low jet (weighted degree ≤ 2, hence `|α| ≤ 1`) and its complement.
    pub fn split_low_high(&self) -> (Polynomial, Polynomial) {
        (
            self.filter(|m, _| is_low(m)),
            self.filter(|m, _| !is_low(m)),
        )
    }

    /// Keeps `|k| ≤ Δ′`; on the quadratic normal part additionally keeps
    /// `u_a v_b` only for `|a−b| ≤ Δ′` and `u_a u_b`, `v_a v_b` only for
    /// `|a+b| ≤ Δ′`.
    pub fn truncate_fourier(&self, delta_prime: f64) -> Polynomial {
        let lat = self.lattice.clone();
        self.filter(|m, _| (m.k_norm() as f64) <= delta_prime && within_band(m, &lat, delta_prime))
    }

    pub fn max_abs(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn l1(&self) -> f64 {
        self.terms.values().map(|c| c.norm()).sum()
    }

    /// Largest coefficientwise difference.
    pub fn max_abs_diff(&self, other: &Polynomial) -> f64 {
        let mut worst: f64 = 0.0;
        for (m, &c) in &self.terms {
            worst = worst.max((c - other.coeff(m)).norm());
        }
        for (m, &c) in &other.terms {
            if !self.terms.contains_key(m) {
                worst = worst.max(c.norm());
            }
        }
        worst
    }

    /// Complex conjugate as a function on the real phase space.
    pub fn conjugate(&self) -> Polynomial {
        let mut out = Polynomial::zero(self.lattice.clone(), self.degree_cutoff);
        out.terms = self.terms.iter().map(|(m, c)| (m.conjugate(), c.conj())).collect();
        out
    }

    /// Deviation from the reality symmetry `c(−k,α,ν,μ) = conj c(k,α,μ,ν)`.
    pub fn reality_defect(&self) -> f64 {
        self.max_abs_diff(&self.conjugate())
    }

    pub fn is_real(&self, tol: f64) -> bool {
        self.reality_defect() <= tol
    }

    /// Largest ℓ¹ Fourier index present.
    pub fn max_k_norm(&self) -> u32 {
        self.terms.keys().map(|m| m.k_norm()).max().unwrap_or(0)
    }

    pub fn to_records(&self) -> PolynomialDocument {
        let lat = &self.lattice;
        let terms = self
            .terms
            .iter()
            .map(|(m, c)| TermRecord {
                k: sparse_tangential(lat, m.k.iter().map(|&x| x as i64)),
                alpha: sparse_tangential(lat, m.alpha.iter().map(|&x| x as i64)),
                mu: m.mu_iter().map(|(s, e)| (lat.normal()[s].clone(), e)).collect(),
                nu: m.nu_iter().map(|(s, e)| (lat.normal()[s].clone(), e)).collect(),
                re: c.re,
                im: c.im,
            })
            .collect();
        PolynomialDocument {
            degree_cutoff: self.degree_cutoff,
            terms,
        }
    }

    pub fn from_records(lattice: Arc<Lattice>, doc: &PolynomialDocument) -> Result<Polynomial> {
        let na = lattice.n_tangential();
        let mut p = Polynomial::zero(lattice.clone(), doc.degree_cutoff);
        let tang = |site: &Site| {
            lattice
                .tangential_index(site)
                .ok_or_else(|| Error::InvalidConfig(format!("{site:?} is not tangential")))
        };
        let norm = |site: &Site| {
            lattice
                .normal_index(site)
                .ok_or_else(|| Error::InvalidConfig(format!("{site:?} is not a retained normal site")))
        };
        for t in &doc.terms {
            let mut m = Monomial::one(na);
            for (site, e) in &t.k {
                m.k[tang(site)?] = *e as i32;
            }
            for (site, e) in &t.alpha {
                m.alpha[tang(site)?] = *e as u32;
            }
            for (site, e) in &t.mu {
                m = m.times_var(var(norm(site)?, SLOT_U), *e);
            }
            for (site, e) in &t.nu {
                m = m.times_var(var(norm(site)?, SLOT_V), *e);
            }
            p.add_term(m, C64::new(t.re, t.im));
        }
        p.prune();
        Ok(p)
    }
}

fn sparse_tangential(lat: &Lattice, dense: impl Iterator<Item = i64>) -> Vec<(Site, i64)> {
    dense
        .zip(lat.tangential())
        .filter(|(e, _)| *e != 0)
        .map(|(e, a)| (a.clone(), e))
        .collect()
}

pub fn is_low(m: &Monomial) -> bool {
    m.weighted_degree() <= 2
}

/// Band condition of the matrix truncation applied to a quadratic term.
pub fn within_band(m: &Monomial, lat: &Lattice, delta: f64) -> bool {
    if m.z_degree() != 2 || m.r_degree() != 0 {
        return true;
    }
    let mut vars = m.z.iter().flat_map(|&(x, e)| std::iter::repeat_n(x, e as usize));
    let (x, y) = (vars.next().unwrap(), vars.next().unwrap());
    let (a, b) = (&lat.normal()[var_site(x)], &lat.normal()[var_site(y)]);
    let d2 = if var_slot(x) != var_slot(y) {
        dist2(a, b)
    } else {
        let s: Vec<i32> = a.iter().zip(b).map(|(p, q)| p + q).collect();
        crate::lattice::norm2(&s)
    };
    (d2 as f64) <= delta * delta * (1.0 + 1e-12)
}

/// One serialized term; sites by lattice coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermRecord {
    pub k: Vec<(Site, i64)>,
    pub alpha: Vec<(Site, i64)>,
    pub mu: Vec<(Site, u32)>,
    pub nu: Vec<(Site, u32)>,
    pub re: f64,
    pub im: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialDocument {
    pub degree_cutoff: u32,
    pub terms: Vec<TermRecord>,
}
