//! The integrable part `⟨ω,r⟩ + ⟨u,(Ω+H)v⟩`: diagonal frequencies plus a
//! Hermitian correction coupling normal sites, and the cached per-block
//! eigen-decompositions of `Ω+H`.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::algebra::{Monomial, Polynomial};
use crate::error::{Error, Result};
use crate::lattice::{BlockDecomposition, Lattice};

/// Sparse matrix over normal-site indices. In complex coordinates the entry
/// `(a,b)` multiplies `u_a v_b`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NormalMatrix {
    entries: BTreeMap<(usize, usize), C64>,
}

impl NormalMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, a: usize, b: usize) -> C64 {
        self.entries.get(&(a, b)).copied().unwrap_or_default()
    }

    pub fn set(&mut self, a: usize, b: usize, c: C64) {
        if c == C64::new(0.0, 0.0) {
            self.entries.remove(&(a, b));
        } else {
            self.entries.insert((a, b), c);
        }
    }

    pub fn add(&mut self, a: usize, b: usize, c: C64) {
        let v = self.get(a, b) + c;
        self.set(a, b, v);
    }

    pub fn entries(&self) -> &BTreeMap<(usize, usize), C64> {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.entries.values().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn hermitian_deviation(&self) -> f64 {
        self.entries
            .iter()
            .map(|(&(a, b), &c)| (c - self.get(b, a).conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self, other: &NormalMatrix) -> NormalMatrix {
        let mut out = self.clone();
        for (&(a, b), &c) in &other.entries {
            out.add(a, b, c);
        }
        out
    }

    pub fn difference(&self, other: &NormalMatrix) -> NormalMatrix {
        let mut out = self.clone();
        for (&(a, b), &c) in &other.entries {
            out.add(a, b, -c);
        }
        out
    }

    /// Off-diagonal index pairs with nonzero entries.
    pub fn links(&self) -> Vec<(usize, usize)> {
        self.entries.keys().filter(|(a, b)| a != b).copied().collect()
    }
}

/// `h = ⟨ω, r⟩ + Σ_a Ω_a u_a v_a + Σ_{a,b} H_ab u_a v_b`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm {
    pub omega: Vec<f64>,
    pub big_omega: Vec<f64>,
    pub h: NormalMatrix,
}

impl QuadraticForm {
    pub fn new(omega: Vec<f64>, big_omega: Vec<f64>) -> Self {
        QuadraticForm {
            omega,
            big_omega,
            h: NormalMatrix::new(),
        }
    }

    /// Dense Hermitian block `(Ω+H)` restricted to the given sites.
    pub fn block_matrix(&self, sites: &[usize]) -> DMatrix<C64> {
        let n = sites.len();
        DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = (sites[i], sites[j]);
            let diag = if i == j { C64::new(self.big_omega[a], 0.0) } else { C64::new(0.0, 0.0) };
            diag + self.h.get(a, b)
        })
    }

    pub fn to_polynomial(&self, lat: &Arc<Lattice>, cutoff: u32) -> Polynomial {
        let mut p = Polynomial::zero(lat.clone(), cutoff);
        let na = lat.n_tangential();
        for (a, &w) in self.omega.iter().enumerate() {
            p.add_term(Monomial::r(na, a), C64::new(w, 0.0));
        }
        for (a, &w) in self.big_omega.iter().enumerate() {
            p.add_term(Monomial::uv(na, a, a), C64::new(w, 0.0));
        }
        for (&(a, b), &c) in self.h.entries() {
            p.add_term(Monomial::uv(na, a, b), c);
        }
        p.prune();
        p
    }

    pub fn tangential_shift(&self, other: &QuadraticForm) -> f64 {
        self.omega
            .iter()
            .zip(&other.omega)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Eigen-decomposition of every block of `Ω+H`: `B_P = U diag(λ) U*`.
#[derive(Clone, Debug)]
pub struct BlockEigen {
    pub values: Vec<Vec<f64>>,
    pub vectors: Vec<DMatrix<C64>>,
}

pub const HERMITIAN_TOL: f64 = 1e-10;

impl BlockEigen {
    pub fn new(q: &QuadraticForm, dec: &BlockDecomposition) -> Result<Self> {
        let mut values = Vec::with_capacity(dec.blocks.len());
        let mut vectors = Vec::with_capacity(dec.blocks.len());
        for block in &dec.blocks {
            let m = q.block_matrix(block);
            let scale = m.iter().map(|c| c.norm()).fold(1.0, f64::max);
            let dev = (&m - m.adjoint()).iter().map(|c| c.norm()).fold(0.0, f64::max);
            if dev > HERMITIAN_TOL * scale {
                return Err(Error::NonHermitian(dev));
            }
            let (vals, vecs) = hermitian_eigen(&m);
            values.push(vals);
            vectors.push(vecs);
        }
        Ok(BlockEigen { values, vectors })
    }
}

/// Ascending eigenvalues and matching unitary eigenvectors of a Hermitian
/// matrix.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let n = m.nrows();
    if n == 1 {
        return (vec![m[(0, 0)].re], DMatrix::from_element(1, 1, C64::new(1.0, 0.0)));
    }
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == C64::new(0.0, 0.0)));
    if diagonal {
        // exact permutation eigenvectors keep sites unmixed under degeneracy
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| m[(i, i)].re.total_cmp(&m[(j, j)].re));
        let vals = order.iter().map(|&i| m[(i, i)].re).collect();
        let vecs = DMatrix::from_fn(n, n, |r, c| if r == order[c] { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
        return (vals, vecs);
    }
    let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermitian_two_by_two_eigenvalues() {
        let h = C64::new(0.3, 0.4);
        let m = DMatrix::from_row_slice(2, 2, &[C64::new(2.0, 0.0), h, h.conj(), C64::new(2.0, 0.0)]);
        let (vals, vecs) = hermitian_eigen(&m);
        assert!((vals[0] - 1.5).abs() < 1e-12);
        assert!((vals[1] - 2.5).abs() < 1e-12);
        let recon = &vecs * DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(2, vals.iter().map(|&v| C64::new(v, 0.0)))) * vecs.adjoint();
        assert!((recon - m).iter().all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn hermitian_deviation_detects_asymmetry() {
        let mut h = NormalMatrix::new();
        h.set(0, 1, C64::new(1.0, 1.0));
        h.set(1, 0, C64::new(1.0, -1.0));
        assert_eq!(h.hermitian_deviation(), 0.0);
        h.set(1, 0, C64::new(1.0, 1.0));
        assert!(h.hermitian_deviation() > 1.0);
    }
}
