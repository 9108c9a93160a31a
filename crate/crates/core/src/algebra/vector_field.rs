//! Numerical evaluation of polynomials and of their Hamiltonian vector
//! fields `X_f = (f_r, −f_φ, J∇_ζ f)`.

use num_complex::Complex64 as C64;

use super::monomial::{Monomial, SLOT_U};
use super::polynomial::Polynomial;
use crate::error::{Error, Result};

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// A point of the complexified phase space. For real points `v = conj(u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseState {
    pub phi: Vec<C64>,
    pub r: Vec<C64>,
    pub u: Vec<C64>,
    pub v: Vec<C64>,
}

/// Time derivatives `(φ̇, ṙ, u̇, v̇)`.
pub type Tangent = PhaseState;

impl PhaseState {
    pub fn zeros(na: usize, nl: usize) -> Self {
        let z = C64::new(0.0, 0.0);
        PhaseState {
            phi: vec![z; na],
            r: vec![z; na],
            u: vec![z; nl],
            v: vec![z; nl],
        }
    }

    /// Real point with `v = conj(u)`.
    pub fn real(phi: Vec<f64>, r: Vec<f64>, u: Vec<C64>) -> Self {
        let v = u.iter().map(|c| c.conj()).collect();
        PhaseState {
            phi: phi.into_iter().map(|x| C64::new(x, 0.0)).collect(),
            r: r.into_iter().map(|x| C64::new(x, 0.0)).collect(),
            u,
            v,
        }
    }

    /// `(ξ_s, η_s)` of every normal site.
    pub fn to_real_coordinates(&self) -> Vec<(C64, C64)> {
        self.u.iter().zip(&self.v).map(|(&u, &v)| to_real(u, v)).collect()
    }
}

/// `(ξ, η) = C (u, v)` with `C = (1/√2)[[1, 1], [−i, i]]`.
pub fn to_real(u: C64, v: C64) -> (C64, C64) {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    ((u + v) * h, (-I * u + I * v) * h)
}

/// Inverse of [`to_real`]: `u = (ξ + iη)/√2`, `v = (ξ − iη)/√2`.
pub fn to_complex(xi: C64, eta: C64) -> (C64, C64) {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    ((xi + I * eta) * h, (xi - I * eta) * h)
}

fn check_dims(f: &Polynomial, x: &PhaseState) -> Result<()> {
    let lat = f.lattice();
    if x.phi.len() != lat.n_tangential()
        || x.r.len() != lat.n_tangential()
        || x.u.len() != lat.n_normal()
        || x.v.len() != lat.n_normal()
    {
        return Err(Error::DimensionMismatch("phase state does not match the lattice".into()));
    }
    Ok(())
}

fn z_value(x: &PhaseState, v: u32) -> C64 {
    let s = (v / 2) as usize;
    if v % 2 == SLOT_U {
        x.u[s]
    } else {
        x.v[s]
    }
}

fn monomial_value(m: &Monomial, x: &PhaseState) -> C64 {
    let mut val = C64::new(0.0, 0.0);
    for (a, &k) in m.k.iter().enumerate() {
        val += x.phi[a] * k as f64;
    }
    let mut out = (I * val).exp();
    for (a, &e) in m.alpha.iter().enumerate() {
        out *= x.r[a].powu(e);
    }
    for &(v, e) in &m.z {
        out *= z_value(x, v).powu(e);
    }
    out
}

pub fn evaluate(f: &Polynomial, x: &PhaseState) -> Result<C64> {
    check_dims(f, x)?;
    Ok(f.iter().map(|(m, &c)| c * monomial_value(m, x)).sum())
}

/// Partial derivatives `(∂_φ f, ∂_r f, ∂_u f, ∂_v f)`.
pub fn gradient(f: &Polynomial, x: &PhaseState) -> Result<PhaseState> {
    check_dims(f, x)?;
    let na = x.phi.len();
    let mut g = PhaseState::zeros(na, x.u.len());
    for (m, &c) in f.iter() {
        for a in 0..na {
            if m.k[a] != 0 {
                g.phi[a] += c * I * m.k[a] as f64 * monomial_value(m, x);
            }
            if m.alpha[a] > 0 {
                let mut reduced = m.clone();
                reduced.alpha[a] -= 1;
                g.r[a] += c * m.alpha[a] as f64 * monomial_value(&reduced, x);
            }
        }
        for &(v, e) in &m.z {
            let mut reduced = m.clone();
            reduced.drop_var(v);
            let d = c * e as f64 * monomial_value(&reduced, x);
            let s = (v / 2) as usize;
            if v % 2 == SLOT_U {
                g.u[s] += d;
            } else {
                g.v[s] += d;
            }
        }
    }
    Ok(g)
}

/// `φ̇ = ∂_r f`, `ṙ = −∂_φ f`, `u̇ = −i ∂_v f`, `v̇ = i ∂_u f`; the last two
/// are `ξ̇ = ∂_η f`, `η̇ = −∂_ξ f` written in complex coordinates.
pub fn vector_field_eval(f: &Polynomial, x: &PhaseState) -> Result<Tangent> {
    let g = gradient(f, x)?;
    Ok(PhaseState {
        phi: g.r,
        r: g.phi.iter().map(|c| -c).collect(),
        u: g.v.iter().map(|c| -I * c).collect(),
        v: g.u.iter().map(|c| I * c).collect(),
    })
}
