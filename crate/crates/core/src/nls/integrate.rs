//! Symplectic time stepping of the Hamiltonian flow of a polynomial in
//! `(φ, r, u, v)`: the implicit midpoint rule, and a Strang splitting whose
//! linear part (`ω·r + Σ B_ab u_a v_b`) is propagated exactly.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::algebra::{var_site, var_slot, Monomial, PhaseState, Polynomial, SLOT_U};
use crate::error::{Error, Result};

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ImplicitMidpoint,
    SplitStep,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorOptions {
    pub dt: f64,
    pub scheme: Scheme,
    /// Fixed-point increment tolerance, relative to the state size.
    pub tol: f64,
    pub max_iter: usize,
    /// The Hamiltonian is real and states keep `v = conj(u)`; only the `u`
    /// components of the field are evaluated.
    pub real: bool,
}

impl IntegratorOptions {
    pub fn new(dt: f64, scheme: Scheme) -> Self {
        IntegratorOptions { dt, scheme, tol: 1e-14, max_iter: 60, real: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Target {
    Phi(usize),
    R(usize),
    U(usize),
    V(usize),
}

#[derive(Clone, Debug)]
struct Term {
    target: Target,
    coeff: C64,
    k: Vec<(usize, i32)>,
    r: Vec<(usize, u32)>,
    /// Positions in `u ++ v`, repeated by exponent.
    z: SmallVec<[u32; 6]>,
}

impl Term {
    fn from_monomial(target: Target, coeff: C64, m: &Monomial, nl: usize) -> Self {
        Term {
            target,
            coeff,
            k: m.k.iter().enumerate().filter(|(_, &k)| k != 0).map(|(a, &k)| (a, k)).collect(),
            r: m.alpha.iter().enumerate().filter(|(_, &e)| e != 0).map(|(a, &e)| (a, e)).collect(),
            z: m
                .z
                .iter()
                .flat_map(|&(v, e)| {
                    let pos = if var_slot(v) == SLOT_U { var_site(v) } else { nl + var_site(v) };
                    std::iter::repeat_n(pos as u32, e as usize)
                })
                .collect(),
        }
    }

    fn value(&self, x: &PhaseState, zv: &[C64]) -> C64 {
        let mut out = self.coeff;
        if !self.k.is_empty() {
            let arg: C64 = self.k.iter().map(|&(a, k)| x.phi[a] * k as f64).sum();
            out *= (I * arg).exp();
        }
        for &(a, e) in &self.r {
            out *= x.r[a].powu(e);
        }
        for &i in &self.z {
            out *= zv[i as usize];
        }
        out
    }
}

fn concat(x: &PhaseState) -> Vec<C64> {
    x.u.iter().chain(&x.v).copied().collect()
}

/// A polynomial flattened for repeated numerical evaluation, together with
/// its Hamiltonian vector field.
#[derive(Clone, Debug)]
pub struct CompiledField {
    na: usize,
    nl: usize,
    value: Vec<Term>,
    field: Vec<Term>,
    /// Number of leading `field` terms that do not target `v`.
    n_not_v: usize,
}

impl CompiledField {
    pub fn new(f: &Polynomial) -> Self {
        let lat = f.lattice();
        let (na, nl) = (lat.n_tangential(), lat.n_normal());
        let mut value = Vec::with_capacity(f.len());
        let mut field = Vec::new();
        for (m, &c) in f.iter() {
            value.push(Term::from_monomial(Target::Phi(0), c, m, nl));
            for a in 0..na {
                if m.k[a] != 0 {
                    // ṙ = −∂_φ f
                    field.push(Term::from_monomial(Target::R(a), -c * I * m.k[a] as f64, m, nl));
                }
                if m.alpha[a] > 0 {
                    let mut red = m.clone();
                    red.alpha[a] -= 1;
                    field.push(Term::from_monomial(Target::Phi(a), c * m.alpha[a] as f64, &red, nl));
                }
            }
            for &(v, e) in &m.z {
                let mut red = m.clone();
                red.drop_var(v);
                let d = c * e as f64;
                // u̇ = −i ∂_v f, v̇ = i ∂_u f
                let t = if var_slot(v) == SLOT_U { Target::V(var_site(v)) } else { Target::U(var_site(v)) };
                let d = if var_slot(v) == SLOT_U { I * d } else { -I * d };
                field.push(Term::from_monomial(t, d, &red, nl));
            }
        }
        field.sort_by_key(|t| matches!(t.target, Target::V(_)));
        let n_not_v = field.iter().filter(|t| !matches!(t.target, Target::V(_))).count();
        CompiledField { na, nl, value, field, n_not_v }
    }

    pub fn value(&self, x: &PhaseState) -> C64 {
        let zv = concat(x);
        self.value.iter().map(|t| t.value(x, &zv)).sum()
    }

    pub fn field(&self, x: &PhaseState, out: &mut PhaseState) {
        self.field_impl(x, out, false)
    }

    /// Field of a real Hamiltonian at a real point: `v̇ = conj(u̇)`.
    pub fn real_field(&self, x: &PhaseState, out: &mut PhaseState) {
        self.field_impl(x, out, true)
    }

    fn field_impl(&self, x: &PhaseState, out: &mut PhaseState, real: bool) {
        let zero = C64::new(0.0, 0.0);
        for v in [&mut out.phi, &mut out.r, &mut out.u, &mut out.v] {
            v.iter_mut().for_each(|c| *c = zero);
        }
        let zv = concat(x);
        let n = if real { self.n_not_v } else { self.field.len() };
        for t in &self.field[..n] {
            let val = t.value(x, &zv);
            match t.target {
                Target::Phi(a) => out.phi[a] += val,
                Target::R(a) => out.r[a] += val,
                Target::U(s) => out.u[s] += val,
                Target::V(s) => out.v[s] += val,
            }
        }
        if real {
            for (v, u) in out.v.iter_mut().zip(&out.u) {
                *v = u.conj();
            }
        }
    }

    fn zeros(&self) -> PhaseState {
        PhaseState::zeros(self.na, self.nl)
    }
}

/// Exact flow of `ω·r + Σ B_ab u_a v_b` over a fixed time step.
#[derive(Clone, Debug)]
struct LinearFlow {
    omega: Vec<f64>,
    prop_u: DMatrix<C64>,
    prop_v: DMatrix<C64>,
    tau: f64,
}

impl LinearFlow {
    fn new(omega: Vec<f64>, b: &DMatrix<C64>, tau: f64) -> Self {
        // u̇ = −i Bᵀ u, v̇ = i B v
        let diagonal = (0..b.nrows()).all(|i| (0..b.ncols()).all(|j| i == j || b[(i, j)] == C64::new(0.0, 0.0)));
        let (prop_u, prop_v) = if diagonal {
            let rot = |s: f64| DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| if i == j { (C64::new(0.0, s * tau) * b[(i, i)]).exp() } else { C64::new(0.0, 0.0) });
            (rot(-1.0), rot(1.0))
        } else {
            ((b.transpose() * C64::new(0.0, -tau)).exp(), (b * C64::new(0.0, tau)).exp())
        };
        LinearFlow { omega, prop_u, prop_v, tau }
    }

    fn apply(&self, x: &mut PhaseState) {
        for (p, w) in x.phi.iter_mut().zip(&self.omega) {
            *p += w * self.tau;
        }
        if !x.u.is_empty() {
            let u = &self.prop_u * DVector::from_column_slice(&x.u);
            let v = &self.prop_v * DVector::from_column_slice(&x.v);
            x.u.copy_from_slice(u.as_slice());
            x.v.copy_from_slice(v.as_slice());
        }
    }
}

/// Splits `f` into its linear-flow part (`k = 0` terms `r_a` and `u_a v_b`)
/// and the remainder.
fn split_linear(f: &Polynomial) -> (Vec<f64>, DMatrix<C64>, Polynomial) {
    let lat = f.lattice();
    let (na, nl) = (lat.n_tangential(), lat.n_normal());
    let mut omega = vec![0.0; na];
    let mut b = DMatrix::zeros(nl, nl);
    let rest = f.filter(|m, c| {
        if m.k.iter().any(|&k| k != 0) {
            return true;
        }
        if m.z.is_empty() && m.r_degree() == 1 && c.im == 0.0 {
            let a = m.alpha.iter().position(|&e| e == 1).unwrap();
            omega[a] += c.re;
            return false;
        }
        if m.r_degree() == 0 && m.z_degree() == 2 {
            let u = m.mu_iter().next();
            let v = m.nu_iter().next();
            if let (Some((a, 1)), Some((bb, 1))) = (u, v) {
                b[(a, bb)] += c;
                return false;
            }
        }
        true
    });
    (omega, b, rest)
}

fn max_norm(x: &PhaseState) -> f64 {
    [&x.phi, &x.r, &x.u, &x.v].iter().flat_map(|v| v.iter()).map(|c| c.norm()).fold(0.0, f64::max)
}

fn axpy(out: &mut PhaseState, x: &PhaseState, s: f64, y: &PhaseState) {
    for (o, (a, b)) in [(&mut out.phi, (&x.phi, &y.phi)), (&mut out.r, (&x.r, &y.r)), (&mut out.u, (&x.u, &y.u)), (&mut out.v, (&x.v, &y.v))] {
        for (oi, (ai, bi)) in o.iter_mut().zip(a.iter().zip(b.iter())) {
            *oi = ai + bi * s;
        }
    }
}

fn diff_norm(x: &PhaseState, y: &PhaseState) -> f64 {
    [(&x.phi, &y.phi), (&x.r, &y.r), (&x.u, &y.u), (&x.v, &y.v)]
        .iter()
        .flat_map(|(a, b)| a.iter().zip(b.iter()))
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max)
}

pub struct Integrator {
    opts: IntegratorOptions,
    full: CompiledField,
    nonlinear: CompiledField,
    half: Option<LinearFlow>,
}

impl Integrator {
    pub fn new(f: &Polynomial, opts: IntegratorOptions) -> Result<Self> {
        if !(opts.dt > 0.0 && opts.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("time step {} must be positive", opts.dt)));
        }
        let full = CompiledField::new(f);
        let (nonlinear, half) = match opts.scheme {
            Scheme::ImplicitMidpoint => (full.clone(), None),
            Scheme::SplitStep => {
                let (omega, b, rest) = split_linear(f);
                (CompiledField::new(&rest), Some(LinearFlow::new(omega, &b, opts.dt / 2.0)))
            }
        };
        Ok(Integrator { opts, full, nonlinear, half })
    }

    pub fn options(&self) -> &IntegratorOptions {
        &self.opts
    }

    pub fn energy(&self, x: &PhaseState) -> C64 {
        self.full.value(x)
    }

    /// Implicit midpoint step of the nonlinear field by fixed-point iteration.
    fn midpoint(&self, x: &mut PhaseState, t: f64) -> Result<()> {
        let dt = self.opts.dt;
        let f = &self.nonlinear;
        let eval = |x: &PhaseState, out: &mut PhaseState| if self.opts.real { f.real_field(x, out) } else { f.field(x, out) };
        let mut k = f.zeros();
        eval(x, &mut k);
        let mut next = f.zeros();
        axpy(&mut next, x, dt, &k);
        let mut mid = f.zeros();
        let mut trial = f.zeros();
        let mut increment = f64::INFINITY;
        for _ in 0..self.opts.max_iter {
            axpy(&mut mid, x, 1.0, &next);
            for v in [&mut mid.phi, &mut mid.r, &mut mid.u, &mut mid.v] {
                v.iter_mut().for_each(|c| *c *= 0.5);
            }
            eval(&mid, &mut k);
            axpy(&mut trial, x, dt, &k);
            increment = diff_norm(&trial, &next);
            std::mem::swap(&mut trial, &mut next);
            if !increment.is_finite() {
                break;
            }
            if increment <= self.opts.tol * (1.0 + max_norm(&next)) {
                *x = next;
                return Ok(());
            }
        }
        Err(Error::IntegratorNonConvergence { t, increment })
    }

    pub fn step(&self, x: &mut PhaseState, t: f64) -> Result<()> {
        match &self.half {
            None => self.midpoint(x, t),
            Some(lin) => {
                lin.apply(x);
                self.midpoint(x, t)?;
                lin.apply(x);
                Ok(())
            }
        }
    }

    /// Advances `steps` steps from `x`, calling `observe(step, t, state)`
    /// at the start and after every step.
    pub fn run(&self, x: &mut PhaseState, steps: usize, mut observe: impl FnMut(usize, f64, &PhaseState)) -> Result<()> {
        observe(0, 0.0, x);
        for n in 0..steps {
            let t = n as f64 * self.opts.dt;
            self.step(x, t)?;
            observe(n + 1, (n + 1) as f64 * self.opts.dt, x);
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<PhaseState>,
    /// Largest `|H(t) − H(0)| / |H(0)|` over the samples.
    pub energy_drift: f64,
    pub steps: usize,
}

/// Integrates the flow of `f` to `t_end` with a step no larger than `dt`
/// (shrunk so the horizon is hit exactly), keeping `n_samples + 1` equally
/// spaced states.
pub fn integrate(f: &Polynomial, z0: &PhaseState, dt: f64, t_end: f64, scheme: Scheme, n_samples: usize) -> Result<Trajectory> {
    if !(t_end >= 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidConfig("need dt > 0 and t_end >= 0".into()));
    }
    let steps = ((t_end / dt) - 1e-9).ceil().max(0.0) as usize;
    let dt_eff = if steps == 0 { dt } else { t_end / steps as f64 };
    let integ = Integrator::new(f, IntegratorOptions::new(dt_eff, scheme))?;
    let every = (steps / n_samples.max(1)).max(1);
    let mut traj = Trajectory { times: Vec::new(), states: Vec::new(), energy_drift: 0.0, steps };
    let e0 = integ.energy(z0);
    let mut x = z0.clone();
    integ.run(&mut x, steps, |n, t, x| {
        if n % every == 0 || n == steps {
            let e = integ.energy(x);
            traj.energy_drift = traj.energy_drift.max((e - e0).norm() / e0.norm().max(f64::MIN_POSITIVE));
            traj.times.push(t);
            traj.states.push(x.clone());
        }
    })?;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::vector_field_eval;
    use crate::lattice::{Lattice, LatticeConfig};
    use std::sync::Arc;

    fn lat() -> Arc<Lattice> {
        Arc::new(Lattice::new(LatticeConfig { d: 1, tangential: vec![vec![1]], cutoff: 1 }).unwrap())
    }

    #[test]
    fn compiled_field_matches_direct_evaluation() {
        let l = lat();
        let mut r = crate::random::rng(5);
        let f = crate::random::random_polynomial(&l, crate::random::MonomialShape { max_degree: 4, max_k: 2 }, 30, 5, &mut r);
        let x = PhaseState {
            phi: vec![C64::new(0.3, 0.01)],
            r: vec![C64::new(0.2, -0.1)],
            u: vec![C64::new(0.1, 0.2), C64::new(-0.3, 0.05)],
            v: vec![C64::new(0.4, -0.2), C64::new(0.1, 0.1)],
        };
        let c = CompiledField::new(&f);
        let mut out = c.zeros();
        c.field(&x, &mut out);
        let want = vector_field_eval(&f, &x).unwrap();
        assert!(diff_norm(&out, &want) < 1e-13);
        assert!((c.value(&x) - crate::algebra::evaluate(&f, &x).unwrap()).norm() < 1e-13);
    }

    #[test]
    fn real_field_matches_full_field_at_real_points() {
        let l = lat();
        let mut r = crate::random::rng(6);
        let f = crate::random::realify(&crate::random::random_polynomial(&l, crate::random::MonomialShape { max_degree: 4, max_k: 2 }, 30, 5, &mut r));
        let x = PhaseState::real(vec![0.3], vec![0.2], vec![C64::new(0.1, 0.2), C64::new(-0.3, 0.05)]);
        let c = CompiledField::new(&f);
        let (mut a, mut b) = (c.zeros(), c.zeros());
        c.field(&x, &mut a);
        c.real_field(&x, &mut b);
        assert!(diff_norm(&a, &b) < 1e-14);
    }

    #[test]
    fn harmonic_mode_has_period_pi() {
        let l = lat();
        let f = Polynomial::from_terms(l, 2, [(Monomial::uv(1, 0, 0), C64::new(2.0, 0.0))]);
        let z0 = PhaseState::real(vec![0.0], vec![0.0], vec![C64::new(0.3, -0.4), C64::new(0.0, 0.0)]);
        // exact linear propagation, and the O(dt²) phase lag of the Cayley map
        for (scheme, tol) in [(Scheme::SplitStep, 1e-8), (Scheme::ImplicitMidpoint, 2e-6)] {
            let tr = integrate(&f, &z0, 1e-3, std::f64::consts::PI, scheme, 1).unwrap();
            let end = tr.states.last().unwrap();
            assert!(diff_norm(end, &z0) < tol, "{scheme:?}: {}", diff_norm(end, &z0));
        }
    }

    #[test]
    fn nonconvergence_reported() {
        let l = lat();
        let f = Polynomial::from_terms(l, 4, [(Monomial::uv(1, 0, 0).product(&Monomial::uv(1, 0, 0)), C64::new(1e3, 0.0))]);
        let z0 = PhaseState::real(vec![0.0], vec![0.0], vec![C64::new(3.0, 0.0), C64::new(0.0, 0.0)]);
        let mut opts = IntegratorOptions::new(0.5, Scheme::ImplicitMidpoint);
        opts.max_iter = 5;
        let integ = Integrator::new(&f, opts).unwrap();
        let mut x = z0;
        let res = integ.step(&mut x, 0.0);
        assert!(matches!(res, Err(Error::IntegratorNonConvergence { .. })), "{res:?} {x:?}");
    }
}
