//! One parameter point end to end: admissibility of `w`, the KAM iteration
//! on the NLS Hamiltonian, and the partial normal form around the torus.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::algebra::{Polynomial, PolynomialDocument};
use crate::error::{Error, Result};
use crate::kam::{choose_nf_parameters, kam_outer_iterate, partial_normal_form, KamResult, NfChoice, NormalFormResult, ScheduleParams};
use crate::lattice::{build_blocks, Lattice, LatticeConfig, Site};
use crate::nls::{build_nls_hamiltonian, NlsModel};
use crate::nonresonance::{check_melnikov_kam, frequencies, MelnikovReport, NfThresholds, ParameterPoint, SamplingBox};
use crate::quadratic::QuadraticForm;
use crate::random::rng;

/// Lattice, nonlinearity and torus of a run; `w` is supplied separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub d: usize,
    pub tangential: Vec<Site>,
    pub cutoff: i32,
    pub f_taylor: Vec<f64>,
    pub eps: f64,
    pub q: Vec<f64>,
    pub degree_cutoff: u32,
}

impl ModelSpec {
    /// `d = 1`, `A = {1}`, `F(y) = y²`, `q = 1/2`, weighted degree ≤ 5.
    pub fn toy(eps: f64, cutoff: i32) -> Self {
        ModelSpec { d: 1, tangential: vec![vec![1]], cutoff, f_taylor: vec![0.0, 0.0, 1.0], eps, q: vec![0.5], degree_cutoff: 5 }
    }

    pub fn lattice(&self) -> Result<Arc<Lattice>> {
        Ok(Arc::new(Lattice::new(LatticeConfig { d: self.d, tangential: self.tangential.clone(), cutoff: self.cutoff })?))
    }

    pub fn model(&self, v_hat: ParameterPoint) -> NlsModel {
        NlsModel { v_hat, f_taylor: self.f_taylor.clone(), eps: self.eps, q: self.q.clone(), degree_cutoff: self.degree_cutoff }
    }
}

/// Draw number `seed` from the sampling box.
pub fn draw_parameter(lat: &Lattice, bx: SamplingBox, seed: u64) -> ParameterPoint {
    ParameterPoint::sample(lat, bx, &mut rng(seed))
}

/// Melnikov conditions of the first outer round at the unperturbed
/// frequencies.
pub fn first_round_check(lat: &Lattice, w: &ParameterPoint, sched: &ScheduleParams) -> Result<MelnikovReport> {
    let q = frequencies(lat, w)?;
    let plan = sched.plan(lat)?.into_iter().next().ok_or_else(|| Error::InvalidConfig("m_max must be at least 1".into()))?;
    let dec = build_blocks(lat, plan.delta_m)?;
    check_melnikov_kam(&q, &dec, lat, plan.kappa, plan.delta_m)
}

/// First draw among `seeds` whose first-round check passes.
pub fn first_admissible(
    lat: &Lattice,
    bx: SamplingBox,
    sched: &ScheduleParams,
    seeds: impl IntoIterator<Item = u64>,
) -> Result<Option<(u64, ParameterPoint)>> {
    for seed in seeds {
        let w = draw_parameter(lat, bx, seed);
        if first_round_check(lat, &w, sched)?.passed {
            return Ok(Some((seed, w)));
        }
    }
    Ok(None)
}

pub fn nls_hamiltonian(spec: &ModelSpec, w: &ParameterPoint) -> Result<(Arc<Lattice>, QuadraticForm, Polynomial)> {
    let lat = spec.lattice()?;
    let (q, f) = build_nls_hamiltonian(&spec.model(w.clone()), &lat)?;
    Ok((lat, q, f))
}

pub fn run_kam(spec: &ModelSpec, w: &ParameterPoint, sched: &ScheduleParams) -> Result<KamResult> {
    let (_, q, f) = nls_hamiltonian(spec, w)?;
    kam_outer_iterate(&q, &f, sched)
}

/// Normal-form settings; `n` overrides `δ^{−(M+1)/(p−1)}`, `delta_t` the
/// Fourier cutoff `Δ̃` and `kappa_t` the divisor scale `κ̃`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NfSettings {
    pub delta: f64,
    pub m: u32,
    pub c0: f64,
    pub n: Option<f64>,
    pub delta_t: Option<f64>,
    pub kappa_t: Option<f64>,
}

impl NfSettings {
    pub fn new(delta: f64, m: u32) -> Self {
        NfSettings { delta, m, c0: 0.05, n: None, delta_t: None, kappa_t: None }
    }

    fn thresholds(&self, sched: &ScheduleParams, gamma_m: f64, d: usize) -> Result<(NfChoice, NfThresholds)> {
        let choice = choose_nf_parameters(self.delta, self.m, sched.p, sched.rho, gamma_m)?;
        let th = NfThresholds {
            kappa_t: self.kappa_t.unwrap_or(choice.kappa_t),
            delta_t: self.delta_t.unwrap_or(choice.delta_t),
            m: self.m,
            n: self.n.unwrap_or(choice.n),
            d,
            c0: self.c0,
        };
        Ok((choice, th))
    }
}

/// Parameters of the normal form after a KAM run: `γ` of the last round,
/// blocks at the last round's radius.
pub fn nf_thresholds(kam: &KamResult, sched: &ScheduleParams, nf: &NfSettings, d: usize) -> Result<(NfChoice, NfThresholds, f64)> {
    let last = kam.rounds.last().ok_or_else(|| Error::InvalidModel("KAM run has no completed round".into()))?;
    let (choice, th) = nf.thresholds(sched, last.plan.gamma_m, d)?;
    Ok((choice, th, last.plan.delta_m))
}

pub fn run_normal_form(kam: &KamResult, sched: &ScheduleParams, nf: &NfSettings) -> Result<(NfChoice, NormalFormResult)> {
    let lat = kam.f_inf.lattice().clone();
    let (choice, th, radius) = nf_thresholds(kam, sched, nf, lat.d())?;
    let dec = build_blocks(&lat, radius)?;
    Ok((choice, partial_normal_form(&kam.q_inf, &kam.f_inf, &th, &dec)?))
}

/// What the normal form needs from a finished KAM run, in a form that
/// survives a round trip through JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KamArtifact {
    pub w: Vec<(Site, f64)>,
    pub omega_inf: Vec<f64>,
    pub big_omega: Vec<f64>,
    /// Nonzero entries `(a, b, re, im)` of `H_∞`.
    pub h_inf: Vec<(usize, usize, f64, f64)>,
    pub energy: f64,
    pub f_inf: PolynomialDocument,
    /// `γ_m` and `Δ_m` of the last completed round.
    pub gamma_m: f64,
    pub delta_m: f64,
}

impl KamArtifact {
    pub fn new(kam: &KamResult, w: &ParameterPoint) -> Result<Self> {
        let last = kam.rounds.last().ok_or_else(|| Error::InvalidModel("KAM run has no completed round".into()))?;
        Ok(KamArtifact {
            w: w.w.iter().map(|(a, v)| (a.clone(), *v)).collect(),
            omega_inf: kam.q_inf.omega.clone(),
            big_omega: kam.q_inf.big_omega.clone(),
            h_inf: kam.q_inf.h.entries().iter().map(|(&(a, b), c)| (a, b, c.re, c.im)).collect(),
            energy: kam.energy,
            f_inf: kam.f_inf.to_records(),
            gamma_m: last.plan.gamma_m,
            delta_m: last.plan.delta_m,
        })
    }

    pub fn parameter(&self) -> ParameterPoint {
        ParameterPoint { w: self.w.iter().cloned().collect() }
    }

    pub fn quadratic(&self) -> QuadraticForm {
        let mut q = QuadraticForm::new(self.omega_inf.clone(), self.big_omega.clone());
        for &(a, b, re, im) in &self.h_inf {
            q.h.set(a, b, C64::new(re, im));
        }
        q
    }

    /// The partial normal form around the torus of this run on `lat`.
    pub fn normal_form(&self, lat: &Arc<Lattice>, sched: &ScheduleParams, nf: &NfSettings) -> Result<(NfChoice, NormalFormResult)> {
        if self.omega_inf.len() != lat.n_tangential() || self.big_omega.len() != lat.n_normal() {
            return Err(Error::InvalidModel("KAM artifact does not match the lattice".into()));
        }
        let f = Polynomial::from_records(lat.clone(), &self.f_inf)?;
        let (choice, th) = nf.thresholds(sched, self.gamma_m, lat.d())?;
        let dec = build_blocks(lat, self.delta_m)?;
        Ok((choice, partial_normal_form(&self.quadratic(), &f, &th, &dec)?))
    }
}
