//! Distance to the invariant torus and the long-time stability experiment:
//! start at weighted distance `δ` from the torus `{|u_a|² = q_a on A, u = 0
//! off A}`, integrate the truncated NLS flow to `δ^{−M}` and record the
//! largest distance reached.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::integrate::{Integrator, IntegratorOptions, Scheme};
use super::model::{build_nls_hamiltonian, NlsModel};
use crate::algebra::{PhaseState, Polynomial};
use crate::error::{Error, Result};
use crate::lattice::{bracket_weight, Lattice, LatticeConfig, Site};
use crate::nonresonance::ParameterPoint;
use crate::random::rng;

/// Distance of an action-angle state to `{r = 0, ζ = 0}` (actions
/// `I_a = q_a + r_a`) in the `⟨a⟩^p`-weighted norm.
pub fn torus_distance(x: &PhaseState, lat: &Lattice, q: &[f64], p: f64) -> f64 {
    let mut s = 0.0;
    for (a, site) in lat.tangential().iter().enumerate() {
        let action = (q[a] + x.r[a].re).max(0.0);
        s += ((2.0 * action).sqrt() - (2.0 * q[a]).sqrt()).powi(2) * bracket_weight(site).powf(2.0 * p);
    }
    for ((site, u), v) in lat.normal().iter().zip(&x.u).zip(&x.v) {
        let (xi, eta) = crate::algebra::to_real(*u, *v);
        s += (xi.norm_sqr() + eta.norm_sqr()) * bracket_weight(site).powf(2.0 * p);
    }
    s.sqrt()
}

/// The same distance for a field given by its Fourier coefficients on a
/// cartesian lattice; `torus` lists `(site index, q_a)`.
pub fn field_torus_distance(lat: &Lattice, u: &[C64], torus: &[(usize, f64)], p: f64) -> f64 {
    let mut s = 0.0;
    for (i, (site, c)) in lat.normal().iter().zip(u).enumerate() {
        let w = bracket_weight(site).powf(2.0 * p);
        s += match torus.iter().find(|t| t.0 == i) {
            Some(&(_, q)) => ((2.0 * c.norm_sqr()).sqrt() - (2.0 * q).sqrt()).powi(2) * w,
            None => 2.0 * c.norm_sqr() * w,
        };
    }
    s.sqrt()
}

/// `Σ_A a (q_a + r_a) + Σ_L a u_a v_a`.
pub fn momentum(x: &PhaseState, lat: &Lattice, q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; lat.d()];
    for (a, site) in lat.tangential().iter().enumerate() {
        for (o, &c) in out.iter_mut().zip(site) {
            *o += c as f64 * (q[a] + x.r[a].re);
        }
    }
    for ((site, u), v) in lat.normal().iter().zip(&x.u).zip(&x.v) {
        for (o, &c) in out.iter_mut().zip(site) {
            *o += c as f64 * (u * v).re;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Perturbation {
    /// Uniform direction on the weighted sphere of normal modes.
    Sphere,
    /// All of `δ` in one normal mode.
    PureMode,
    /// Start on the torus.
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub d: usize,
    pub tangential: Vec<Site>,
    pub cutoff: i32,
    pub model: NlsModel,
    pub p: f64,
    pub delta: f64,
    pub m: u32,
    pub dt: f64,
    pub seed: u64,
    pub perturbation: Perturbation,
    /// Site excited by [`Perturbation::PureMode`].
    pub pure_site: Option<Site>,
    /// Number of log-spaced samples kept in the report.
    pub n_samples: usize,
}

impl StabilityConfig {
    pub fn horizon(&self) -> f64 {
        self.delta.powi(-(self.m as i32))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta {} must lie in (0,1)", self.delta)));
        }
        if !(self.dt > 0.0) || self.m == 0 || self.p < 0.0 {
            return Err(Error::InvalidConfig("need dt > 0, M >= 1, p >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub seed: u64,
    pub delta: f64,
    pub m: u32,
    pub horizon: f64,
    pub steps: usize,
    pub dt: f64,
    pub initial_distance: f64,
    /// `(t, distance)` on a log-spaced grid including both ends.
    pub samples: Vec<(f64, f64)>,
    /// Largest distance over every step.
    pub max_distance: f64,
    pub verdict: bool,
    pub energy_drift: f64,
    pub mass_drift: f64,
    pub momentum_drift: f64,
}

/// Step indices `0, …, steps` on a log grid of about `n` points.
pub fn log_spaced_steps(steps: usize, n: usize) -> Vec<usize> {
    let mut out = vec![0, steps];
    if steps > 0 && n > 1 {
        let top = (steps as f64).ln();
        for i in 0..n {
            out.push((top * i as f64 / (n - 1) as f64).exp().round() as usize);
        }
    }
    out.retain(|&s| s <= steps);
    out.sort_unstable();
    out.dedup();
    out
}

/// Initial field: `√q_a e^{iθ_a}` on the tangential sites and a normal
/// perturbation of weighted size `δ`.
pub fn initial_field(cfg: &StabilityConfig, cart: &Lattice) -> Result<Vec<C64>> {
    let mut r = rng(cfg.seed);
    let mut u = vec![C64::new(0.0, 0.0); cart.n_normal()];
    let mut torus = Vec::new();
    for (a, site) in cfg.tangential.iter().enumerate() {
        let i = cart.normal_index(site).ok_or_else(|| Error::InvalidConfig(format!("tangential site {site:?} outside the box")))?;
        let theta: f64 = r.random_range(0.0..std::f64::consts::TAU);
        u[i] = C64::from_polar(cfg.model.q[a].sqrt(), theta);
        torus.push(i);
    }
    let weight = |i: usize| bracket_weight(&cart.normal()[i]).powf(cfg.p);
    let normal: Vec<usize> = (0..cart.n_normal()).filter(|i| !torus.contains(i)).collect();
    let mut pert = vec![C64::new(0.0, 0.0); cart.n_normal()];
    match cfg.perturbation {
        Perturbation::None => {}
        Perturbation::Sphere => {
            for &i in &normal {
                let (x, y): (f64, f64) = (r.sample(StandardNormal), r.sample(StandardNormal));
                pert[i] = C64::new(x, y) / weight(i);
            }
        }
        Perturbation::PureMode => {
            let site = cfg.pure_site.as_ref().ok_or_else(|| Error::InvalidConfig("pure-mode perturbation needs pure_site".into()))?;
            let i = cart.normal_index(site).filter(|i| !torus.contains(i)).ok_or_else(|| Error::InvalidConfig(format!("pure site {site:?} is not a normal site")))?;
            pert[i] = C64::from_polar(1.0, r.random_range(0.0..std::f64::consts::TAU));
        }
    }
    let size: f64 = normal.iter().map(|&i| 2.0 * pert[i].norm_sqr() * weight(i).powi(2)).sum::<f64>().sqrt();
    if size > 0.0 {
        for &i in &normal {
            u[i] += pert[i] * (cfg.delta / size);
        }
    }
    Ok(u)
}

/// The truncated NLS Hamiltonian on the cartesian lattice of the config.
pub fn cartesian_hamiltonian(cfg: &StabilityConfig) -> Result<(Arc<Lattice>, Polynomial)> {
    let cart = Arc::new(Lattice::cartesian(cfg.d, cfg.cutoff)?);
    let mut model = cfg.model.clone();
    model.q = Vec::new();
    let max_power = model.f_taylor.len().saturating_sub(1) as u32;
    model.degree_cutoff = model.degree_cutoff.max(2 * max_power).max(2);
    let (quad, f) = build_nls_hamiltonian(&model, &cart)?;
    Ok((cart.clone(), quad.to_polynomial(&cart, f.degree_cutoff()).plus(&f)))
}

pub fn stability_experiment(cfg: &StabilityConfig) -> Result<StabilityReport> {
    cfg.validate()?;
    let aa = Lattice::new(LatticeConfig { d: cfg.d, tangential: cfg.tangential.clone(), cutoff: cfg.cutoff })?;
    cfg.model.validate(&aa)?;
    let (cart, ham) = cartesian_hamiltonian(cfg)?;
    let horizon = cfg.horizon();
    let steps = (horizon / cfg.dt - 1e-9).ceil() as usize;
    let dt = horizon / steps as f64;
    let opts = IntegratorOptions { real: true, ..IntegratorOptions::new(dt, Scheme::SplitStep) };
    let integ = Integrator::new(&ham, opts)?;
    let torus: Vec<(usize, f64)> = cfg
        .tangential
        .iter()
        .zip(&cfg.model.q)
        .map(|(s, &q)| (cart.normal_index(s).unwrap(), q))
        .collect();
    let u0 = initial_field(cfg, &cart)?;
    let mut x = PhaseState::real(Vec::new(), Vec::new(), u0);
    let none: [f64; 0] = [];
    let e0 = integ.energy(&x).re;
    let mass = |x: &PhaseState| x.u.iter().zip(&x.v).map(|(u, v)| (u * v).re).sum::<f64>();
    let m0 = mass(&x);
    let p0 = momentum(&x, &cart, &none);
    let grid = log_spaced_steps(steps, cfg.n_samples);
    let mut next = 0;
    let mut report = StabilityReport {
        seed: cfg.seed,
        delta: cfg.delta,
        m: cfg.m,
        horizon,
        steps,
        dt,
        initial_distance: field_torus_distance(&cart, &x.u, &torus, cfg.p),
        samples: Vec::with_capacity(grid.len()),
        max_distance: 0.0,
        verdict: false,
        energy_drift: 0.0,
        mass_drift: 0.0,
        momentum_drift: 0.0,
    };
    integ.run(&mut x, steps, |n, t, x| {
        let dist = field_torus_distance(&cart, &x.u, &torus, cfg.p);
        report.max_distance = report.max_distance.max(dist);
        if next < grid.len() && grid[next] == n {
            next += 1;
            report.samples.push((t, dist));
            let e = integ.energy(x).re;
            report.energy_drift = report.energy_drift.max((e - e0).abs() / e0.abs().max(f64::MIN_POSITIVE));
            report.mass_drift = report.mass_drift.max((mass(x) - m0).abs() / m0.max(f64::MIN_POSITIVE));
            let p = momentum(x, &cart, &none);
            let dp = p.iter().zip(&p0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            report.momentum_drift = report.momentum_drift.max(dp);
        }
    })?;
    report.verdict = report.max_distance < 2.0 * cfg.delta;
    Ok(report)
}

/// Runs the experiment for every `(δ, seed)` pair in parallel; the result
/// order follows the input order.
pub fn stability_grid(base: &StabilityConfig, deltas: &[f64], seeds: &[u64]) -> Vec<Result<StabilityReport>> {
    let jobs: Vec<StabilityConfig> = deltas
        .iter()
        .flat_map(|&delta| {
            seeds.iter().map(move |&seed| StabilityConfig { delta, seed, ..base.clone() })
        })
        .collect();
    jobs.par_iter().map(stability_experiment).collect()
}

/// Desk-scale defaults: `d = 1`, tangential site `1`, cutoff 8, `F(y) = y²`,
/// `ε = 10⁻³`, `q = 1/2`, `p = 4`, `M = 2`.
pub fn toy_config(v_hat: ParameterPoint, eps: f64, delta: f64, seed: u64) -> StabilityConfig {
    StabilityConfig {
        d: 1,
        tangential: vec![vec![1]],
        cutoff: 8,
        model: NlsModel { v_hat, f_taylor: vec![0.0, 0.0, 1.0], eps, q: vec![0.5], degree_cutoff: 4 },
        p: 4.0,
        delta,
        m: 2,
        dt: 0.01,
        seed,
        perturbation: Perturbation::Sphere,
        pure_site: None,
        n_samples: 200,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aa_lat() -> Lattice {
        Lattice::new(LatticeConfig { d: 1, tangential: vec![vec![1]], cutoff: 3 }).unwrap()
    }

    #[test]
    fn on_torus_distance_is_zero() {
        let lat = aa_lat();
        let x = PhaseState::real(vec![1.2], vec![0.0], vec![C64::new(0.0, 0.0); lat.n_normal()]);
        assert_eq!(torus_distance(&x, &lat, &[0.7], 4.0), 0.0);
    }

    #[test]
    fn single_normal_excitation() {
        let lat = aa_lat();
        let b = lat.normal_index(&[-3]).unwrap();
        let delta = 0.01;
        let mut u = vec![C64::new(0.0, 0.0); lat.n_normal()];
        u[b] = crate::algebra::to_complex(C64::new(delta, 0.0), C64::new(0.0, 0.0)).0;
        let x = PhaseState::real(vec![0.0], vec![0.0], u);
        assert!((torus_distance(&x, &lat, &[0.7], 4.0) - delta * 81.0).abs() < 1e-15);
    }

    #[test]
    fn log_grid_covers_both_ends() {
        let g = log_spaced_steps(1000, 20);
        assert_eq!(g[0], 0);
        assert_eq!(*g.last().unwrap(), 1000);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
