//! Homogeneous forms with nonnegative coefficients in the normal variables,
//! and the suprema over weighted spheres that the tame norms are built from.
//!
//! Every sup here is over nonnegative vectors: a form with nonnegative
//! coefficients attains its modulus sup there.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::algebra::ZPower;
use crate::random::{rng, InstanceRng};

/// `Σ c_β z^β`, `c_β ≥ 0`, all terms of one degree.
#[derive(Clone, Debug, Default)]
pub struct ModForm {
    pub degree: u32,
    pub terms: Vec<(ZPower, f64)>,
}

impl ModForm {
    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.1 == 0.0)
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(p, c)| c * p.iter().map(|&(x, e)| z[x as usize].powi(e as i32)).product::<f64>())
            .sum()
    }

    pub fn grad(&self, z: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|g| *g = 0.0);
        for (p, c) in &self.terms {
            for (i, &(x, e)) in p.iter().enumerate() {
                let mut v = c * e as f64 * z[x as usize].powi(e as i32 - 1);
                for (j, &(y, f)) in p.iter().enumerate() {
                    if i != j {
                        v *= z[y as usize].powi(f as i32);
                    }
                }
                out[x as usize] += v;
            }
        }
    }

    fn flatten(&self) -> FlatForm {
        let mut f = FlatForm { start: vec![0], var: vec![], exp: vec![], coeff: vec![] };
        for (p, c) in &self.terms {
            if *c == 0.0 {
                continue;
            }
            for &(x, e) in p.iter() {
                f.var.push(x as usize);
                f.exp.push(e as i32);
            }
            f.start.push(f.var.len());
            f.coeff.push(*c);
        }
        f
    }

    /// Coefficient vector of a linear form.
    fn linear_coeffs(&self, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; n];
        for (p, v) in &self.terms {
            c[p[0].0 as usize] += v;
        }
        c
    }

    /// Symmetric matrix `S` with `z·Sz` equal to the quadratic form.
    fn quadratic_matrix(&self, n: usize) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(n, n);
        for (p, v) in &self.terms {
            if p.len() == 1 {
                let i = p[0].0 as usize;
                s[(i, i)] += v;
            } else {
                let (i, j) = (p[0].0 as usize, p[1].0 as usize);
                s[(i, j)] += v / 2.0;
                s[(j, i)] += v / 2.0;
            }
        }
        s
    }
}

/// Contiguous copy of a form for the inner loops of the ascent.
struct FlatForm {
    start: Vec<usize>,
    var: Vec<usize>,
    exp: Vec<i32>,
    coeff: Vec<f64>,
}

impl FlatForm {
    fn is_empty(&self) -> bool {
        self.coeff.is_empty()
    }

    fn eval(&self, z: &[f64]) -> f64 {
        let mut total = 0.0;
        for (t, c) in self.coeff.iter().enumerate() {
            let mut v = *c;
            for i in self.start[t]..self.start[t + 1] {
                v *= z[self.var[i]].powi(self.exp[i]);
            }
            total += v;
        }
        total
    }

    /// Adds `s ∇P(z)` to `out` and returns `P(z)`.
    fn eval_grad(&self, z: &[f64], s: f64, out: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for (t, c) in self.coeff.iter().enumerate() {
            let (a, b) = (self.start[t], self.start[t + 1]);
            let mut v = *c;
            let mut zero = false;
            for i in a..b {
                let x = z[self.var[i]];
                zero |= x == 0.0;
                v *= x.powi(self.exp[i]);
            }
            total += v;
            if s == 0.0 {
                continue;
            }
            if !zero {
                for i in a..b {
                    out[self.var[i]] += s * v * self.exp[i] as f64 / z[self.var[i]];
                }
            } else {
                for i in a..b {
                    let mut g = c * self.exp[i] as f64 * z[self.var[i]].powi(self.exp[i] - 1);
                    for j in a..b {
                        if i != j {
                            g *= z[self.var[j]].powi(self.exp[j]);
                        }
                    }
                    out[self.var[i]] += s * g;
                }
            }
        }
        total
    }
}

pub const RESTARTS: usize = 20;
const ASCENT_STEPS: usize = 150;

/// `sup { P(z) : z ≥ 0, Σ w_j² z_j² = 1 }` for a scalar form `P`; the
/// multilinear sup of the symmetrized form coincides with it.
pub fn scalar_sup(form: &ModForm, weight: &[f64], seed: u64) -> f64 {
    let n = weight.len();
    if form.is_zero() {
        return 0.0;
    }
    match form.degree {
        0 => form.terms.iter().map(|t| t.1).sum(),
        1 => {
            let c = form.linear_coeffs(n);
            c.iter().zip(weight).map(|(c, w)| (c / w).powi(2)).sum::<f64>().sqrt()
        }
        2 => {
            let s = form.quadratic_matrix(n);
            let winv = DMatrix::from_diagonal(&DVector::from_iterator(n, weight.iter().map(|w| 1.0 / w)));
            let m = &winv * s * &winv;
            m.symmetric_eigen().eigenvalues.iter().copied().fold(0.0, f64::max)
        }
        _ => {
            let flat = form.flatten();
            let ratio = |z: &[f64]| {
                let nz = weighted_l2(z, weight, 1.0);
                if nz == 0.0 {
                    0.0
                } else {
                    flat.eval(z) / nz.powi(form.degree as i32)
                }
            };
            ascend(n, seed, &ratio, &|z, g| {
                let nz2 = z.iter().zip(weight).map(|(x, w)| (x * w).powi(2)).sum::<f64>();
                g.iter_mut().for_each(|v| *v = 0.0);
                let val = flat.eval_grad(z, 1.0, g);
                for j in 0..n {
                    g[j] = if val > 0.0 { g[j] / val } else { 0.0 } - form.degree as f64 * weight[j].powi(2) * z[j] / nz2;
                }
            })
        }
    }
}

/// `‖z‖` with weights `w_j^e`.
pub fn weighted_l2(z: &[f64], weight: &[f64], e: f64) -> f64 {
    z.iter().zip(weight).map(|(x, w)| (x * w.powf(e)).powi(2)).sum::<f64>().sqrt()
}

/// Sup of `‖F(ζ⁽¹⁾,…,ζ⁽ᵍ⁾)‖_p / ‖(ζᵍ)‖_{p,1}` for a vector of forms of
/// degree `g` (output `j` weighted by `weight[j]^p`). Exact for `g ≤ 1`;
/// for `g ≥ 2` the search runs over the diagonal `ζ⁽ⁱ⁾ = ζ`.
pub fn vector_sup(forms: &[ModForm], g: u32, weight: &[f64], p: f64, seed: u64) -> f64 {
    let n = weight.len();
    if forms.iter().all(|f| f.is_zero()) {
        return 0.0;
    }
    match g {
        0 => {
            let w: Vec<f64> = forms.iter().map(|f| f.terms.iter().map(|t| t.1).sum()).collect();
            weighted_l2(&w, weight, p)
        }
        1 => {
            let rows: Vec<Vec<f64>> = forms.iter().map(|f| f.linear_coeffs(n)).collect();
            let m = DMatrix::from_fn(n, n, |j, i| rows[j][i] * weight[j].powf(p) / weight[i].powf(p));
            m.singular_values().iter().copied().fold(0.0, f64::max)
        }
        _ => {
            let wp: Vec<f64> = weight.iter().map(|w| w.powf(p)).collect();
            let flat: Vec<(usize, FlatForm)> =
                forms.iter().map(|f| f.flatten()).enumerate().filter(|(_, f)| !f.is_empty()).collect();
            let numer = |z: &[f64]| {
                flat.iter().map(|(j, f)| (f.eval(z) * wp[*j]).powi(2)).sum::<f64>().sqrt()
            };
            let ratio = |z: &[f64]| {
                let d = weighted_l2(z, weight, 1.0).powi(g as i32 - 1) * weighted_l2(z, weight, p);
                if d == 0.0 {
                    0.0
                } else {
                    numer(z) / d
                }
            };
            ascend(n, seed, &ratio, &|z, grad| {
                let out: Vec<f64> = flat.iter().map(|(_, f)| f.eval(z)).collect();
                let nn2: f64 = out.iter().zip(&flat).map(|(o, (j, _))| (o * wp[*j]).powi(2)).sum();
                let n1 = z.iter().zip(weight).map(|(x, w)| (x * w).powi(2)).sum::<f64>();
                let np = z.iter().zip(&wp).map(|(x, w)| (x * w).powi(2)).sum::<f64>();
                grad.iter_mut().for_each(|v| *v = 0.0);
                if nn2 > 0.0 {
                    for (o, (j, f)) in out.iter().zip(&flat) {
                        if *o == 0.0 {
                            continue;
                        }
                        f.eval_grad(z, o * wp[*j] * wp[*j] / nn2, grad);
                    }
                }
                for i in 0..n {
                    grad[i] -= (g as f64 - 1.0) * weight[i].powi(2) * z[i] / n1 + wp[i] * wp[i] * z[i] / np;
                }
            })
        }
    }
}

/// Exponentiated-gradient ascent of a scale-invariant ratio over the
/// positive orthant; coordinate vectors are scored and the best few plus
/// `RESTARTS` random points are refined. Returns the best value seen.
fn ascend(n: usize, seed: u64, ratio: &dyn Fn(&[f64]) -> f64, grad_log: &dyn Fn(&[f64], &mut [f64])) -> f64 {
    let mut r: InstanceRng = rng(seed);
    let mut best = 0.0f64;
    let mut starts: Vec<(f64, Vec<f64>)> = (0..n)
        .map(|i| {
            let mut z = vec![1e-3; n];
            z[i] = 1.0;
            (ratio(&z), z)
        })
        .collect();
    for (v, _) in &starts {
        best = best.max(*v);
    }
    starts.sort_by(|a, b| b.0.total_cmp(&a.0));
    starts.truncate(5);
    for _ in 0..RESTARTS {
        let z: Vec<f64> = (0..n).map(|_| r.random_range(0.01..1.0)).collect();
        starts.push((ratio(&z), z));
    }
    let mut g = vec![0.0; n];
    for (_, mut z) in starts {
        let mut val = ratio(&z);
        let mut eta = 0.5;
        for _ in 0..ASCENT_STEPS {
            grad_log(&z, &mut g);
            let trial: Vec<f64> = z.iter().zip(&g).map(|(x, gi)| x * (eta * x * gi).clamp(-20.0, 20.0).exp()).collect();
            let tv = ratio(&trial);
            if tv > val {
                let gain = tv - val;
                z = trial;
                val = tv;
                eta *= 1.5;
                if gain <= 1e-13 * val {
                    break;
                }
            } else {
                eta *= 0.3;
                if eta < 1e-10 {
                    break;
                }
            }
        }
        best = best.max(val);
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use smallvec::smallvec;

    #[test]
    fn quadratic_sup_is_top_eigenvalue() {
        // z0² + z1² + 2 z0 z1 on the unit sphere: max 2 at (1,1)/√2.
        let f = ModForm {
            degree: 2,
            terms: vec![(smallvec![(0, 2)], 1.0), (smallvec![(1, 2)], 1.0), (smallvec![(0, 1), (1, 1)], 2.0)],
        };
        assert!((scalar_sup(&f, &[1.0, 1.0], 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cubic_sup_found_by_ascent() {
        // z0 z1 z2 on the unit sphere: max 3^{-3/2}.
        let f = ModForm { degree: 3, terms: vec![(smallvec![(0, 1), (1, 1), (2, 1)], 1.0)] };
        let v = scalar_sup(&f, &[1.0, 1.0, 1.0], 1);
        assert!((v - 3f64.powf(-1.5)).abs() < 1e-6, "{v}");
    }

    #[test]
    fn linear_vector_sup_is_weighted_operator_norm() {
        // F(z) = (z1, 0): with weights (1, 2), ‖F z‖_p/‖z‖_p = 2^{-p}.
        let forms = vec![ModForm { degree: 1, terms: vec![(smallvec![(1, 1)], 1.0)] }, ModForm { degree: 1, terms: vec![] }];
        let v = vector_sup(&forms, 1, &[1.0, 2.0], 2.0, 0);
        assert!((v - 0.25).abs() < 1e-12);
    }
}
