use smallvec::SmallVec;

use crate::lattice::Lattice;

/// Normal-coordinate exponents as sorted `(variable, exponent)` pairs with
/// `variable = 2·site + slot`, slot 0 for `u`, 1 for `v`.
pub type ZPower = SmallVec<[(u32, u32); 6]>;

pub const SLOT_U: u32 = 0;
pub const SLOT_V: u32 = 1;

pub fn var(site: usize, slot: u32) -> u32 {
    2 * site as u32 + slot
}

pub fn var_site(v: u32) -> usize {
    (v / 2) as usize
}

pub fn var_slot(v: u32) -> u32 {
    v % 2
}

/// The conjugate variable (`u_a ↔ v_a`).
pub fn conj_var(v: u32) -> u32 {
    v ^ 1
}

/// Key of a term `e^{i⟨k,φ⟩} r^α u^μ v^ν`. `k` and `alpha` are dense over
/// the tangential set; normal exponents are sparse.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Monomial {
    pub k: SmallVec<[i32; 2]>,
    pub alpha: SmallVec<[u32; 2]>,
    pub z: ZPower,
}

impl Monomial {
    pub fn one(na: usize) -> Self {
        Monomial {
            k: SmallVec::from_elem(0, na),
            alpha: SmallVec::from_elem(0, na),
            z: ZPower::new(),
        }
    }

    pub fn r(na: usize, a: usize) -> Self {
        let mut m = Monomial::one(na);
        m.alpha[a] = 1;
        m
    }

    pub fn u(na: usize, s: usize) -> Self {
        Monomial::one(na).times_var(var(s, SLOT_U), 1)
    }

    pub fn v(na: usize, s: usize) -> Self {
        Monomial::one(na).times_var(var(s, SLOT_V), 1)
    }

    /// `u_a v_b`.
    pub fn uv(na: usize, a: usize, b: usize) -> Self {
        Monomial::one(na).times_var(var(a, SLOT_U), 1).times_var(var(b, SLOT_V), 1)
    }

    pub fn fourier(k: &[i32]) -> Self {
        let mut m = Monomial::one(k.len());
        m.k.copy_from_slice(k);
        m
    }

    pub fn from_parts(k: &[i32], alpha: &[u32], mu: &[(usize, u32)], nu: &[(usize, u32)]) -> Self {
        let mut m = Monomial {
            k: SmallVec::from_slice(k),
            alpha: SmallVec::from_slice(alpha),
            z: ZPower::new(),
        };
        for &(s, e) in mu {
            m = m.times_var(var(s, SLOT_U), e);
        }
        for &(s, e) in nu {
            m = m.times_var(var(s, SLOT_V), e);
        }
        m
    }

    /// Multiplies by `x^e` for a normal variable `x`.
    pub fn times_var(mut self, x: u32, e: u32) -> Self {
        if e == 0 {
            return self;
        }
        match self.z.binary_search_by_key(&x, |p| p.0) {
            Ok(i) => self.z[i].1 += e,
            Err(i) => self.z.insert(i, (x, e)),
        }
        self
    }

    pub fn exponent(&self, x: u32) -> u32 {
        match self.z.binary_search_by_key(&x, |p| p.0) {
            Ok(i) => self.z[i].1,
            Err(_) => 0,
        }
    }

    pub fn mu(&self, s: usize) -> u32 {
        self.exponent(var(s, SLOT_U))
    }

    pub fn nu(&self, s: usize) -> u32 {
        self.exponent(var(s, SLOT_V))
    }

    pub fn mu_iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.z.iter().filter(|p| var_slot(p.0) == SLOT_U).map(|p| (var_site(p.0), p.1))
    }

    pub fn nu_iter(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.z.iter().filter(|p| var_slot(p.0) == SLOT_V).map(|p| (var_site(p.0), p.1))
    }

    pub fn z_degree(&self) -> u32 {
        self.z.iter().map(|p| p.1).sum()
    }

    pub fn r_degree(&self) -> u32 {
        self.alpha.iter().sum()
    }

    /// `2|α| + |μ| + |ν|`.
    pub fn weighted_degree(&self) -> u32 {
        2 * self.r_degree() + self.z_degree()
    }

    /// ℓ¹ norm of the Fourier index.
    pub fn k_norm(&self) -> u32 {
        self.k.iter().map(|x| x.unsigned_abs()).sum()
    }

    pub fn is_phi_free(&self) -> bool {
        self.k.iter().all(|&x| x == 0)
    }

    /// `−Σ_A k_a·a + Σ_L (μ_a − ν_a)·a`.
    pub fn momentum(&self, lat: &Lattice) -> Vec<i64> {
        let mut p = vec![0i64; lat.d()];
        for (a, &ka) in lat.tangential().iter().zip(&self.k) {
            for (pi, &ai) in p.iter_mut().zip(a) {
                *pi -= ka as i64 * ai as i64;
            }
        }
        for &(x, e) in &self.z {
            let site = &lat.normal()[var_site(x)];
            let sign = if var_slot(x) == SLOT_U { 1 } else { -1 };
            for (pi, &ai) in p.iter_mut().zip(site) {
                *pi += sign * e as i64 * ai as i64;
            }
        }
        p
    }

    pub fn product(&self, other: &Monomial) -> Monomial {
        let k = self.k.iter().zip(&other.k).map(|(a, b)| a + b).collect();
        let alpha = self.alpha.iter().zip(&other.alpha).map(|(a, b)| a + b).collect();
        Monomial {
            k,
            alpha,
            z: merge_z(&self.z, &other.z),
        }
    }

    /// Image under complex conjugation of a real point: `k → −k`, `u ↔ v`.
    pub fn conjugate(&self) -> Monomial {
        let mut z: ZPower = self.z.iter().map(|&(x, e)| (conj_var(x), e)).collect();
        z.sort_unstable_by_key(|p| p.0);
        Monomial {
            k: self.k.iter().map(|x| -x).collect(),
            alpha: self.alpha.clone(),
            z,
        }
    }

    /// Removes one power of `x` (caller guarantees presence).
    pub fn drop_var(&mut self, x: u32) {
        let i = self.z.binary_search_by_key(&x, |p| p.0).expect("variable present");
        if self.z[i].1 == 1 {
            self.z.remove(i);
        } else {
            self.z[i].1 -= 1;
        }
    }

    /// Number of normal factors on sites selected by `high`.
    pub fn count_on(&self, high: &[bool]) -> u32 {
        self.z.iter().filter(|p| high[var_site(p.0)]).map(|p| p.1).sum()
    }
}

pub fn merge_z(a: &ZPower, b: &ZPower) -> ZPower {
    let mut out = ZPower::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push((a[i].0, a[i].1 + b[j].1));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}
