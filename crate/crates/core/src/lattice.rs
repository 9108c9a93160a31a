//! Lattice geometry: the retained box of sites, the tangential/normal
//! split, and the clustering of normal sites into equal-norm blocks.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadratic::QuadraticForm;

/// A lattice site in Z^d.
pub type Site = Vec<i32>;

pub fn norm2(a: &[i32]) -> i64 {
    a.iter().map(|&x| (x as i64) * (x as i64)).sum()
}

pub fn dist2(a: &[i32], b: &[i32]) -> i64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let t = (x - y) as i64;
            t * t
        })
        .sum()
}

/// `⟨a⟩ = max(|a|, 1)`.
pub fn bracket_weight(a: &[i32]) -> f64 {
    (norm2(a) as f64).sqrt().max(1.0)
}

fn sup_norm(a: &[i32]) -> i32 {
    a.iter().map(|x| x.abs()).max().unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub d: usize,
    pub tangential: Vec<Site>,
    pub cutoff: i32,
}

/// A validated configuration together with its derived normal set.
///
/// Normal sites are every point of the box `|a|_∞ ≤ cutoff` outside the
/// tangential set, in lexicographic order; algebra code refers to them by
/// their position in that list.
#[derive(Clone, Debug)]
pub struct Lattice {
    config: LatticeConfig,
    normal: Vec<Site>,
    normal_index: HashMap<Site, usize>,
    tangential_index: HashMap<Site, usize>,
}

impl PartialEq for Lattice {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
    }
}

impl Lattice {
    pub fn new(config: LatticeConfig) -> Result<Self> {
        if config.d == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        if config.cutoff < 0 {
            return Err(Error::InvalidConfig("lattice cutoff must be nonnegative".into()));
        }
        let mut tangential_index = HashMap::new();
        for (i, a) in config.tangential.iter().enumerate() {
            if a.len() != config.d {
                return Err(Error::DimensionMismatch(format!(
                    "tangential site {a:?} is not in Z^{}",
                    config.d
                )));
            }
            if sup_norm(a) > config.cutoff {
                return Err(Error::InvalidConfig(format!(
                    "tangential site {a:?} lies outside the retained box"
                )));
            }
            if tangential_index.insert(a.clone(), i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate tangential site {a:?}")));
            }
        }
        let normal: Vec<Site> = box_sites(config.d, config.cutoff)
            .into_iter()
            .filter(|a| !tangential_index.contains_key(a))
            .collect();
        let normal_index = normal.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        Ok(Lattice {
            config,
            normal,
            normal_index,
            tangential_index,
        })
    }

    /// All sites of the box treated as normal (no action-angle variables);
    /// the phase space used for direct integration.
    pub fn cartesian(d: usize, cutoff: i32) -> Result<Self> {
        Lattice::new(LatticeConfig {
            d,
            tangential: Vec::new(),
            cutoff,
        })
    }

    pub fn config(&self) -> &LatticeConfig {
        &self.config
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn cutoff(&self) -> i32 {
        self.config.cutoff
    }

    pub fn tangential(&self) -> &[Site] {
        &self.config.tangential
    }

    pub fn normal(&self) -> &[Site] {
        &self.normal
    }

    pub fn n_tangential(&self) -> usize {
        self.config.tangential.len()
    }

    pub fn n_normal(&self) -> usize {
        self.normal.len()
    }

    pub fn normal_index(&self, a: &[i32]) -> Option<usize> {
        self.normal_index.get(a).copied()
    }

    pub fn tangential_index(&self, a: &[i32]) -> Option<usize> {
        self.tangential_index.get(a).copied()
    }

    /// Every retained site, tangential first.
    pub fn all_sites(&self) -> Vec<Site> {
        let mut v = self.config.tangential.clone();
        v.extend(self.normal.iter().cloned());
        v
    }
}

/// Sites of the box `[-c, c]^d` in lexicographic order.
pub fn box_sites(d: usize, c: i32) -> Vec<Site> {
    let mut out = vec![Vec::new()];
    for _ in 0..d {
        let mut next = Vec::with_capacity(out.len() * (2 * c as usize + 1));
        for prefix in &out {
            for x in -c..=c {
                let mut s = prefix.clone();
                s.push(x);
                next.push(s);
            }
        }
        out = next;
    }
    out
}

/// Partition of the normal set into blocks `[a]_Δ`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDecomposition {
    pub delta: f64,
    /// Normal-site indices of each block, ascending; blocks ordered by their
    /// least member (which is also the lexicographically least site).
    pub blocks: Vec<Vec<usize>>,
    pub block_of: Vec<usize>,
    pub d_delta: f64,
}

fn within(d2: i64, delta: f64) -> bool {
    (d2 as f64) <= delta * delta * (1.0 + 1e-12)
}

pub fn build_blocks(lat: &Lattice, delta: f64) -> Result<BlockDecomposition> {
    if delta.is_nan() || delta < 0.0 {
        return Err(Error::NegativeDelta(delta));
    }
    let sites = lat.normal();
    check_boundary(lat, delta)?;

    let mut parent: Vec<usize> = (0..sites.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut shells: HashMap<i64, Vec<usize>> = HashMap::new();
    for (i, a) in sites.iter().enumerate() {
        shells.entry(norm2(a)).or_default().push(i);
    }
    for members in shells.values() {
        for (x, &i) in members.iter().enumerate() {
            for &j in &members[x + 1..] {
                if within(dist2(&sites[i], &sites[j]), delta) {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
    }
    let mut by_root: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..sites.len() {
        let r = find(&mut parent, i);
        by_root.entry(r).or_default().push(i);
    }
    let mut blocks: Vec<Vec<usize>> = by_root.into_values().collect();
    for b in &mut blocks {
        b.sort_unstable();
    }
    blocks.sort_by_key(|b| b[0]);
    let mut block_of = vec![0; sites.len()];
    for (id, b) in blocks.iter().enumerate() {
        for &i in b {
            block_of[i] = id;
        }
    }
    let mut dec = BlockDecomposition {
        delta,
        blocks,
        block_of,
        d_delta: 0.0,
    };
    dec.d_delta = block_diameter(&dec, lat);
    Ok(dec)
}

/// Rejects radii for which some retained normal site has an equal-norm
/// neighbour within Δ outside the box: such a block would be cut in half.
fn check_boundary(lat: &Lattice, delta: f64) -> Result<()> {
    let r = delta.floor() as i32;
    if r == 0 {
        return Ok(());
    }
    let c = lat.cutoff();
    let offsets = box_sites(lat.d(), r);
    for a in lat.normal() {
        if sup_norm(a) + r <= c {
            continue;
        }
        let n = norm2(a);
        for off in &offsets {
            let b: Site = a.iter().zip(off).map(|(x, y)| x + y).collect();
            if sup_norm(&b) > c && norm2(&b) == n && within(dist2(a, &b), delta) {
                return Err(Error::BoundaryCrossing {
                    inside: a.clone(),
                    outside: b,
                });
            }
        }
    }
    Ok(())
}

/// Largest Euclidean distance between two members of one block.
pub fn block_diameter(dec: &BlockDecomposition, lat: &Lattice) -> f64 {
    let sites = lat.normal();
    let mut best = 0i64;
    for b in &dec.blocks {
        for (x, &i) in b.iter().enumerate() {
            for &j in &b[x + 1..] {
                best = best.max(dist2(&sites[i], &sites[j]));
            }
        }
    }
    (best as f64).sqrt()
}

impl BlockDecomposition {
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Squared norm shared by every member of block `id`.
    pub fn block_norm2(&self, id: usize, lat: &Lattice) -> i64 {
        norm2(&lat.normal()[self.blocks[id][0]])
    }

    /// Minimal Euclidean distance between members of two blocks.
    pub fn block_distance(&self, p: usize, q: usize, lat: &Lattice) -> f64 {
        let sites = lat.normal();
        let mut best = i64::MAX;
        for &i in &self.blocks[p] {
            for &j in &self.blocks[q] {
                best = best.min(dist2(&sites[i], &sites[j]));
            }
        }
        (best as f64).sqrt()
    }

    /// Merges blocks joined by the given index pairs (transitive closure).
    pub fn coarsened(&self, links: &[(usize, usize)], lat: &Lattice) -> BlockDecomposition {
        let n = self.block_of.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let join = |p: &mut Vec<usize>, i: usize, j: usize| {
            let (ri, rj) = (find(p, i), find(p, j));
            if ri != rj {
                p[ri.max(rj)] = ri.min(rj);
            }
        };
        for b in &self.blocks {
            for w in b.windows(2) {
                join(&mut parent, w[0], w[1]);
            }
        }
        for &(i, j) in links {
            join(&mut parent, i, j);
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
        let mut blocks: Vec<Vec<usize>> = groups.into_values().collect();
        for b in &mut blocks {
            b.sort_unstable();
        }
        blocks.sort_by_key(|b| b[0]);
        let mut block_of = vec![0; n];
        for (id, b) in blocks.iter().enumerate() {
            for &i in b {
                block_of[i] = id;
            }
        }
        let mut dec = BlockDecomposition {
            delta: self.delta,
            blocks,
            block_of,
            d_delta: 0.0,
        };
        dec.d_delta = block_diameter(&dec, lat);
        dec
    }

    pub fn to_document(&self, lat: &Lattice) -> BlocksDocument {
        BlocksDocument {
            delta: self.delta,
            d_delta: self.d_delta,
            blocks: self
                .blocks
                .iter()
                .map(|b| b.iter().map(|&i| lat.normal()[i].clone()).collect())
                .collect(),
        }
    }
}

/// Serialized form of a decomposition: sites by coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlocksDocument {
    pub delta: f64,
    pub d_delta: f64,
    pub blocks: Vec<Vec<Site>>,
}

/// True iff the correction `H` of `q` is Hermitian and block diagonal over
/// `dec`, both to tolerance `tol`.
pub fn is_normal_form(q: &QuadraticForm, dec: &BlockDecomposition, tol: f64) -> Result<bool> {
    let n = dec.block_of.len();
    if q.big_omega.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "quadratic form has {} normal frequencies, decomposition covers {n} sites",
            q.big_omega.len()
        )));
    }
    for (&(a, b), &c) in q.h.entries() {
        if a >= n || b >= n {
            return Err(Error::DimensionMismatch(format!("entry ({a},{b}) outside {n} sites")));
        }
        if dec.block_of[a] != dec.block_of[b] && c.norm() > tol {
            return Ok(false);
        }
        if (c - q.h.get(b, a).conj()).norm() > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lat(d: usize, tangential: Vec<Site>, cutoff: i32) -> Lattice {
        Lattice::new(LatticeConfig { d, tangential, cutoff }).unwrap()
    }

    fn block_of_site(dec: &BlockDecomposition, l: &Lattice, a: &[i32]) -> Vec<Site> {
        let id = dec.block_of[l.normal_index(a).unwrap()];
        dec.blocks[id].iter().map(|&i| l.normal()[i].clone()).collect()
    }

    #[test]
    fn normal_set_excludes_tangential() {
        let l = lat(1, vec![vec![1]], 3);
        assert_eq!(l.n_normal(), 6);
        assert!(l.normal_index(&[1]).is_none());
        assert_eq!(l.normal()[0], vec![-3]);
    }

    #[test]
    fn rejects_tangential_outside_box() {
        assert!(Lattice::new(LatticeConfig { d: 1, tangential: vec![vec![5]], cutoff: 3 }).is_err());
    }

    #[test]
    fn zero_radius_gives_singletons() {
        let l = lat(2, vec![], 4);
        let dec = build_blocks(&l, 0.0).unwrap();
        assert!(dec.blocks.iter().all(|b| b.len() == 1));
        assert_eq!(dec.d_delta, 0.0);
    }

    #[test]
    fn radius_two_joins_unit_circle_in_plane() {
        let l = lat(2, vec![], 5);
        let dec = build_blocks(&l, 2.0).unwrap();
        let mut b = block_of_site(&dec, &l, &[1, 0]);
        b.sort();
        assert_eq!(b, vec![vec![-1, 0], vec![0, -1], vec![0, 1], vec![1, 0]]);
        assert!(dec.d_delta >= 2.0 && dec.d_delta <= 8.0);
    }

    #[test]
    fn radius_two_on_line() {
        let l = lat(1, vec![], 6);
        let dec = build_blocks(&l, 2.0).unwrap();
        assert_eq!(block_of_site(&dec, &l, &[1]).len(), 2);
        for a in 2..=6 {
            assert_eq!(block_of_site(&dec, &l, &[a]).len(), 1);
        }
    }

    #[test]
    fn block_ids_are_least_members() {
        let l = lat(2, vec![], 4);
        let dec = build_blocks(&l, 3.0).unwrap();
        for b in &dec.blocks {
            let least = b.iter().map(|&i| &l.normal()[i]).min().unwrap();
            assert_eq!(&l.normal()[b[0]], least);
        }
    }

    #[test]
    fn negative_radius_rejected() {
        let l = lat(1, vec![], 3);
        assert!(matches!(build_blocks(&l, -1.0), Err(Error::NegativeDelta(_))));
    }

    #[test]
    fn boundary_crossing_rejected() {
        // (5,5) and (7,1) share |a|² = 50 at distance √20.
        let l = lat(2, vec![], 5);
        assert!(matches!(build_blocks(&l, 4.5), Err(Error::BoundaryCrossing { .. })));
    }

    #[test]
    fn coarsening_merges_linked_blocks() {
        let l = lat(1, vec![], 3);
        let dec = build_blocks(&l, 0.0).unwrap();
        let i = l.normal_index(&[2]).unwrap();
        let j = l.normal_index(&[-2]).unwrap();
        let c = dec.coarsened(&[(i, j)], &l);
        assert_eq!(c.block_of[i], c.block_of[j]);
        assert_eq!(c.d_delta, 4.0);
    }
}
