//! Incremental Bowyer-Watson tetrahedralization.
//!
//! The convex hull is closed by "infinite" tetrahedra that share a symbolic
//! vertex at infinity, so no finite bounding tetrahedron has to be carved
//! away afterwards and the result always covers the full convex hull.
//! An infinite tet conflicts with a new point when the point sees its hull
//! face from outside; when the point is exactly coplanar with that face the
//! decision is inherited from the finite tet behind it.

use std::collections::HashMap;

use super::predicates::{in_sphere_perturbed, orient};
use super::{build_adjacency, KdTree, TetMesh, Vec3};
use crate::rng::hash_key;
use crate::{Error, Result};

const INF: u32 = u32::MAX;
const NO_TET: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
pub struct DelaunayOptions {
    /// Sites closer than this fraction of the bounding-box diagonal are
    /// rejected as coincident.
    pub min_separation: f64,
}

impl Default for DelaunayOptions {
    fn default() -> Self {
        DelaunayOptions { min_separation: 1e-9 }
    }
}

/// Delaunay tetrahedralization of the convex hull of `points`.
pub fn delaunay(points: &[Vec3]) -> Result<TetMesh> {
    delaunay_with(points, &DelaunayOptions::default())
}

pub fn delaunay_with(points: &[Vec3], opts: &DelaunayOptions) -> Result<TetMesh> {
    if points.len() < 4 {
        return Err(Error::Degenerate(format!("need at least 4 sites, got {}", points.len())));
    }
    if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::invalid("non-finite site position"));
    }
    check_separation(points, opts.min_separation)?;

    let order = spatial_order(points);
    let (seed, rest) = initial_simplex(points, &order)?;
    let mut b = Builder::new(points);
    b.init(seed);
    for (k, &p) in rest.iter().enumerate() {
        b.insert(p, k as u64)?;
    }
    let tets = b.finite_tets();
    build_adjacency(tets, points.len())
}

fn check_separation(points: &[Vec3], rel: f64) -> Result<()> {
    let diag = super::Aabb::from_points(points).diagonal();
    let tol = rel * diag;
    let tree = KdTree::build(points)?;
    for (i, p) in points.iter().enumerate() {
        let nn = tree.knn_with_distances(p, 1, Some(i));
        if let Some(&(d2, j)) = nn.first() {
            if d2.sqrt() <= tol {
                return Err(Error::Degenerate(format!("sites {i} and {j} coincide")));
            }
        }
    }
    Ok(())
}

/// Morton (Z-order) insertion order keeps point-location walks short.
fn spatial_order(points: &[Vec3]) -> Vec<u32> {
    let bb = super::Aabb::from_points(points);
    let ext = bb.extent();
    let scale = ext.x.max(ext.y).max(ext.z).max(f64::MIN_POSITIVE);
    let quant = |x: f64, lo: f64| -> u64 { (((x - lo) / scale) * ((1u64 << 21) - 1) as f64) as u64 };
    let spread = |mut x: u64| -> u64 {
        x &= 0x1f_ffff;
        x = (x | x << 32) & 0x1f00000000ffff;
        x = (x | x << 16) & 0x1f0000ff0000ff;
        x = (x | x << 8) & 0x100f00f00f00f00f;
        x = (x | x << 4) & 0x10c30c30c30c30c3;
        x = (x | x << 2) & 0x1249249249249249;
        x
    };
    let mut keyed: Vec<(u64, u32)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let code = spread(quant(p.x, bb.min.x))
                | spread(quant(p.y, bb.min.y)) << 1
                | spread(quant(p.z, bb.min.z)) << 2;
            (code, i as u32)
        })
        .collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

fn initial_simplex(points: &[Vec3], order: &[u32]) -> Result<([u32; 4], Vec<u32>)> {
    let p = |i: u32| &points[i as usize];
    let a = order[0];
    let b = order.iter().copied().find(|&i| p(i) != p(a));
    let b = b.ok_or_else(|| Error::Degenerate("all sites coincide".into()))?;
    let c = order.iter().copied().find(|&i| {
        let n = (p(b) - p(a)).cross(&(p(i) - p(a)));
        n.norm_squared() > 0.0 && !collinear_exact(p(a), p(b), p(i))
    });
    let c = c.ok_or_else(|| Error::Degenerate("all sites are collinear".into()))?;
    let d = order.iter().copied().find(|&i| orient(p(a), p(b), p(c), p(i)) != 0.0);
    let d = d.ok_or_else(|| Error::Degenerate("all sites are coplanar".into()))?;
    let seed = [a, b, c, d];
    let rest = order.iter().copied().filter(|i| !seed.contains(i)).collect();
    Ok((seed, rest))
}

fn collinear_exact(a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    use robust::{orient2d, Coord};
    let proj = |p: &Vec3, i: usize, j: usize| Coord { x: p[i], y: p[j] };
    [(0, 1), (1, 2), (0, 2)].iter().all(|&(i, j)| orient2d(proj(a, i, j), proj(b, i, j), proj(c, i, j)) == 0.0)
}

struct Builder<'a> {
    pts: &'a [Vec3],
    verts: Vec<[u32; 4]>,
    nbrs: Vec<[u32; 4]>,
    alive: Vec<bool>,
    free: Vec<u32>,
    mark: Vec<u32>,
    in_cavity: Vec<bool>,
    epoch: u32,
    last: u32,
    cavity: Vec<u32>,
    stack: Vec<u32>,
    boundary: Vec<(u32, u8)>,
    links: HashMap<(u32, u32), (u32, u8)>,
}

impl<'a> Builder<'a> {
    fn new(pts: &'a [Vec3]) -> Self {
        let cap = pts.len() * 7 + 16;
        Builder {
            pts,
            verts: Vec::with_capacity(cap),
            nbrs: Vec::with_capacity(cap),
            alive: Vec::with_capacity(cap),
            free: Vec::new(),
            mark: Vec::with_capacity(cap),
            in_cavity: Vec::with_capacity(cap),
            epoch: 0,
            last: 0,
            cavity: Vec::new(),
            stack: Vec::new(),
            boundary: Vec::new(),
            links: HashMap::new(),
        }
    }

    fn alloc(&mut self, v: [u32; 4]) -> u32 {
        if let Some(t) = self.free.pop() {
            self.verts[t as usize] = v;
            self.nbrs[t as usize] = [NO_TET; 4];
            self.alive[t as usize] = true;
            t
        } else {
            self.verts.push(v);
            self.nbrs.push([NO_TET; 4]);
            self.alive.push(true);
            self.mark.push(0);
            self.in_cavity.push(false);
            (self.verts.len() - 1) as u32
        }
    }

    fn init(&mut self, seed: [u32; 4]) {
        let [mut a, mut b, c, d] = seed;
        let p = |i: u32| &self.pts[i as usize];
        if orient(p(a), p(b), p(c), p(d)) < 0.0 {
            std::mem::swap(&mut a, &mut b);
        }
        let t0 = [a, b, c, d];
        let mut all = vec![t0];
        for i in 0..4 {
            let mut v = t0;
            v[i] = INF;
            let others: Vec<usize> = (0..4).filter(|&k| k != i).collect();
            v.swap(others[0], others[1]);
            all.push(v);
        }
        for v in &all {
            self.alloc(*v);
        }
        // Link the five initial tets by shared faces.
        for t in 0..5 {
            for s in 0..4 {
                let key = face_key(&self.verts[t], s);
                for u in 0..5 {
                    if u == t {
                        continue;
                    }
                    for r in 0..4 {
                        if face_key(&self.verts[u], r) == key {
                            self.nbrs[t][s] = u as u32;
                        }
                    }
                }
            }
        }
        self.last = 0;
    }

    #[inline]
    fn inf_slot(&self, t: u32) -> Option<usize> {
        self.verts[t as usize].iter().position(|&v| v == INF)
    }

    /// Orientation of tet `t` with its vertex at `slot` replaced by point `q`.
    #[inline]
    fn orient_sub(&self, t: u32, slot: usize, q: u32) -> f64 {
        let v = self.verts[t as usize];
        let p = |k: usize| if k == slot { &self.pts[q as usize] } else { &self.pts[v[k] as usize] };
        orient(p(0), p(1), p(2), p(3))
    }

    fn finite_conflict(&self, t: u32, q: u32) -> bool {
        let v = self.verts[t as usize];
        let pts = [
            &self.pts[v[0] as usize],
            &self.pts[v[1] as usize],
            &self.pts[v[2] as usize],
            &self.pts[v[3] as usize],
            &self.pts[q as usize],
        ];
        in_sphere_perturbed(pts, [v[0], v[1], v[2], v[3], q])
    }

    fn conflict(&self, t: u32, q: u32) -> bool {
        match self.inf_slot(t) {
            Some(s) => {
                let o = self.orient_sub(t, s, q);
                if o > 0.0 {
                    true
                } else if o < 0.0 {
                    false
                } else {
                    self.finite_conflict(self.nbrs[t as usize][s], q)
                }
            }
            None => self.finite_conflict(t, q),
        }
    }

    fn locate(&self, q: u32, salt: u64) -> Result<u32> {
        let mut t = self.last;
        let limit = 4 * self.verts.len() + 64;
        for step in 0..limit {
            if let Some(s) = self.inf_slot(t) {
                if self.orient_sub(t, s, q) > 0.0 {
                    return Ok(t);
                }
                t = self.nbrs[t as usize][s];
                continue;
            }
            let first = (hash_key(&[salt, step as u64]) & 3) as usize;
            let mut next = None;
            for i in 0..4 {
                let f = (first + i) & 3;
                if self.orient_sub(t, f, q) < 0.0 {
                    next = Some(self.nbrs[t as usize][f]);
                    break;
                }
            }
            match next {
                Some(n) => t = n,
                None => return Ok(t),
            }
        }
        // The walk should always terminate; fall back to an exhaustive search.
        (0..self.verts.len() as u32)
            .find(|&t| self.alive[t as usize] && self.conflict(t, q))
            .ok_or_else(|| Error::Numerical("point location failed".into()))
    }

    fn insert(&mut self, q: u32, salt: u64) -> Result<()> {
        let seed = self.locate(q, salt)?;
        if self.inf_slot(seed).is_none() {
            let v = self.verts[seed as usize];
            if let Some(&dup) = v.iter().find(|&&i| self.pts[i as usize] == self.pts[q as usize]) {
                return Err(Error::Degenerate(format!("sites {dup} and {q} coincide")));
            }
        }
        if !self.conflict(seed, q) {
            return Err(Error::Numerical(format!("located tet does not conflict with site {q}")));
        }

        self.epoch += 1;
        let epoch = self.epoch;
        self.cavity.clear();
        self.boundary.clear();
        self.stack.clear();
        self.mark[seed as usize] = epoch;
        self.in_cavity[seed as usize] = true;
        self.cavity.push(seed);
        self.stack.push(seed);
        while let Some(t) = self.stack.pop() {
            for f in 0..4 {
                let n = self.nbrs[t as usize][f];
                if self.mark[n as usize] == epoch {
                    if !self.in_cavity[n as usize] {
                        self.boundary.push((t, f as u8));
                    }
                    continue;
                }
                self.mark[n as usize] = epoch;
                if self.conflict(n, q) {
                    self.in_cavity[n as usize] = true;
                    self.cavity.push(n);
                    self.stack.push(n);
                } else {
                    self.in_cavity[n as usize] = false;
                    self.boundary.push((t, f as u8));
                }
            }
        }

        // Gather boundary data before cavity tets are recycled.
        let mut fresh: Vec<([u32; 4], u8, u32, u8)> = Vec::with_capacity(self.boundary.len());
        for &(t, f) in &self.boundary {
            let mut v = self.verts[t as usize];
            v[f as usize] = q;
            let n = self.nbrs[t as usize][f as usize];
            let back = self.nbrs[n as usize].iter().position(|&x| x == t).expect("asymmetric adjacency") as u8;
            fresh.push((v, f, n, back));
        }
        for &t in &self.cavity {
            self.alive[t as usize] = false;
            self.in_cavity[t as usize] = false;
            self.free.push(t);
        }
        self.links.clear();
        let mut created = 0;
        for (v, f, n, back) in fresh {
            let nt = self.alloc(v);
            self.mark[nt as usize] = 0;
            self.nbrs[nt as usize][f as usize] = n;
            self.nbrs[n as usize][back as usize] = nt;
            for k in 0..4u8 {
                if k == f {
                    continue;
                }
                let mut pair = [0u32; 2];
                let mut m = 0;
                for s in 0..4 {
                    if s != k as usize && s != f as usize {
                        pair[m] = v[s];
                        m += 1;
                    }
                }
                let key = (pair[0].min(pair[1]), pair[0].max(pair[1]));
                if let Some((ot, os)) = self.links.remove(&key) {
                    self.nbrs[nt as usize][k as usize] = ot;
                    self.nbrs[ot as usize][os as usize] = nt;
                } else {
                    self.links.insert(key, (nt, k));
                }
            }
            created = nt;
        }
        if !self.links.is_empty() {
            return Err(Error::Numerical(format!("cavity boundary of site {q} is not closed")));
        }
        self.last = created;
        Ok(())
    }

    fn finite_tets(&self) -> Vec<[u32; 4]> {
        (0..self.verts.len())
            .filter(|&t| self.alive[t] && !self.verts[t].contains(&INF))
            .map(|t| self.verts[t])
            .collect()
    }
}

fn face_key(v: &[u32; 4], slot: usize) -> [u32; 3] {
    let mut k = [0u32; 3];
    let mut m = 0;
    for (s, &x) in v.iter().enumerate() {
        if s != slot {
            k[m] = x;
            m += 1;
        }
    }
    k.sort_unstable();
    k
}
