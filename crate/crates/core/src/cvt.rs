//! SDF-aware centroidal Voronoi tessellation optimized through sampled
//! directional distances, without constructing Voronoi cells.
//!
//! For a site `s_i` and direction `r`, the distance to its cell boundary is
//! approximated by the nearest hit of the ray `(s_i, r)` against the bisector
//! planes of its K nearest neighbors. A cell is centroidal-like when these
//! distances balance in opposite directions. Bisectors of neighbors whose SDF
//! has the opposite sign are shifted to the linear zero crossing, so sites
//! straddle the surface symmetrically.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geom::{Aabb, KdTree, KnnTable, SiteKind, SiteSet, Vec3};
use crate::optim::Adam;
use crate::rng::KeyedRng;
use crate::{Error, Result};

/// Default Adam step as a fraction of the mean site spacing. Larger steps
/// (0.1 and up) stall or diverge on jittered lattices.
pub const DEFAULT_LR_FACTOR: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvtConfig {
    pub n_neighbors: usize,
    pub n_iterations: usize,
    pub knn_refresh_period: usize,
    /// Adam step size; `None` uses 0.02 × mean nearest-neighbor spacing.
    pub learning_rate: Option<f64>,
    pub rng_seed: u64,
    /// Step size multiplier reached at the last iteration (exponential decay).
    pub lr_final_ratio: f64,
    /// Region the tessellation is restricted to. Its faces act as cell walls
    /// for sites on the hull. `None` uses the site bounds enlarged by half the
    /// mean spacing.
    pub domain: Option<Aabb>,
}

impl Default for CvtConfig {
    fn default() -> Self {
        CvtConfig {
            n_neighbors: 24,
            n_iterations: 300,
            knn_refresh_period: 100,
            learning_rate: None,
            rng_seed: 0,
            lr_final_ratio: 1.0,
            domain: None,
        }
    }
}

impl CvtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_neighbors < 4 {
            return Err(Error::invalid("cvt n_neighbors must be at least 4"));
        }
        if self.n_iterations == 0 || self.knn_refresh_period == 0 {
            return Err(Error::invalid("cvt iteration counts must be at least 1"));
        }
        if !(self.lr_final_ratio > 0.0 && self.lr_final_ratio <= 1.0) {
            return Err(Error::invalid("cvt lr_final_ratio must be in (0, 1]"));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid("cvt learning rate must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionBasis {
    pub e: [Vec3; 3],
}

/// Cartesian basis rotated by `phi` about z, then by `theta` about y.
pub fn random_basis(theta: f64, phi: f64) -> DirectionBasis {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    // columns of Ry(theta) * Rz(phi)
    let e0 = Vec3::new(ct * cp, sp, -st * cp);
    let e1 = Vec3::new(-ct * sp, cp, st * sp);
    let e2 = Vec3::new(st, 0.0, ct);
    DirectionBasis { e: [e0, e1, e2] }
}

/// Per-site, per-iteration angles: theta in [0, pi), phi in [0, 2 pi).
pub fn sample_angles(seed: u64, iteration: u64, site: u64) -> (f64, f64) {
    let mut rng = KeyedRng::new(&[seed, iteration, site]);
    let theta = rng.uniform() * std::f64::consts::PI;
    let phi = rng.uniform() * std::f64::consts::TAU;
    (theta, phi)
}

#[inline]
fn split_ratio(sdf_i: f64, sdf_j: f64) -> f64 {
    if sdf_i * sdf_j < 0.0 {
        sdf_i / (sdf_i - sdf_j)
    } else {
        0.5
    }
}

/// Distance from `s_i` along `r` to the (zero-crossing shifted) bisector
/// plane of `(s_i, s_j)`, or `None` when the positive half-line misses it.
pub fn bisector_hit(s_i: &Vec3, s_j: &Vec3, sdf_i: f64, sdf_j: f64, r: &Vec3) -> Option<f64> {
    let d = s_j - s_i;
    let rd = r.dot(&d);
    if rd <= 0.0 {
        return None;
    }
    let t = split_ratio(sdf_i, sdf_j) * d.norm_squared() / rd;
    (t > 0.0).then_some(t)
}

/// Minimum bisector hit over `neighbors`, or `d_max` when nothing is hit.
pub fn directional_distance(i: usize, r: &Vec3, neighbors: &[u32], positions: &[Vec3], sdf: &[f64], d_max: f64) -> f64 {
    let s_i = &positions[i];
    neighbors
        .iter()
        .filter_map(|&j| bisector_hit(s_i, &positions[j as usize], sdf[i], sdf[j as usize], r))
        .fold(d_max, f64::min)
}

/// Directional distance with the domain box acting as additional planes.
pub fn directional_distance_bounded(
    i: usize,
    r: &Vec3,
    neighbors: &[u32],
    positions: &[Vec3],
    sdf: &[f64],
    domain: &Aabb,
    d_max: f64,
) -> f64 {
    let base = directional_distance(i, r, neighbors, positions, sdf, d_max);
    wall_hit(&positions[i], r, domain).map_or(base, |(t, _)| base.min(t))
}

fn wall_hit(s: &Vec3, r: &Vec3, domain: &Aabb) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for a in 0..3 {
        if r[a] == 0.0 {
            continue;
        }
        let bound = if r[a] > 0.0 { domain.max[a] } else { domain.min[a] };
        let t = ((bound - s[a]) / r[a]).max(0.0);
        if best.is_none_or(|(b, _)| t < b) {
            best = Some((t, a));
        }
    }
    best
}

/// Frozen inputs of one loss evaluation.
#[derive(Debug, Clone, Copy)]
pub struct CvtProblem<'a> {
    pub positions: &'a [Vec3],
    pub kinds: &'a [SiteKind],
    pub sdf: &'a [f64],
    pub knn: &'a KnnTable,
    pub domain: Option<&'a Aabb>,
    pub d_max: f64,
}

#[derive(Clone, Copy)]
enum Hit {
    Miss,
    Wall { axis: usize, r_axis: f64 },
    Site { j: u32, dt_dsj: Vec3 },
}

struct SiteTerm {
    loss: f64,
    own: Vec3,
    others: [(u32, Vec3); 6],
    n_others: usize,
}

impl<'a> CvtProblem<'a> {
    /// Six directional hits `[+e0, -e0, +e1, -e1, +e2, -e2]` for site `i`.
    fn hits(&self, i: usize, basis: &DirectionBasis) -> [(f64, Hit); 6] {
        let s_i = self.positions[i];
        let sdf_i = self.sdf[i];
        let mut best_t = [self.d_max; 6];
        let mut best_j = [u32::MAX; 6];
        for &j in self.knn.neighbors(i) {
            let d = self.positions[j as usize] - s_i;
            let n2 = d.norm_squared();
            let kn2 = split_ratio(sdf_i, self.sdf[j as usize]) * n2;
            for (a, e) in basis.e.iter().enumerate() {
                let ed = e.dot(&d);
                if ed == 0.0 {
                    continue;
                }
                let slot = if ed > 0.0 { 2 * a } else { 2 * a + 1 };
                let t = kn2 / ed.abs();
                if t > 0.0 && t < best_t[slot] {
                    best_t[slot] = t;
                    best_j[slot] = j;
                }
            }
        }
        let mut best = [(self.d_max, Hit::Miss); 6];
        for slot in 0..6 {
            let j = best_j[slot];
            if j == u32::MAX {
                continue;
            }
            let r = if slot % 2 == 0 { basis.e[slot / 2] } else { -basis.e[slot / 2] };
            let d = self.positions[j as usize] - s_i;
            let k = split_ratio(sdf_i, self.sdf[j as usize]);
            let t = best_t[slot];
            best[slot] = (t, Hit::Site { j, dt_dsj: (2.0 * k * d - t * r) / r.dot(&d) });
        }
        if let Some(dom) = self.domain {
            for (a, e) in basis.e.iter().enumerate() {
                for (slot, r) in [(2 * a, *e), (2 * a + 1, -*e)] {
                    if let Some((t, axis)) = wall_hit(&s_i, &r, dom) {
                        if t < best[slot].0 {
                            best[slot] = (t, Hit::Wall { axis, r_axis: r[axis] });
                        }
                    }
                }
            }
        }
        best
    }

    fn site_term(&self, i: usize, basis: &DirectionBasis) -> SiteTerm {
        let hits = self.hits(i, basis);
        let mut term = SiteTerm { loss: 0.0, own: Vec3::zeros(), others: [(0, Vec3::zeros()); 6], n_others: 0 };
        for a in 0..3 {
            let diff = hits[2 * a].0 - hits[2 * a + 1].0;
            term.loss += 0.5 * diff * diff;
            for (slot, w) in [(2 * a, diff), (2 * a + 1, -diff)] {
                match hits[slot].1 {
                    Hit::Miss => {}
                    Hit::Wall { axis, r_axis } => {
                        // t = (bound - s[axis]) / r[axis]
                        term.own[axis] -= w / r_axis;
                    }
                    Hit::Site { j, dt_dsj } => {
                        term.own -= w * dt_dsj;
                        term.others[term.n_others] = (j, w * dt_dsj);
                        term.n_others += 1;
                    }
                }
            }
        }
        term
    }

    /// Loss and gradient with caller-supplied per-site angles.
    pub fn loss_and_grad_with(&self, angles: impl Fn(usize) -> (f64, f64) + Sync) -> (f64, Vec<Vec3>) {
        let n = self.positions.len();
        let mut grad = vec![Vec3::zeros(); n];
        let mut loss = 0.0;
        const CHUNK: usize = 4096;
        let mut terms: Vec<Option<SiteTerm>> = Vec::with_capacity(CHUNK);
        for start in (0..n).step_by(CHUNK) {
            let end = (start + CHUNK).min(n);
            (start..end)
                .into_par_iter()
                .map(|i| {
                    (self.kinds[i] == SiteKind::Free).then(|| {
                        let (theta, phi) = angles(i);
                        self.site_term(i, &random_basis(theta, phi))
                    })
                })
                .collect_into_vec(&mut terms);
            for (off, term) in terms.iter().enumerate() {
                let Some(term) = term else { continue };
                loss += term.loss;
                grad[start + off] += term.own;
                for &(j, g) in &term.others[..term.n_others] {
                    grad[j as usize] += g;
                }
            }
        }
        for (g, kind) in grad.iter_mut().zip(self.kinds) {
            if *kind == SiteKind::Camera {
                *g = Vec3::zeros();
            }
        }
        (loss, grad)
    }

    /// Loss and gradient with fresh angles keyed on `(seed, iteration, site)`.
    pub fn loss_and_grad(&self, seed: u64, iteration: u64) -> (f64, Vec<Vec3>) {
        self.loss_and_grad_with(|i| sample_angles(seed, iteration, i as u64))
    }
}

/// Convenience wrapper over [`CvtProblem::loss_and_grad`].
pub fn cvt_loss_and_grad(
    sites: &SiteSet,
    sdf: &[f64],
    knn: &KnnTable,
    domain: Option<&Aabb>,
    seed: u64,
    iteration: u64,
) -> Result<(f64, Vec<Vec3>)> {
    crate::error::check_len(sites.len(), sdf.len())?;
    crate::error::check_len(sites.len(), knn.len())?;
    let problem = CvtProblem {
        positions: &sites.positions,
        kinds: &sites.kinds,
        sdf,
        knn,
        domain,
        d_max: sites.bounds().diagonal(),
    };
    Ok(problem.loss_and_grad(seed, iteration))
}

/// Mean nearest-neighbor distance over free sites.
pub fn mean_spacing(sites: &SiteSet) -> Result<f64> {
    let tree = KdTree::build(&sites.positions)?;
    let d: Vec<f64> = (0..sites.len())
        .into_par_iter()
        .filter(|&i| !sites.is_camera(i))
        .map(|i| tree.knn_with_distances(&sites.positions[i], 1, Some(i)).first().map_or(0.0, |x| x.0.sqrt()))
        .collect();
    if d.is_empty() {
        return Err(Error::invalid("no free sites"));
    }
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvtReport {
    /// Loss before each step, followed by the loss after the final step.
    pub losses: Vec<f64>,
    pub learning_rate: f64,
}

pub fn optimize_cvt(sites: &SiteSet, sdf: &[f64], cfg: &CvtConfig) -> Result<(SiteSet, CvtReport)> {
    optimize_cvt_with(sites, sdf, cfg, |_, _, _| {})
}

/// Runs the optimization, calling `observe(iteration, loss, positions)` before
/// every step and once after the last one.
pub fn optimize_cvt_with(
    sites: &SiteSet,
    sdf: &[f64],
    cfg: &CvtConfig,
    mut observe: impl FnMut(usize, f64, &[Vec3]),
) -> Result<(SiteSet, CvtReport)> {
    cfg.validate()?;
    crate::error::check_len(sites.len(), sdf.len())?;
    if sites.len() <= cfg.n_neighbors {
        return Err(Error::invalid(format!(
            "cvt needs more than {} sites, got {}",
            cfg.n_neighbors,
            sites.len()
        )));
    }
    let spacing = mean_spacing(sites)?;
    let lr = cfg.learning_rate.unwrap_or(DEFAULT_LR_FACTOR * spacing);
    let domain = cfg.domain.unwrap_or_else(|| {
        let b = sites.bounds();
        let pad = Vec3::repeat(0.5 * spacing);
        Aabb::new(b.min - pad, b.max + pad)
    });
    let d_max = domain.diagonal().max(sites.bounds().diagonal());

    let mut positions = sites.positions.clone();
    let mask: Vec<bool> = sites.kinds.iter().flat_map(|k| [*k == SiteKind::Free; 3]).collect();
    let mut adam = Adam::new(3 * positions.len());
    let mut knn = KnnTable::build(&positions, cfg.n_neighbors)?;
    let mut losses = Vec::with_capacity(cfg.n_iterations + 1);
    let mut flat = vec![0.0; 3 * positions.len()];
    let mut flat_grad = vec![0.0; 3 * positions.len()];

    for it in 0..=cfg.n_iterations {
        if it > 0 && it % cfg.knn_refresh_period == 0 {
            knn = KnnTable::build(&positions, cfg.n_neighbors)?;
        }
        let problem = CvtProblem { positions: &positions, kinds: &sites.kinds, sdf, knn: &knn, domain: Some(&domain), d_max };
        let (loss, grad) = problem.loss_and_grad(cfg.rng_seed, it as u64);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("cvt loss became {loss} at iteration {it}")));
        }
        losses.push(loss);
        observe(it, loss, &positions);
        if it == cfg.n_iterations {
            break;
        }
        for (i, (p, g)) in positions.iter().zip(&grad).enumerate() {
            flat[3 * i..3 * i + 3].copy_from_slice(p.as_slice());
            flat_grad[3 * i..3 * i + 3].copy_from_slice(g.as_slice());
        }
        let lr_it = lr * cfg.lr_final_ratio.powf(it as f64 / cfg.n_iterations as f64);
        adam.step_masked(&mut flat, &flat_grad, lr_it, Some(&mask))?;
        for (i, p) in positions.iter_mut().enumerate() {
            if sites.kinds[i] == SiteKind::Free {
                *p = domain.clamp(&Vec3::new(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]));
            }
        }
    }
    let out = SiteSet { positions, kinds: sites.kinds.clone(), level: sites.level };
    Ok((out, CvtReport { losses, learning_rate: lr }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Rotation3};

    fn lattice(n: usize) -> (Vec<Vec3>, Aabb) {
        let h = 1.0 / n as f64;
        let mut p = Vec::new();
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    p.push(Vec3::new((x as f64 + 0.5) * h, (y as f64 + 0.5) * h, (z as f64 + 0.5) * h));
                }
            }
        }
        (p, Aabb::new(Vec3::zeros(), Vec3::repeat(1.0)))
    }

    #[test]
    fn basis_identity_and_quarter_turn() {
        let b = random_basis(0.0, 0.0);
        assert_eq!(b.e, [Vec3::x(), Vec3::y(), Vec3::z()]);
        let b = random_basis(std::f64::consts::FRAC_PI_2, 0.0);
        assert!((b.e[0] - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn basis_matches_rotation_composition() {
        for k in 0..50 {
            let (theta, phi) = sample_angles(3, k, 0);
            let r = Rotation3::from_axis_angle(&Vec3::y_axis(), theta) * Rotation3::from_axis_angle(&Vec3::z_axis(), phi);
            let b = random_basis(theta, phi);
            for a in 0..3 {
                let mut u = Vec3::zeros();
                u[a] = 1.0;
                assert!((b.e[a] - r * u).norm() < 1e-14);
            }
            let m = Matrix3::from_columns(&b.e);
            assert!((m.transpose() * m - Matrix3::identity()).abs().max() < 1e-12);
            assert!((m.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bisector_examples() {
        let o = Vec3::zeros();
        let s = Vec3::new(2.0, 0.0, 0.0);
        assert_eq!(bisector_hit(&o, &s, 1.0, 2.0, &Vec3::x()), Some(1.0));
        assert_eq!(bisector_hit(&o, &s, 1.0, 2.0, &Vec3::y()), None);
        assert_eq!(bisector_hit(&o, &s, 1.0, 2.0, &-Vec3::x()), None);
        assert_eq!(bisector_hit(&o, &s, 3.0, -1.0, &Vec3::x()), Some(1.5));
    }

    #[test]
    fn shifted_plane_point_is_linear_zero() {
        let mut rng = KeyedRng::new(&[8]);
        for _ in 0..100 {
            let si = Vec3::new(rng.normal(), rng.normal(), rng.normal());
            let sj = Vec3::new(rng.normal(), rng.normal(), rng.normal());
            let (a, b) = (rng.range(0.1, 2.0), -rng.range(0.1, 2.0));
            let r = (sj - si).normalize();
            let t = bisector_hit(&si, &sj, a, b, &r).unwrap();
            // 1-D interpolation along the segment
            let x = t / (sj - si).norm();
            assert!((a + x * (b - a)).abs() < 1e-12);
        }
    }

    #[test]
    fn directional_distance_examples() {
        let p = vec![Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0), Vec3::new(-2.0, 0.0, 0.0)];
        let sdf = [1.0; 3];
        assert_eq!(directional_distance(0, &Vec3::x(), &[1, 2], &p, &sdf, 50.0), 1.0);
        assert_eq!(directional_distance(0, &Vec3::y(), &[1, 2], &p, &sdf, 50.0), 50.0);
        let dom = Aabb::new(Vec3::repeat(-3.0), Vec3::repeat(3.0));
        assert_eq!(directional_distance_bounded(0, &Vec3::y(), &[1, 2], &p, &sdf, &dom, 50.0), 3.0);
    }

    #[test]
    fn directional_distance_matches_exhaustive_planes() {
        let mut rng = KeyedRng::new(&[9]);
        for _ in 0..50 {
            let p: Vec<Vec3> = (0..30).map(|_| Vec3::new(rng.normal(), rng.normal(), rng.normal())).collect();
            let sdf: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
            let r = Vec3::new(rng.normal(), rng.normal(), rng.normal()).normalize();
            let nb: Vec<u32> = (1..30).collect();
            // oracle: intersect with each plane through its plane point
            let mut best = 1e9;
            for j in 1..30 {
                let n = p[j] - p[0];
                let m = if sdf[0] * sdf[j] < 0.0 { p[0] + sdf[0] / (sdf[0] - sdf[j]) * n } else { (p[0] + p[j]) / 2.0 };
                let denom = r.dot(&n);
                if denom.abs() > 0.0 {
                    let t = (m - p[0]).dot(&n) / denom;
                    if t > 0.0 && t < best {
                        best = t;
                    }
                }
            }
            let got = directional_distance(0, &r, &nb, &p, &sdf, 1e9);
            assert!((got - best).abs() <= 1e-12 * best.max(1.0));
        }
    }

    #[test]
    fn lattice_interior_has_zero_loss() {
        let (p, dom) = lattice(6);
        let sites = SiteSet::free(p);
        let sdf = vec![1.0; sites.len()];
        let knn = KnnTable::build(&sites.positions, 24).unwrap();
        let problem = CvtProblem {
            positions: &sites.positions,
            kinds: &sites.kinds,
            sdf: &sdf,
            knn: &knn,
            domain: Some(&dom),
            d_max: 2.0,
        };
        for it in 0..5 {
            let (loss, grad) = problem.loss_and_grad(1, it);
            assert!(loss < 1e-25, "loss {loss}");
            assert!(grad.iter().all(|g| g.norm() < 1e-12));
        }
    }

    fn fd_check(problem: &CvtProblem, angles: &(impl Fn(usize) -> (f64, f64) + Sync), h: f64, tol: f64) -> usize {
        let (_, grad) = problem.loss_and_grad_with(angles);
        let mut checked = 0;
        for i in 0..problem.positions.len() {
            if problem.kinds[i] == SiteKind::Camera {
                continue;
            }
            for a in 0..3 {
                let eval = |delta: f64| {
                    let mut p = problem.positions.to_vec();
                    p[i][a] += delta;
                    CvtProblem { positions: &p, ..*problem }.loss_and_grad_with(angles).0
                };
                let (lp, lm) = (eval(h), eval(-h));
                let fd = (lp - lm) / (2.0 * h);
                // skip argmin switches: one-sided slopes disagree
                let l0 = eval(0.0);
                let (right, left) = ((lp - l0) / h, (l0 - lm) / h);
                if (right - left).abs() > 1e-2 * (right.abs() + left.abs()) + 1e-7 {
                    continue;
                }
                let g = grad[i][a];
                let scale = fd.abs().max(g.abs()).max(1e-8);
                assert!((fd - g).abs() / scale < tol, "site {i} axis {a}: fd {fd} analytic {g}");
                checked += 1;
            }
        }
        checked
    }

    #[test]
    fn two_free_sites_between_fixed_walls_match_fd() {
        let mut p = vec![Vec3::new(0.1, 0.05, -0.02), Vec3::new(0.9, -0.03, 0.04)];
        let mut kinds = vec![SiteKind::Free; 2];
        for y in -1..=1 {
            for z in -1..=1 {
                p.push(Vec3::new(-1.0, y as f64, z as f64));
                p.push(Vec3::new(2.0, y as f64, z as f64));
                kinds.extend([SiteKind::Camera; 2]);
            }
        }
        for x in [0, 1] {
            for (y, z) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                p.push(Vec3::new(x as f64, y as f64, z as f64));
                kinds.push(SiteKind::Camera);
            }
        }
        let sdf = vec![1.0; p.len()];
        let knn = KnnTable::build(&p, 12).unwrap();
        let problem = CvtProblem { positions: &p, kinds: &kinds, sdf: &sdf, knn: &knn, domain: None, d_max: 10.0 };
        let angles = |i: usize| sample_angles(4, 0, i as u64);
        let (_, grad) = problem.loss_and_grad_with(angles);
        // spacing 1.1 between walls at -1 and 2 is uneven: sites are pushed apart/toward center
        assert!(grad[0].x > 0.0 || grad[1].x < 0.0);
        assert!(grad[2..].iter().all(|g| *g == Vec3::zeros()));
        assert!(fd_check(&problem, &angles, 1e-6, 1e-5) > 0);
    }

    #[test]
    fn random_sites_gradient_matches_fd() {
        let mut rng = KeyedRng::new(&[10]);
        let p: Vec<Vec3> = (0..100).map(|_| Vec3::new(rng.uniform(), rng.uniform(), rng.uniform())).collect();
        let sdf: Vec<f64> = p.iter().map(|q| (q - Vec3::repeat(0.5)).norm() - 0.3).collect();
        let kinds = vec![SiteKind::Free; p.len()];
        let knn = KnnTable::build(&p, 24).unwrap();
        let dom = Aabb::new(Vec3::repeat(-0.1), Vec3::repeat(1.1));
        let problem = CvtProblem { positions: &p, kinds: &kinds, sdf: &sdf, knn: &knn, domain: Some(&dom), d_max: 2.0 };
        let angles = |i: usize| sample_angles(5, 7, i as u64);
        let checked = fd_check(&problem, &angles, 1e-5 * 3f64.sqrt(), 1e-4);
        assert!(checked > 250, "only {checked} coordinates checked");
    }

    #[test]
    fn optimization_keeps_cameras_and_is_deterministic() {
        let (mut p, dom) = lattice(6);
        let mut rng = KeyedRng::new(&[1]);
        for q in p.iter_mut() {
            *q += Vec3::new(rng.range(-0.03, 0.03), rng.range(-0.03, 0.03), rng.range(-0.03, 0.03));
        }
        let mut kinds = vec![SiteKind::Free; p.len()];
        kinds[7] = SiteKind::Camera;
        let sites = SiteSet::new(p, kinds, 0).unwrap();
        let sdf = vec![1.0; sites.len()];
        let cfg = CvtConfig { n_iterations: 30, knn_refresh_period: 10, domain: Some(dom), ..Default::default() };
        let (a, ra) = optimize_cvt(&sites, &sdf, &cfg).unwrap();
        let (b, rb) = optimize_cvt(&sites, &sdf, &cfg).unwrap();
        assert_eq!(a.positions, b.positions);
        assert_eq!(ra, rb);
        assert_eq!(a.positions[7], sites.positions[7]);
        assert_eq!(ra.losses.len(), 31);
        assert!(ra.losses.iter().all(|l| *l >= 0.0));
    }

    #[test]
    fn converged_lattice_stays_put() {
        let (p, dom) = lattice(8);
        let sites = SiteSet::free(p);
        let sdf = vec![1.0; sites.len()];
        let cfg = CvtConfig { n_iterations: 5, domain: Some(dom), ..Default::default() };
        let spacing = 1.0 / 8.0;
        let mut prev: Option<Vec<Vec3>> = None;
        optimize_cvt_with(&sites, &sdf, &cfg, |_, _, pos| {
            if let Some(q) = &prev {
                let max = pos.iter().zip(q).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                assert!(max <= 1e-6 * spacing, "moved {max}");
            }
            prev = Some(pos.to_vec());
        })
        .unwrap();
    }

    #[test]
    fn config_validation() {
        assert!(CvtConfig { n_neighbors: 3, ..Default::default() }.validate().is_err());
        assert!(CvtConfig { n_iterations: 0, ..Default::default() }.validate().is_err());
        assert!(CvtConfig { learning_rate: Some(-1.0), ..Default::default() }.validate().is_err());
    }
}
