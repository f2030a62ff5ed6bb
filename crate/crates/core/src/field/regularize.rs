//! SDF regularizers: KNN smoothing, normal alignment with the smoothed
//! field, and edge total variation.

use rayon::prelude::*;

use super::gradient_from_frame;
use crate::geom::{KnnTable, TetFrame, TetMesh, Vec3};
use crate::{Error, Result};

/// Row-normalized Gaussian weights over each site and its K nearest
/// neighbors; bandwidth is the site's mean neighbor distance.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingWeights {
    offsets: Vec<usize>,
    index: Vec<u32>,
    weight: Vec<f64>,
}

impl SmoothingWeights {
    pub fn build(positions: &[Vec3], knn: &KnnTable) -> Self {
        let rows: Vec<Vec<(u32, f64)>> = (0..positions.len())
            .into_par_iter()
            .map(|i| {
                let nb = knn.neighbors(i);
                let p = positions[i];
                let mut row = vec![(i as u32, 1.0)];
                if !nb.is_empty() {
                    let sigma = nb.iter().map(|&j| (positions[j as usize] - p).norm()).sum::<f64>() / nb.len() as f64;
                    let inv = 1.0 / (2.0 * sigma * sigma);
                    for &j in nb {
                        let d2 = (positions[j as usize] - p).norm_squared();
                        row.push((j, (-d2 * inv).exp()));
                    }
                }
                let total: f64 = row.iter().map(|x| x.1).sum();
                row.iter_mut().for_each(|x| x.1 /= total);
                row
            })
            .collect();
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        offsets.push(0);
        let mut index = Vec::new();
        let mut weight = Vec::new();
        for row in rows {
            for (j, w) in row {
                index.push(j);
                weight.push(w);
            }
            offsets.push(index.len());
        }
        SmoothingWeights { offsets, index, weight }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.index[r.clone()].iter().map(|&j| j as usize).zip(self.weight[r].iter().copied())
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        (0..self.len()).into_par_iter().map(|i| self.row(i).map(|(j, w)| w * values[j]).sum()).collect()
    }

    /// Adds `Wᵀ g` to `out`.
    pub fn apply_transpose_into(&self, g: &[f64], out: &mut [f64]) {
        for (i, gi) in g.iter().enumerate() {
            if *gi == 0.0 {
                continue;
            }
            for (j, w) in self.row(i) {
                out[j] += w * gi;
            }
        }
    }
}

/// Smoothed SDF over the K nearest neighbors of each site (plus itself).
pub fn knn_smooth(sdf: &[f64], knn: &KnnTable, positions: &[Vec3]) -> Vec<f64> {
    SmoothingWeights::build(positions, knn).apply(sdf)
}

/// `L_reg = ½ Σ_t (1 − cos²(∇sdf_t, ∇sdf_t^smooth))` and its gradient with
/// respect to the raw site SDF. With `detach`, the smoothed field is treated
/// as a constant.
pub fn normal_smoothing(
    sdf: &[f64],
    weights: &SmoothingWeights,
    mesh: &TetMesh,
    frames: &[Option<TetFrame>],
    detach: bool,
) -> (f64, Vec<f64>) {
    let smooth = weights.apply(sdf);
    let (loss, mut grad, grad_smooth) = alignment_terms(sdf, &smooth, mesh, frames);
    if !detach {
        weights.apply_transpose_into(&grad_smooth, &mut grad);
    }
    (loss, grad)
}

/// Alignment loss between the per-tet gradients of two site fields, with
/// partial derivatives with respect to each field.
fn alignment_terms(sdf: &[f64], smooth: &[f64], mesh: &TetMesh, frames: &[Option<TetFrame>]) -> (f64, Vec<f64>, Vec<f64>) {
    let terms: Vec<Option<(f64, [f64; 4], [f64; 4])>> = (0..mesh.len())
        .into_par_iter()
        .map(|t| {
            let frame = frames[t].as_ref()?;
            let tet = mesh.tets[t];
            let g = gradient_from_frame(frame, tet.map(|i| sdf[i as usize]));
            let h = gradient_from_frame(frame, tet.map(|i| smooth[i as usize]));
            let (gg, hh) = (g.norm_squared(), h.norm_squared());
            if gg.sqrt() < 1e-12 || hh.sqrt() < 1e-12 {
                return None;
            }
            let gh = g.dot(&h);
            let cos2 = gh * gh / (gg * hh);
            // derivatives of -½ cos²
            let dg = -(gh / (gg * hh)) * h + (gh * gh / (gg * gg * hh)) * g;
            let dh = -(gh / (gg * hh)) * g + (gh * gh / (gg * hh * hh)) * h;
            let gw = frame.weight_gradients();
            Some((0.5 * (1.0 - cos2), gw.map(|w| w.dot(&dg)), gw.map(|w| w.dot(&dh))))
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = vec![0.0; sdf.len()];
    let mut grad_smooth = vec![0.0; sdf.len()];
    for (t, term) in terms.iter().enumerate() {
        let Some((l, ds, dh)) = term else { continue };
        loss += l;
        for k in 0..4 {
            let v = mesh.tets[t][k] as usize;
            grad[v] += ds[k];
            grad_smooth[v] += dh[k];
        }
    }
    (loss, grad, grad_smooth)
}

/// `L_TV = Σ_edges (sdf_i − sdf_j)² / ‖s_i − s_j‖` and its gradient.
pub fn tv_loss(sdf: &[f64], edges: &[[u32; 2]], positions: &[Vec3]) -> Result<(f64, Vec<f64>)> {
    let mut loss = 0.0;
    let mut grad = vec![0.0; sdf.len()];
    for &[i, j] in edges {
        let (i, j) = (i as usize, j as usize);
        let len = (positions[i] - positions[j]).norm();
        if !(len > 0.0) {
            return Err(Error::Degenerate(format!("edge ({i}, {j}) has zero length")));
        }
        let d = sdf[i] - sdf[j];
        loss += d * d / len;
        grad[i] += 2.0 * d / len;
        grad[j] -= 2.0 * d / len;
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::delaunay;
    use crate::rng::KeyedRng;

    fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
        let mut r = KeyedRng::new(&[seed]);
        (0..n).map(|_| Vec3::new(r.uniform(), r.uniform(), r.uniform())).collect()
    }

    #[test]
    fn smoothing_weights_are_normalized() {
        let p = cloud(200, 1);
        let knn = KnnTable::build(&p, 12).unwrap();
        let w = SmoothingWeights::build(&p, &knn);
        for i in 0..p.len() {
            let s: f64 = w.row(i).map(|x| x.1).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
        let c = knn_smooth(&vec![0.7; 200], &knn, &p);
        assert!(c.iter().all(|x| (x - 0.7).abs() < 1e-14));
        let mut r = KeyedRng::new(&[2]);
        let f: Vec<f64> = (0..200).map(|_| r.normal()).collect();
        let once = w.apply(&f);
        let twice = w.apply(&once);
        assert!(once.iter().zip(&twice).any(|(a, b)| (a - b).abs() > 1e-3));
    }

    #[test]
    fn single_site_is_unchanged() {
        let p = vec![Vec3::new(0.3, 0.1, 0.2)];
        let knn = KnnTable::build(&p, 0).unwrap();
        assert_eq!(knn_smooth(&[1.25], &knn, &p), vec![1.25]);
    }

    #[test]
    fn linear_field_on_lattice_center_is_unchanged() {
        let mut p = Vec::new();
        for x in -3..=3 {
            for y in -3..=3 {
                for z in -3..=3 {
                    p.push(Vec3::new(x as f64, y as f64, z as f64));
                }
            }
        }
        let f: Vec<f64> = p.iter().map(|q| 0.3 * q.x - 1.2 * q.y + 0.5 * q.z + 2.0).collect();
        // 26 = full first shell, so the neighborhood is symmetric
        let knn = KnnTable::build(&p, 26).unwrap();
        let s = knn_smooth(&f, &knn, &p);
        let center = p.iter().position(|q| *q == Vec3::zeros()).unwrap();
        assert!((s[center] - f[center]).abs() < 1e-12);
    }

    struct Fixture {
        p: Vec<Vec3>,
        mesh: TetMesh,
        frames: Vec<Option<TetFrame>>,
        w: SmoothingWeights,
        sdf: Vec<f64>,
    }

    fn fixture(n: usize, seed: u64) -> Fixture {
        let p = cloud(n, seed);
        let mesh = delaunay(&p).unwrap();
        let frames = mesh.frames_lenient(&p);
        let knn = KnnTable::build(&p, 8).unwrap();
        let w = SmoothingWeights::build(&p, &knn);
        let mut r = KeyedRng::new(&[seed, 1]);
        let sdf = p.iter().map(|q| (q - Vec3::repeat(0.5)).norm() - 0.3 + 0.05 * r.normal()).collect();
        Fixture { p, mesh, frames, w, sdf }
    }

    #[test]
    fn l_reg_zero_when_smoothed_equals_raw_and_half_when_orthogonal() {
        let p = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        let mesh = crate::geom::build_adjacency(vec![[0, 1, 2, 3]], 4).unwrap();
        let frames = mesh.frames_lenient(&p);
        let knn = KnnTable::build(&p, 0).unwrap();
        let identity = SmoothingWeights::build(&p, &knn);
        let (l, g) = normal_smoothing(&[0.0, 1.0, 0.0, 0.0], &identity, &mesh, &frames, false);
        assert!(l.abs() < 1e-15);
        assert!(g.iter().all(|x| x.abs() < 1e-15));
        // swap-matrix smoothing: smoothed = y when raw = x
        let swap = SmoothingWeights { offsets: vec![0, 1, 2, 3, 4], index: vec![0, 2, 1, 3], weight: vec![1.0; 4] };
        let (l, _) = normal_smoothing(&[0.0, 1.0, 0.0, 0.0], &swap, &mesh, &frames, false);
        assert!((l - 0.5).abs() < 1e-15);
    }

    #[test]
    fn l_reg_invariant_under_smoothed_sign_flip() {
        let fx = fixture(60, 3);
        let (l1, _) = normal_smoothing(&fx.sdf, &fx.w, &fx.mesh, &fx.frames, false);
        let neg = SmoothingWeights { weight: fx.w.weight.iter().map(|x| -x).collect(), ..fx.w.clone() };
        let (l2, _) = normal_smoothing(&fx.sdf, &neg, &fx.mesh, &fx.frames, false);
        assert!((l1 - l2).abs() <= 1e-12 * l1);
    }

    fn check_fd(f: impl Fn(&[f64]) -> f64, x: &[f64], g: &[f64], h: f64, tol: f64) {
        for i in 0..x.len() {
            let mut xp = x.to_vec();
            xp[i] += h;
            let mut xm = x.to_vec();
            xm[i] -= h;
            let fd = (f(&xp) - f(&xm)) / (2.0 * h);
            let scale = fd.abs().max(g[i].abs()).max(1e-6);
            assert!((fd - g[i]).abs() / scale < tol, "component {i}: fd {fd} analytic {}", g[i]);
        }
    }

    #[test]
    fn l_reg_gradient_matches_fd() {
        let fx = fixture(30, 4);
        for detach in [false, true] {
            let (_, g) = normal_smoothing(&fx.sdf, &fx.w, &fx.mesh, &fx.frames, detach);
            let smooth = fx.w.apply(&fx.sdf);
            let f = |s: &[f64]| {
                if detach {
                    alignment_terms(s, &smooth, &fx.mesh, &fx.frames).0
                } else {
                    normal_smoothing(s, &fx.w, &fx.mesh, &fx.frames, false).0
                }
            };
            check_fd(f, &fx.sdf, &g, 1e-6, 1e-5);
        }
    }

    #[test]
    fn tv_examples_and_gradient() {
        let p = vec![Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)];
        assert_eq!(tv_loss(&[0.0, 2.0], &[[0, 1]], &p).unwrap().0, 2.0);
        assert_eq!(tv_loss(&[0.4, 0.4], &[[0, 1]], &p).unwrap().0, 0.0);
        assert!(tv_loss(&[0.0, 1.0], &[[0, 1]], &[Vec3::zeros(), Vec3::zeros()]).is_err());
        let fx = fixture(30, 5);
        let (_, g) = tv_loss(&fx.sdf, &fx.mesh.edges, &fx.p).unwrap();
        check_fd(|s| tv_loss(s, &fx.mesh.edges, &fx.p).unwrap().0, &fx.sdf, &g, 1e-6, 1e-6);
    }
}
