use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Bvh, TriMesh};
use crate::geom::Vec3;
use crate::rng::KeyedRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChamferConfig {
    /// Per-sample distances are clipped to this value (scene units).
    pub clip: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for ChamferConfig {
    fn default() -> Self {
        ChamferConfig { clip: 0.1, n_samples: 1_000_000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChamferReport {
    /// Mean clipped distance from ground-truth samples to the prediction.
    pub acc: f64,
    /// Mean clipped distance from predicted samples to the ground truth.
    pub compl: f64,
}

/// `n` area-uniform samples on `mesh`; sample `i` depends only on
/// `(seed, i)`.
pub fn sample_surface(mesh: &TriMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += 0.5 * mesh.triangle_normal(t).norm();
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::invalid("cannot sample a mesh with zero area"));
    }
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = KeyedRng::new(&[seed, 0x5A4D_504C, i]);
            let target = rng.uniform() * total;
            let t = cdf.partition_point(|&c| c <= target).min(cdf.len() - 1);
            let [a, b, c] = mesh.triangle(t);
            let r1 = rng.uniform().sqrt();
            let r2 = rng.uniform();
            a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2)
        })
        .collect())
}

fn mean_clipped(points: &[Vec3], target: &Bvh, clip: f64) -> f64 {
    let d: Vec<f64> = points
        .par_iter()
        .map(|p| {
            let d2 = target.distance_sq_below(p, clip);
            if d2 >= clip * clip {
                clip
            } else {
                d2.sqrt()
            }
        })
        .collect();
    d.iter().sum::<f64>() / d.len() as f64
}

/// Clipped Chamfer accuracy and completeness between two meshes.
pub fn chamfer(gt: &TriMesh, pred: &TriMesh, cfg: &ChamferConfig) -> Result<ChamferReport> {
    if gt.is_empty() || pred.is_empty() {
        return Err(Error::invalid("chamfer needs two nonempty meshes"));
    }
    let gt_samples = sample_surface(gt, cfg.n_samples, cfg.seed)?;
    chamfer_points(&gt_samples, gt, pred, cfg)
}

/// Like [`chamfer`] with the ground-truth side given as precomputed samples.
pub fn chamfer_points(gt_samples: &[Vec3], gt: &TriMesh, pred: &TriMesh, cfg: &ChamferConfig) -> Result<ChamferReport> {
    if gt_samples.is_empty() || cfg.n_samples == 0 {
        return Err(Error::invalid("chamfer needs at least one sample"));
    }
    if !(cfg.clip > 0.0) {
        return Err(Error::invalid("chamfer clip distance must be positive"));
    }
    let pred_bvh = Bvh::build(pred)?;
    let gt_bvh = Bvh::build(gt)?;
    let pred_samples = sample_surface(pred, cfg.n_samples, cfg.seed)?;
    Ok(ChamferReport {
        acc: mean_clipped(gt_samples, &pred_bvh, cfg.clip),
        compl: mean_clipped(&pred_samples, &gt_bvh, cfg.clip),
    })
}
