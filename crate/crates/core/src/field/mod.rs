//! Per-site SDF and feature fields: interpolation, per-tet gradients,
//! regularizers, surface-adaptive up-sampling and checkpoints.

mod checkpoint;
mod regularize;
mod transfer;
mod upsample;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use regularize::{knn_smooth, normal_smoothing, tv_loss, SmoothingWeights};
pub use transfer::{locate_from, transfer_field};
pub use upsample::{insert_midpoints, upsample, upsample_edges, upsample_rule};

use serde::{Deserialize, Serialize};

use crate::error::check_len;
use crate::geom::{Aabb, TetFrame, Vec3};
use crate::rng::KeyedRng;
use crate::{Result, FEATURE_DIM};

pub type Feature = [f64; FEATURE_DIM];

/// SDF value and coarse/fine features per site. Optimizer moments live with
/// the trainer, which restarts them whenever the mesh is rebuilt.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub sdf: Vec<f64>,
    pub f_cse: Vec<Feature>,
    pub f_fine: Vec<Feature>,
}

impl FieldState {
    pub fn len(&self) -> usize {
        self.sdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sdf.is_empty()
    }

    pub fn check(&self, n_sites: usize) -> Result<()> {
        check_len(n_sites, self.sdf.len())?;
        check_len(n_sites, self.f_cse.len())?;
        check_len(n_sites, self.f_fine.len())?;
        let finite = self.sdf.iter().all(|x| x.is_finite())
            && self.f_cse.iter().chain(&self.f_fine).all(|f| f.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(crate::Error::Numerical("field contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Signed distance to a sphere at the bbox center with radius 0.25 × diagonal;
/// features uniform in (-1e-2, 1e-2).
pub fn init_field(positions: &[Vec3], bbox: &Aabb, seed: u64) -> FieldState {
    let c = bbox.center();
    let radius = 0.25 * bbox.diagonal();
    let sdf = positions.iter().map(|p| (p - c).norm() - radius).collect();
    let feat = |stream: u64, i: usize| {
        let mut rng = KeyedRng::new(&[seed, stream, i as u64]);
        let mut f = [0.0; FEATURE_DIM];
        for x in f.iter_mut() {
            *x = rng.range(-1e-2, 1e-2);
        }
        f
    };
    let f_cse = (0..positions.len()).map(|i| feat(0xC5E, i)).collect();
    let f_fine = (0..positions.len()).map(|i| feat(0xF17E, i)).collect();
    FieldState { sdf, f_cse, f_fine }
}

/// Barycentric interpolation of site values on a face.
pub fn face_sdf(face: [u32; 3], bary: [f64; 3], sdf: &[f64]) -> f64 {
    bary[0] * sdf[face[0] as usize] + bary[1] * sdf[face[1] as usize] + bary[2] * sdf[face[2] as usize]
}

/// Barycentric combination of four feature vectors.
pub fn interpolate_features(w: &[f64; 4], f: [&Feature; 4]) -> Feature {
    let mut out = [0.0; FEATURE_DIM];
    for (k, o) in out.iter_mut().enumerate() {
        *o = w[0] * f[0][k] + w[1] * f[1][k] + w[2] * f[2][k] + w[3] * f[3][k];
    }
    out
}

/// Coarse and fine features at `p` inside tet `tet`.
pub fn tet_features(tet: [u32; 4], positions: &[Vec3], p: &Vec3, field: &FieldState) -> Result<(Feature, Feature)> {
    let v = tet.map(|i| positions[i as usize]);
    let w = TetFrame::new(&v)?.barycentric(p);
    let cse = tet.map(|i| &field.f_cse[i as usize]);
    let fine = tet.map(|i| &field.f_fine[i as usize]);
    Ok((interpolate_features(&w, cse), interpolate_features(&w, fine)))
}

/// Constant gradient of the linear interpolant of `sdf` over the tet.
pub fn tet_sdf_gradient(v: &[Vec3; 4], sdf: [f64; 4]) -> Result<Vec3> {
    Ok(gradient_from_frame(&TetFrame::new(v)?, sdf))
}

pub fn gradient_from_frame(frame: &TetFrame, sdf: [f64; 4]) -> Vec3 {
    let gw = frame.weight_gradients();
    gw[0] * sdf[0] + gw[1] * sdf[1] + gw[2] * sdf[2] + gw[3] * sdf[3]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegWeights {
    pub w_reg: f64,
    pub w_tv: f64,
}

impl Default for RegWeights {
    fn default() -> Self {
        RegWeights { w_reg: 0.1, w_tv: 0.01 }
    }
}

/// `g_rgb + w_reg g_reg + w_tv g_tv`, elementwise.
pub fn combine_sdf_gradient(g_rgb: &[f64], g_reg: &[f64], g_tv: &[f64], w: &RegWeights) -> Result<Vec<f64>> {
    check_len(g_rgb.len(), g_reg.len())?;
    check_len(g_rgb.len(), g_tv.len())?;
    Ok(g_rgb.iter().zip(g_reg).zip(g_tv).map(|((a, b), c)| a + w.w_reg * b + w.w_tv * c).collect())
}
