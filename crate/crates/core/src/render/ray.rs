//! Forward and reverse pass of one ray: march, prune, split at crossings,
//! evaluate both color networks at segment midpoints, composite, and score.

use serde::{Deserialize, Serialize};

use super::network::{BatchCache, NetworkParams, COARSE_INPUTS, FINE_INPUTS};
use super::{alpha_with_grad, composite, composite_backward, photometric_loss, reflect, AlphaMode};
use crate::field::{Feature, FieldState};
use crate::geom::{TetFrame, TetMesh, Vec3};
use crate::traverse::{march, prune, subdivide_crossing, FacePoint, MarchConfig, PruneConfig, Ray, Segment, SegmentList, SubSegment};
use crate::{Result, FEATURE_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub alpha_mode: AlphaMode,
    /// Weight of the coarse color term.
    pub lambda: f64,
    /// Normalization constant of the photometric loss.
    pub eps: f64,
    /// `None` renders every marched segment.
    pub prune: Option<PruneConfig>,
    pub march: MarchConfig,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            alpha_mode: AlphaMode::Normalized,
            lambda: 1.0,
            eps: 0.1,
            prune: Some(PruneConfig::default()),
            march: MarchConfig::default(),
        }
    }
}

/// Frozen scene state shared by all rays of a batch.
#[derive(Clone, Copy)]
pub struct RenderContext<'a> {
    pub mesh: &'a TetMesh,
    pub positions: &'a [Vec3],
    pub frames: &'a [Option<TetFrame>],
    pub field: &'a FieldState,
    pub params: &'a NetworkParams,
    pub beta: f64,
    pub cfg: &'a RenderConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayOutput {
    pub loss: f64,
    pub c_geo: [f64; 3],
    pub c_fine: [f64; 3],
    /// `Σω = 1 − T_final`.
    pub opacity: f64,
    pub samples: usize,
}

/// Gradient accumulators: dense for network weights, sparse (site, value)
/// lists for per-site quantities.
#[derive(Debug, Clone)]
pub struct RayGrads {
    pub sdf: Vec<(u32, f64)>,
    pub f_cse: Vec<(u32, Feature)>,
    pub f_fine: Vec<(u32, Feature)>,
    pub coarse: Vec<f64>,
    pub fine: Vec<f64>,
}

impl RayGrads {
    pub fn new(params: &NetworkParams) -> Self {
        RayGrads {
            sdf: Vec::new(),
            f_cse: Vec::new(),
            f_fine: Vec::new(),
            coarse: vec![0.0; params.coarse.params.len()],
            fine: vec![0.0; params.fine.params.len()],
        }
    }

    pub fn clear(&mut self) {
        self.sdf.clear();
        self.f_cse.clear();
        self.f_fine.clear();
        self.coarse.iter_mut().for_each(|x| *x = 0.0);
        self.fine.iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Which tet gradients a normal is built from.
#[derive(Debug, Clone, Copy)]
enum NormalSource {
    Tet(u32),
    Face(u32, u32),
}

struct Normal {
    n: Vec3,
    raw_norm: f64,
    source: NormalSource,
}

struct Sample {
    tet: u32,
    seg: usize,
    sub: SubSegment,
    bary: [f64; 4],
    n_tet: Normal,
    n_in: Normal,
    n_out: Normal,
    alpha: f64,
    d_alpha: (f64, f64),
}

/// One ray of a batch with its ground-truth color.
#[derive(Debug, Clone, Copy)]
pub struct RayItem {
    pub camera: usize,
    pub ray: Ray,
    pub key: u64,
    pub c_gt: [f64; 3],
}

impl RenderContext<'_> {
    fn tet_gradient(&self, t: u32) -> Vec3 {
        match &self.frames[t as usize] {
            Some(f) => crate::field::gradient_from_frame(f, self.mesh.tets[t as usize].map(|i| self.field.sdf[i as usize])),
            None => Vec3::zeros(),
        }
    }

    fn normal(&self, source: NormalSource) -> Normal {
        let g = match source {
            NormalSource::Tet(t) => self.tet_gradient(t),
            NormalSource::Face(a, b) => self.tet_gradient(a) + self.tet_gradient(b),
        };
        let raw_norm = g.norm();
        let n = if raw_norm < 1e-12 { Vec3::zeros() } else { g / raw_norm };
        Normal { n, raw_norm, source }
    }

    fn face_source(&self, t: u32, slot: Option<u8>) -> NormalSource {
        let Some(slot) = slot else { return NormalSource::Tet(t) };
        match self.mesh.neighbors[t as usize][slot as usize].get() {
            Some((n, _)) if self.frames[n as usize].is_some() => NormalSource::Face(t, n),
            _ => NormalSource::Tet(t),
        }
    }

    /// Builds one sample and appends its network input rows; the coarse
    /// color slots of the fine row are filled after the coarse pass.
    #[allow(clippy::too_many_arguments)]
    fn sample(
        &self,
        ray: &Ray,
        seg_index: usize,
        seg: &Segment,
        sub: SubSegment,
        x_coarse: &mut Vec<f64>,
        x_fine: &mut Vec<f64>,
    ) -> Option<Sample> {
        let frame = self.frames[seg.tet as usize].as_ref()?;
        let t_mid = 0.5 * (sub.t0 + sub.t1);
        let p = ray.at(t_mid);
        let bary = frame.barycentric(&p);
        let tet = self.mesh.tets[seg.tet as usize];
        let f_cse = crate::field::interpolate_features(&bary, tet.map(|i| &self.field.f_cse[i as usize]));
        let f_fine = crate::field::interpolate_features(&bary, tet.map(|i| &self.field.f_fine[i as usize]));
        let n_tet = self.normal(NormalSource::Tet(seg.tet));
        let split = sub.split.is_some();
        let n_in = if split && sub.part == 1 {
            self.normal(NormalSource::Tet(seg.tet))
        } else {
            self.normal(self.face_source(seg.tet, seg.entry_slot))
        };
        let n_out = if split && sub.part == 0 {
            self.normal(NormalSource::Tet(seg.tet))
        } else {
            self.normal(self.face_source(seg.tet, Some(seg.exit_slot)))
        };
        let v = ray.dir;
        let (alpha, da_in, da_out) = alpha_with_grad(sub.sdf0, sub.sdf1, self.beta, self.cfg.alpha_mode);

        x_coarse.extend_from_slice(p.as_slice());
        x_coarse.extend_from_slice(v.as_slice());
        x_coarse.extend_from_slice(&[sub.sdf0, sub.sdf1]);
        x_coarse.extend_from_slice(n_tet.n.as_slice());
        x_coarse.extend_from_slice(&f_cse);

        let v_r = reflect(&v, &n_tet.n);
        x_fine.extend_from_slice(p.as_slice());
        x_fine.extend_from_slice(v_r.as_slice());
        x_fine.extend_from_slice(&[0.0; 3]);
        x_fine.extend_from_slice(&[sub.sdf0, sub.sdf1]);
        x_fine.extend_from_slice(n_in.n.as_slice());
        x_fine.extend_from_slice(n_out.n.as_slice());
        x_fine.extend_from_slice(&f_fine);

        Some(Sample { tet: seg.tet, seg: seg_index, sub, bary, n_tet, n_in, n_out, alpha, d_alpha: (da_in, da_out) })
    }

    /// Pushes `dL/dsdf` for the sites behind a normal, given `dL/dn`.
    fn normal_backward(&self, normal: &Normal, dn: &Vec3, out: &mut Vec<(u32, f64)>) {
        if normal.raw_norm < 1e-12 {
            return;
        }
        let n = normal.n;
        let dg = (dn - n * n.dot(dn)) / normal.raw_norm;
        let tets = match normal.source {
            NormalSource::Tet(t) => [Some(t), None],
            NormalSource::Face(a, b) => [Some(a), Some(b)],
        };
        for t in tets.into_iter().flatten() {
            let Some(frame) = &self.frames[t as usize] else { continue };
            let gw = frame.weight_gradients();
            for (k, &v) in self.mesh.tets[t as usize].iter().enumerate() {
                out.push((v, gw[k].dot(&dg)));
            }
        }
    }
}

fn push_face(fp: &FacePoint, g: f64, out: &mut Vec<(u32, f64)>) {
    if g == 0.0 {
        return;
    }
    for k in 0..3 {
        if fp.bary[k] != 0.0 {
            out.push((fp.verts[k], fp.bary[k] * g));
        }
    }
}

/// Renders one ray from camera vertex `camera` and, when `grads` is given,
/// accumulates the reverse-mode gradient of its loss.
pub fn render_ray(
    ctx: &RenderContext,
    camera: usize,
    ray: &Ray,
    pixel_key: u64,
    c_gt: &[f64; 3],
    grads: Option<&mut RayGrads>,
) -> Result<RayOutput> {
    let item = RayItem { camera, ray: *ray, key: pixel_key, c_gt: *c_gt };
    Ok(render_batch(ctx, &[item], grads)?[0])
}

struct RayState {
    list: SegmentList,
    range: std::ops::Range<usize>,
}

/// Renders a batch of rays with both networks evaluated once over all
/// samples of the batch. Gradients of the summed loss go to `grads`.
pub fn render_batch(ctx: &RenderContext, items: &[RayItem], grads: Option<&mut RayGrads>) -> Result<Vec<RayOutput>> {
    let mut samples: Vec<Sample> = Vec::new();
    let mut rays = Vec::with_capacity(items.len());
    let mut x_coarse = Vec::new();
    let mut x_fine = Vec::new();
    for item in items {
        let marched = march(ctx.mesh, ctx.positions, &ctx.field.sdf, item.camera, &item.ray, item.key, &ctx.cfg.march)?;
        let list = match &ctx.cfg.prune {
            Some(p) => prune(&marched, ctx.mesh, &ctx.field.sdf, ctx.beta, p),
            None => marched,
        };
        let first = samples.len();
        for (i, seg) in list.segments.iter().enumerate() {
            let (subs, n) = subdivide_crossing(seg.t_in, seg.t_out, seg.sdf_in, seg.sdf_out);
            for sub in &subs[..n] {
                if let Some(s) = ctx.sample(&list.ray, i, seg, *sub, &mut x_coarse, &mut x_fine) {
                    samples.push(s);
                }
            }
        }
        rays.push(RayState { list, range: first..samples.len() });
    }

    let n = samples.len();
    let mut coarse_cache = BatchCache::default();
    ctx.params.coarse.forward_batch(x_coarse, n, &mut coarse_cache);
    let c_coarse: Vec<[f64; 3]> = coarse_cache.output().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    for (row, c) in x_fine.chunks_exact_mut(FINE_INPUTS).zip(&c_coarse) {
        row[6..9].copy_from_slice(c);
    }
    let mut fine_cache = BatchCache::default();
    ctx.params.fine.forward_batch(x_fine, n, &mut fine_cache);
    let c_fine: Vec<[f64; 3]> = fine_cache.output().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();

    let mut outputs = Vec::with_capacity(items.len());
    let mut dc_coarse = vec![0.0; 3 * n];
    let mut dc_fine = vec![0.0; 3 * n];
    let mut d_alpha = vec![0.0; n];
    for (item, state) in items.iter().zip(&rays) {
        let r = state.range.clone();
        let alphas: Vec<f64> = samples[r.clone()].iter().map(|s| s.alpha).collect();
        let (geo, weights, t_final) = composite(&alphas, &c_coarse[r.clone()]);
        let (fine, _, _) = composite(&alphas, &c_fine[r.clone()]);
        let (loss, d_geo, d_fine) = photometric_loss(&geo, &fine, &item.c_gt, ctx.cfg.lambda, ctx.cfg.eps);
        outputs.push(RayOutput { loss, c_geo: geo, c_fine: fine, opacity: 1.0 - t_final, samples: r.len() });
        if grads.is_none() {
            continue;
        }
        let (da_geo, dcc) = composite_backward(&alphas, &c_coarse[r.clone()], &weights, &d_geo);
        let (da_fine, dcf) = composite_backward(&alphas, &c_fine[r.clone()], &weights, &d_fine);
        for (k, i) in r.enumerate() {
            dc_coarse[3 * i..3 * i + 3].copy_from_slice(&dcc[k]);
            dc_fine[3 * i..3 * i + 3].copy_from_slice(&dcf[k]);
            d_alpha[i] = da_geo[k] + da_fine[k];
        }
    }
    let Some(g) = grads else { return Ok(outputs) };

    let dx_fine = ctx.params.fine.backward_batch(&fine_cache, &dc_fine, &mut g.fine);
    for (dc, dx) in dc_coarse.chunks_exact_mut(3).zip(dx_fine.chunks_exact(FINE_INPUTS)) {
        for c in 0..3 {
            dc[c] += dx[6 + c];
        }
    }
    let dx_coarse = ctx.params.coarse.backward_batch(&coarse_cache, &dc_coarse, &mut g.coarse);

    for state in &rays {
        let v = state.list.ray.dir;
        for i in state.range.clone() {
            let s = &samples[i];
            let dx_fine = &dx_fine[i * FINE_INPUTS..(i + 1) * FINE_INPUTS];
            let dx_coarse = &dx_coarse[i * COARSE_INPUTS..(i + 1) * COARSE_INPUTS];

            // normals
            let dv_r = Vec3::new(dx_fine[3], dx_fine[4], dx_fine[5]);
            let n = s.n_tet.n;
            let dn_tet = Vec3::new(dx_coarse[8], dx_coarse[9], dx_coarse[10]) - 2.0 * (v.dot(&n) * dv_r + dv_r.dot(&n) * v);
            ctx.normal_backward(&s.n_tet, &dn_tet, &mut g.sdf);
            ctx.normal_backward(&s.n_in, &Vec3::new(dx_fine[11], dx_fine[12], dx_fine[13]), &mut g.sdf);
            ctx.normal_backward(&s.n_out, &Vec3::new(dx_fine[14], dx_fine[15], dx_fine[16]), &mut g.sdf);

            // features and sample position
            let tet = ctx.mesh.tets[s.tet as usize];
            let df_cse: Feature = std::array::from_fn(|c| dx_coarse[11 + c]);
            let df_fine: Feature = std::array::from_fn(|c| dx_fine[17 + c]);
            let mut dp = Vec3::new(dx_fine[0] + dx_coarse[0], dx_fine[1] + dx_coarse[1], dx_fine[2] + dx_coarse[2]);
            let gw = ctx.frames[s.tet as usize].as_ref().unwrap().weight_gradients();
            for (j, &site) in tet.iter().enumerate() {
                let w = s.bary[j];
                g.f_cse.push((site, df_cse.map(|x| w * x)));
                g.f_fine.push((site, df_fine.map(|x| w * x)));
                let fc = &ctx.field.f_cse[site as usize];
                let ff = &ctx.field.f_fine[site as usize];
                let proj: f64 = (0..FEATURE_DIM).map(|c| fc[c] * df_cse[c] + ff[c] * df_fine[c]).sum();
                dp += proj * gw[j];
            }
            let dt_mid = dp.dot(&v);

            // endpoint sdf of the sub-segment
            let d0 = dx_coarse[6] + dx_fine[9] + d_alpha[i] * s.d_alpha.0;
            let d1 = dx_coarse[7] + dx_fine[10] + d_alpha[i] * s.d_alpha.1;
            let seg = &state.list.segments[s.seg];
            let (a, b) = (seg.sdf_in, seg.sdf_out);
            let (mut da, mut db) = (0.0, 0.0);
            match (s.sub.split, s.sub.part) {
                (None, _) => {
                    da += d0;
                    db += d1;
                }
                (Some(_), part) => {
                    if part == 0 {
                        da += d0;
                    } else {
                        db += d1;
                    }
                    // t_mid moves with the crossing parameter s = a / (a - b)
                    let half_len = 0.5 * (seg.t_out - seg.t_in);
                    let denom = (a - b) * (a - b);
                    da += dt_mid * half_len * (-b / denom);
                    db += dt_mid * half_len * (a / denom);
                }
            }
            push_face(&seg.entry, da, &mut g.sdf);
            push_face(&seg.exit, db, &mut g.sdf);
        }
    }
    Ok(outputs)
}
