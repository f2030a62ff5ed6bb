//! Coarse-to-fine optimization: render/backprop on a fixed tessellation,
//! then refine near the surface and regularize the sites before the next level.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Refinement, SceneDataset, TrainConfig};
use crate::cvt::optimize_cvt;
use crate::extract::{chamfer, marching_tetrahedra, save_mesh, write_tet_ply, ChamferReport, TriMesh};
use crate::field::{
    combine_sdf_gradient, init_field, insert_midpoints, normal_smoothing, save_checkpoint, transfer_field, tv_loss, upsample_edges,
    FieldState, SmoothingWeights,
};
use crate::geom::{delaunay, Aabb, KnnTable, SiteKind, SiteSet, TetFrame, TetMesh, Vec3};
use crate::optim::Adam;
use crate::render::{render_batch, NetworkParams, RayItem, RayGrads, RenderConfig, RenderContext};
use crate::rng::{hash_key, KeyedRng};
use crate::{Error, Result, FEATURE_DIM};

/// Rays rendered per work item; gradients are reduced in chunk order.
const RAY_CHUNK: usize = 16;
/// Cameras must lie within the bbox scaled by this factor about its center.
const CAMERA_BOX_SCALE: f64 = 10.0;

/// `side³` free sites at the cell centers of `bbox`, followed by one camera
/// site per camera center.
pub fn init_grid(bbox: &Aabb, side: usize, cameras: &[Vec3]) -> Result<SiteSet> {
    if side < 2 {
        return Err(Error::invalid("grid side must be at least 2"));
    }
    if !bbox.is_nonempty() {
        return Err(Error::invalid("grid bbox is empty"));
    }
    let ext = bbox.extent();
    let mut positions = Vec::with_capacity(side.pow(3) + cameras.len());
    for x in 0..side {
        for y in 0..side {
            for z in 0..side {
                let c = Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) / side as f64;
                positions.push(bbox.min + ext.component_mul(&c));
            }
        }
    }
    let outer = bbox.scaled(CAMERA_BOX_SCALE);
    for (i, c) in cameras.iter().enumerate() {
        if !outer.contains(c) {
            return Err(Error::invalid(format!("camera {i} lies outside the enlarged bbox")));
        }
    }
    let mut kinds = vec![SiteKind::Free; positions.len()];
    positions.extend_from_slice(cameras);
    kinds.extend(std::iter::repeat_n(SiteKind::Camera, cameras.len()));
    SiteSet::new(positions, kinds, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: u32,
    pub n_sites: usize,
    pub n_tets: usize,
    pub iterations: usize,
    /// Mean photometric loss per ray over the last tenth of the level.
    pub final_loss: f64,
    pub lambda: f64,
    pub beta_end: f64,
    pub mesh_vertices: usize,
    pub mesh_triangles: usize,
    pub chamfer: Option<ChamferReport>,
    /// Sites added after this level (0 for the last level).
    pub added_sites: usize,
    /// CVT loss after / before the phase following this level.
    pub cvt_ratio: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct LevelOutput {
    pub sites: SiteSet,
    pub field: FieldState,
    pub mesh: TriMesh,
    pub report: LevelReport,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub levels: Vec<LevelOutput>,
    pub params: NetworkParams,
}

impl TrainResult {
    pub fn final_level(&self) -> &LevelOutput {
        self.levels.last().expect("training produces at least one level")
    }
}

#[derive(Debug, Clone, Copy)]
pub enum TrainEvent<'a> {
    Step { level: u32, iteration: usize, loss: f64, beta: f64, lambda: f64, samples_per_ray: f64 },
    Level(&'a LevelOutput),
}

/// Per-level state that is fixed while the field is optimized.
struct Level {
    mesh: TetMesh,
    frames: Vec<Option<TetFrame>>,
    smoothing: SmoothingWeights,
    camera_sites: Vec<usize>,
}

impl Level {
    fn build(sites: &SiteSet, cfg: &TrainConfig) -> Result<Self> {
        let mesh = delaunay(&sites.positions)?;
        let frames = mesh.frames_lenient(&sites.positions);
        let k = cfg.smooth_k.min(sites.len() - 1);
        let knn = KnnTable::build(&sites.positions, k)?;
        let smoothing = SmoothingWeights::build(&sites.positions, &knn);
        Ok(Level { mesh, frames, smoothing, camera_sites: sites.camera_indices() })
    }
}

struct Optimizers {
    sdf: Adam,
    f_cse: Adam,
    f_fine: Adam,
    coarse: Adam,
    fine: Adam,
    sdf_mask: Vec<bool>,
    feature_mask: Vec<bool>,
}

impl Optimizers {
    fn new(sites: &SiteSet, params: &NetworkParams) -> Self {
        let n = sites.len();
        let sdf_mask: Vec<bool> = sites.kinds.iter().map(|k| *k == SiteKind::Free).collect();
        let feature_mask = sdf_mask.iter().flat_map(|&m| [m; FEATURE_DIM]).collect();
        Optimizers {
            sdf: Adam::new(n),
            f_cse: Adam::new(n * FEATURE_DIM),
            f_fine: Adam::new(n * FEATURE_DIM),
            coarse: Adam::new(params.coarse.params.len()),
            fine: Adam::new(params.fine.params.len()),
            sdf_mask,
            feature_mask,
        }
    }
}

/// Dense gradient of one training step.
struct StepGrads {
    loss: f64,
    samples: f64,
    sdf: Vec<f64>,
    f_cse: Vec<f64>,
    f_fine: Vec<f64>,
    coarse: Vec<f64>,
    fine: Vec<f64>,
}

/// The pixel drawn for ray `b` of step `iteration` at `level`.
fn draw_pixel(ds: &SceneDataset, seed: u64, level: u32, iteration: usize, b: usize) -> (usize, u32, u32, u64) {
    let key = [seed, 0x5A3, level as u64, iteration as u64, b as u64];
    let mut rng = KeyedRng::new(&key);
    let cam = rng.below(ds.cameras.len() as u64) as usize;
    let c = &ds.cameras[cam];
    let x = rng.below(c.width as u64) as u32;
    let y = rng.below(c.height as u64) as u32;
    (cam, x, y, hash_key(&key))
}

#[allow(clippy::too_many_arguments)]
fn photometric_step(
    ds: &SceneDataset,
    sites: &SiteSet,
    field: &FieldState,
    params: &NetworkParams,
    level: &Level,
    render: &RenderConfig,
    beta: f64,
    cfg: &TrainConfig,
    lvl: u32,
    iteration: usize,
) -> Result<StepGrads> {
    let ctx = RenderContext {
        mesh: &level.mesh,
        positions: &sites.positions,
        frames: &level.frames,
        field,
        params,
        beta,
        cfg: render,
    };
    let chunks: Vec<Result<(f64, usize, RayGrads)>> = (0..cfg.batch_rays.div_ceil(RAY_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut g = RayGrads::new(params);
            let items = (chunk * RAY_CHUNK..((chunk + 1) * RAY_CHUNK).min(cfg.batch_rays))
                .map(|b| {
                    let (cam, x, y, key) = draw_pixel(ds, cfg.seed, lvl, iteration, b);
                    let ray = ds.cameras[cam].pixel_ray(x, y)?;
                    Ok(RayItem { camera: level.camera_sites[cam], ray, key, c_gt: ds.images[cam].get(x, y) })
                })
                .collect::<Result<Vec<_>>>()?;
            let outs = render_batch(&ctx, &items, Some(&mut g))?;
            let loss = outs.iter().map(|o| o.loss).sum();
            let samples = outs.iter().map(|o| o.samples).sum();
            Ok((loss, samples, g))
        })
        .collect();
    let n = sites.len();
    let scale = 1.0 / cfg.batch_rays as f64;
    let mut out = StepGrads {
        loss: 0.0,
        samples: 0.0,
        sdf: vec![0.0; n],
        f_cse: vec![0.0; n * FEATURE_DIM],
        f_fine: vec![0.0; n * FEATURE_DIM],
        coarse: vec![0.0; params.coarse.params.len()],
        fine: vec![0.0; params.fine.params.len()],
    };
    for chunk in chunks {
        let (loss, samples, g) = chunk?;
        out.loss += loss * scale;
        out.samples += samples as f64 * scale;
        for (i, v) in g.sdf {
            out.sdf[i as usize] += v * scale;
        }
        for (i, f) in g.f_cse {
            let base = i as usize * FEATURE_DIM;
            (0..FEATURE_DIM).for_each(|k| out.f_cse[base + k] += f[k] * scale);
        }
        for (i, f) in g.f_fine {
            let base = i as usize * FEATURE_DIM;
            (0..FEATURE_DIM).for_each(|k| out.f_fine[base + k] += f[k] * scale);
        }
        out.coarse.iter_mut().zip(&g.coarse).for_each(|(a, b)| *a += b * scale);
        out.fine.iter_mut().zip(&g.fine).for_each(|(a, b)| *a += b * scale);
    }
    Ok(out)
}

fn flatten(f: &[[f64; FEATURE_DIM]]) -> Vec<f64> {
    f.iter().flatten().copied().collect()
}

fn unflatten(flat: &[f64], out: &mut [[f64; FEATURE_DIM]]) {
    for (i, f) in out.iter_mut().enumerate() {
        f.copy_from_slice(&flat[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]);
    }
}

/// Edges for the next level under the configured refinement mode.
fn refinement_edges(mesh: &TetMesh, sites: &SiteSet, sdf: &[f64], cfg: &TrainConfig, level: u32) -> Vec<[u32; 2]> {
    let adaptive = upsample_edges(mesh, sites, sdf);
    match cfg.refinement {
        Refinement::Adaptive => adaptive,
        Refinement::Uniform => {
            let count = cfg.uniform_counts.get(level as usize).copied().unwrap_or(adaptive.len());
            let mut all: Vec<(u64, [u32; 2])> = mesh
                .edges
                .iter()
                .filter(|e| !sites.is_camera(e[0] as usize) && !sites.is_camera(e[1] as usize))
                .map(|&e| (hash_key(&[cfg.seed, 0x0F1, level as u64, e[0] as u64, e[1] as u64]), e))
                .collect();
            all.sort_unstable();
            let mut chosen: Vec<[u32; 2]> = all.into_iter().take(count).map(|(_, e)| e).collect();
            chosen.sort_unstable();
            chosen
        }
    }
}

/// Runs the full coarse-to-fine schedule, calling `on_event` after every
/// step and level.
pub fn train(ds: &SceneDataset, cfg: &TrainConfig, mut on_event: impl FnMut(TrainEvent)) -> Result<TrainResult> {
    ds.validate()?;
    cfg.validate()?;
    let centers: Vec<Vec3> = ds.cameras.iter().map(|c| c.center()).collect();
    let mut sites = init_grid(&ds.bbox, cfg.grid_side, &centers)?;
    if sites.len() > cfg.max_sites {
        return Err(Error::invalid(format!("initial grid has {} sites, above max_sites", sites.len())));
    }
    let mut field = init_field(&sites.positions, &ds.bbox, cfg.seed);
    let mut params = NetworkParams::new(&cfg.network(), cfg.seed)?;
    let schedule = cfg.beta_schedule();
    let weights = cfg.reg_weights();
    let mut outputs = Vec::with_capacity(cfg.levels as usize);

    for lvl in 0..cfg.levels {
        let start = Instant::now();
        let level = Level::build(&sites, cfg)?;
        let render = cfg.render(lvl);
        let mut opt = Optimizers::new(&sites, &params);
        let decay = cfg.lr_decay.powi(lvl as i32);
        let mut tail = (0.0, 0usize);
        let mut beta = schedule.beta(lvl as u64 * cfg.iters_per_level as u64, lvl);
        for it in 0..cfg.iters_per_level {
            let global = lvl as u64 * cfg.iters_per_level as u64 + it as u64;
            beta = schedule.beta(global, lvl);
            let g = photometric_step(ds, &sites, &field, &params, &level, &render, beta, cfg, lvl, it)?;
            if !g.loss.is_finite() {
                return Err(Error::Numerical(format!("photometric loss became {} at level {lvl}, step {it}", g.loss)));
            }
            let n_tets = level.mesh.len().max(1) as f64;
            let n_edges = level.mesh.edges.len().max(1) as f64;
            let (_, mut g_reg) = normal_smoothing(&field.sdf, &level.smoothing, &level.mesh, &level.frames, cfg.reg_detach);
            g_reg.iter_mut().for_each(|x| *x /= n_tets);
            let (_, mut g_tv) = tv_loss(&field.sdf, &level.mesh.edges, &sites.positions)?;
            g_tv.iter_mut().for_each(|x| *x /= n_edges);
            let g_sdf = combine_sdf_gradient(&g.sdf, &g_reg, &g_tv, &weights)?;

            opt.sdf.step_masked(&mut field.sdf, &g_sdf, cfg.lr_sdf * decay, Some(&opt.sdf_mask))?;
            let mut flat = flatten(&field.f_cse);
            opt.f_cse.step_masked(&mut flat, &g.f_cse, cfg.lr_features * decay, Some(&opt.feature_mask))?;
            unflatten(&flat, &mut field.f_cse);
            let mut flat = flatten(&field.f_fine);
            opt.f_fine.step_masked(&mut flat, &g.f_fine, cfg.lr_features * decay, Some(&opt.feature_mask))?;
            unflatten(&flat, &mut field.f_fine);
            opt.coarse.step(&mut params.coarse.params, &g.coarse, cfg.lr_network * decay)?;
            opt.fine.step(&mut params.fine.params, &g.fine, cfg.lr_network * decay)?;

            if it >= cfg.iters_per_level - cfg.iters_per_level.div_ceil(10) {
                tail = (tail.0 + g.loss, tail.1 + 1);
            }
            on_event(TrainEvent::Step {
                level: lvl,
                iteration: it,
                loss: g.loss,
                beta,
                lambda: render.lambda,
                samples_per_ray: g.samples,
            });
        }
        field.check(sites.len())?;

        let mesh = marching_tetrahedra(&level.mesh, &sites.positions, &field.sdf, Some(&sites.kinds))?;
        let score = match &ds.gt_mesh {
            Some(gt) if !mesh.is_empty() => Some(chamfer(gt, &mesh, &cfg.chamfer())?),
            _ => None,
        };
        let mut report = LevelReport {
            level: lvl,
            n_sites: sites.len(),
            n_tets: level.mesh.len(),
            iterations: cfg.iters_per_level,
            final_loss: if tail.1 > 0 { tail.0 / tail.1 as f64 } else { f64::NAN },
            lambda: render.lambda,
            beta_end: beta,
            mesh_vertices: mesh.vertices.len(),
            mesh_triangles: mesh.triangles.len(),
            chamfer: score,
            added_sites: 0,
            cvt_ratio: None,
            seconds: 0.0,
        };
        let (next_sites, next_field) = if lvl + 1 < cfg.levels {
            let edges = refinement_edges(&level.mesh, &sites, &field.sdf, cfg, lvl);
            report.added_sites = edges.len();
            let (mut s, mut f) = insert_midpoints(&sites, &field, &edges);
            if s.len() > cfg.max_sites {
                return Err(Error::invalid(format!("refinement reached {} sites, above max_sites", s.len())));
            }
            if cfg.cvt_enabled {
                let (moved, cvt) = optimize_cvt(&s, &f.sdf, &cfg.cvt(lvl, Some(ds.bbox)))?;
                report.cvt_ratio = Some(cvt.losses.last().unwrap() / cvt.losses[0]);
                if cfg.cvt_resample {
                    let before = delaunay(&s.positions)?;
                    f = transfer_field(&before, &s.positions, &f, &moved.positions)?;
                }
                s = moved;
            }
            (s, f)
        } else {
            (sites.clone(), field.clone())
        };
        report.seconds = start.elapsed().as_secs_f64();
        let out = LevelOutput { sites: sites.clone(), field: field.clone(), mesh, report };
        on_event(TrainEvent::Level(&out));
        outputs.push(out);
        sites = next_sites;
        field = next_field;
    }
    Ok(TrainResult { levels: outputs, params })
}

/// Trains and writes per-level checkpoints (`level_K.vsdf`), meshes
/// (`mesh_level_K.ply`), the final `mesh.ply`, a step log (`train_log.csv`)
/// and `report.json` into `out`. With `dump_tets` each level's tetrahedral
/// mesh is also written as `tets_level_K.ply` with shrunken tets.
pub fn reconstruct_to_dir(
    ds: &SceneDataset,
    cfg: &TrainConfig,
    out: &Path,
    dump_tets: bool,
    mut on_event: impl FnMut(&TrainEvent),
) -> Result<TrainResult> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut log = String::from("level,iteration,loss,beta,lambda,samples_per_ray\n");
    let mut write_err = None;
    let result = train(ds, cfg, |ev| {
        match ev {
            TrainEvent::Step { level, iteration, loss, beta, lambda, samples_per_ray } => {
                log.push_str(&format!("{level},{iteration},{loss:?},{beta:?},{lambda:?},{samples_per_ray:?}\n"));
            }
            TrainEvent::Level(l) => {
                let k = l.report.level;
                let mut res = save_checkpoint(&out.join(format!("level_{k}.vsdf")), &l.sites, &l.field)
                    .and_then(|_| save_mesh(&out.join(format!("mesh_level_{k}.ply")), &l.mesh));
                if dump_tets && res.is_ok() {
                    res = delaunay(&l.sites.positions)
                        .and_then(|m| write_tet_ply(&out.join(format!("tets_level_{k}.ply")), &m, &l.sites.positions, 0.8));
                }
                if let Err(e) = res {
                    write_err.get_or_insert(e);
                }
            }
        }
        on_event(&ev);
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    save_mesh(&out.join("mesh.ply"), &result.final_level().mesh)?;
    let path = out.join("train_log.csv");
    std::fs::write(&path, log).map_err(|e| Error::io(&path, e))?;
    let reports: Vec<&LevelReport> = result.levels.iter().map(|l| &l.report).collect();
    let path = out.join("report.json");
    let text = serde_json::to_string_pretty(&reports).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let path = out.join("config.cfg");
    std::fs::write(&path, cfg.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(result)
}
