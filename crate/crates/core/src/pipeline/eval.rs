use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cvt::{optimize_cvt_with, CvtConfig};
use crate::extract::{chamfer, load_mesh, ChamferConfig};
use crate::geom::{SiteSet, Vec3};
use crate::rng::KeyedRng;
use crate::Result;

/// Chamfer scores in millimeters (scene units are meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_mm: f64,
    pub compl_mm: f64,
}

pub fn evaluate(pred: &Path, gt: &Path, cfg: &ChamferConfig) -> Result<EvalReport> {
    let pred = load_mesh(pred)?;
    let gt = load_mesh(gt)?;
    let r = chamfer(&gt, &pred, cfg)?;
    Ok(EvalReport { acc_mm: 1000.0 * r.acc, compl_mm: 1000.0 * r.compl })
}

/// `side³` lattice sites in the unit cube, each moved by up to
/// `jitter × spacing` per axis.
pub fn jittered_lattice(side: usize, jitter: f64, seed: u64) -> Vec<Vec3> {
    let h = 1.0 / side as f64;
    let mut out = Vec::with_capacity(side.pow(3));
    for x in 0..side {
        for y in 0..side {
            for z in 0..side {
                let mut rng = KeyedRng::new(&[seed, 0x1A7, out.len() as u64]);
                let j = Vec3::new(rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)) * (jitter * h);
                out.push(Vec3::new(x as f64 + 0.5, y as f64 + 0.5, z as f64 + 0.5) * h + j);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvtBenchRow {
    pub iteration: usize,
    pub loss: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvtBenchReport {
    pub sites: usize,
    pub rows: Vec<CvtBenchRow>,
    pub total_s: f64,
    pub threads: usize,
}

impl CvtBenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss,elapsed_s\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:?},{:.6}\n", r.iteration, r.loss, r.elapsed_s));
        }
        s
    }
}

/// Times the CVT optimizer on `n_sites` uniform random sites in the unit
/// cube with a constant SDF.
pub fn cvt_bench(n_sites: usize, iterations: usize, seed: u64) -> Result<CvtBenchReport> {
    let mut rng = KeyedRng::new(&[seed, 0xBE4C]);
    let positions: Vec<Vec3> = (0..n_sites).map(|_| Vec3::new(rng.uniform(), rng.uniform(), rng.uniform())).collect();
    let sites = SiteSet::free(positions);
    let cfg = CvtConfig { n_iterations: iterations, rng_seed: seed, ..Default::default() };
    let sdf = vec![1.0; n_sites];
    let start = Instant::now();
    let mut rows = Vec::with_capacity(iterations + 1);
    optimize_cvt_with(&sites, &sdf, &cfg, |iteration, loss, _| {
        rows.push(CvtBenchRow { iteration, loss, elapsed_s: start.elapsed().as_secs_f64() });
    })?;
    Ok(CvtBenchReport { sites: n_sites, rows, total_s: start.elapsed().as_secs_f64(), threads: rayon::current_num_threads() })
}
