//! Request and response bodies of the HTTP service and the operations that
//! execute them. Paths are interpreted on the machine running the service.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::extract::ChamferConfig;
use crate::pipeline::{
    cvt_bench, evaluate, load_scene, reconstruct_to_dir, save_scene, synth_scene, CvtBenchReport, EvalReport, LevelReport,
    Shape, TrainConfig, TrainEvent,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthRequest {
    /// `sphere`, `torus` or `box`.
    pub shape: String,
    pub views: usize,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthResponse {
    pub out: PathBuf,
    pub views: usize,
    pub gt_triangles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRequest {
    pub pred: PathBuf,
    pub gt: PathBuf,
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_clip() -> f64 {
    ChamferConfig::default().clip
}

fn default_samples() -> usize {
    ChamferConfig::default().n_samples
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvtBenchRequest {
    pub sites: usize,
    pub iters: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Contents of a configuration file; `name` is used in parse errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigText {
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructRequest {
    pub scene: PathBuf,
    pub out: PathBuf,
    #[serde(default)]
    pub config: Option<ConfigText>,
    /// Overrides the `levels` key of the configuration.
    #[serde(default)]
    pub levels: Option<u32>,
    /// Overrides the `seed` key of the configuration.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Also write each level's tetrahedral mesh as a PLY file.
    #[serde(default)]
    pub dump_tets: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobProgress {
    pub level: u32,
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobCreated {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: String,
    pub state: JobState,
    pub progress: Option<JobProgress>,
    /// Reports of the levels finished so far.
    pub levels: Vec<LevelReport>,
    pub error: Option<ApiError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorKind {
    Input,
    Numerical,
    NotFound,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{message}")]
pub struct ApiError {
    pub kind: ErrorKind,
    pub message: String,
}

impl ApiError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        ApiError { kind, message: message.into() }
    }

    /// Command line exit code: 2 for input errors, 3 for numerical
    /// failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Input | ErrorKind::NotFound => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::Internal => 1,
        }
    }
}

impl From<&Error> for ApiError {
    fn from(e: &Error) -> Self {
        let kind = if e.is_input_error() { ErrorKind::Input } else { ErrorKind::Numerical };
        ApiError::new(kind, e.to_string())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::from(&e)
    }
}

pub fn run_synth(req: &SynthRequest) -> Result<SynthResponse> {
    let shape: Shape = req.shape.parse()?;
    let ds = synth_scene(shape, req.views, (req.width, req.height), req.seed)?;
    save_scene(&req.out, &ds)?;
    Ok(SynthResponse {
        out: req.out.clone(),
        views: ds.cameras.len(),
        gt_triangles: ds.gt_mesh.as_ref().map_or(0, |m| m.triangles.len()),
    })
}

pub fn run_eval(req: &EvalRequest) -> Result<EvalReport> {
    if !(req.clip > 0.0 && req.clip.is_finite()) || req.samples == 0 {
        return Err(Error::invalid("eval needs a positive clip distance and sample count"));
    }
    evaluate(&req.pred, &req.gt, &ChamferConfig { clip: req.clip, n_samples: req.samples, seed: req.seed })
}

pub fn run_cvt_bench(req: &CvtBenchRequest) -> Result<CvtBenchReport> {
    cvt_bench(req.sites, req.iters, req.seed)
}

/// Configuration of a reconstruct request after applying overrides.
pub fn reconstruct_config(req: &ReconstructRequest) -> Result<TrainConfig> {
    let mut cfg = match &req.config {
        Some(c) => TrainConfig::parse(&c.text, Path::new(&c.name))?,
        None => TrainConfig::default(),
    };
    if let Some(levels) = req.levels {
        cfg.levels = levels;
    }
    if let Some(seed) = req.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs a reconstruction into `req.out`, reporting progress and finished
/// levels through the callbacks.
pub fn run_reconstruct(
    req: &ReconstructRequest,
    mut on_progress: impl FnMut(JobProgress),
    mut on_level: impl FnMut(&LevelReport),
) -> Result<Vec<LevelReport>> {
    let cfg = reconstruct_config(req)?;
    let ds = load_scene(&req.scene)?;
    let result = reconstruct_to_dir(&ds, &cfg, &req.out, req.dump_tets, |ev| match ev {
        TrainEvent::Step { level, iteration, loss, .. } => on_progress(JobProgress { level: *level, iteration: *iteration, loss: *loss }),
        TrainEvent::Level(l) => on_level(&l.report),
    })?;
    Ok(result.levels.into_iter().map(|l| l.report).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_kinds_map_to_exit_codes() {
        let input = ApiError::from(Error::invalid("x"));
        assert_eq!((input.kind, input.exit_code()), (ErrorKind::Input, 2));
        let num = ApiError::from(Error::Numerical("nan".into()));
        assert_eq!((num.kind, num.exit_code()), (ErrorKind::Numerical, 3));
        assert_eq!(ApiError::new(ErrorKind::Internal, "x").exit_code(), 1);
    }

    #[test]
    fn request_defaults_and_unknown_fields() {
        let r: EvalRequest = serde_json::from_str(r#"{"pred": "a.ply", "gt": "b.ply"}"#).unwrap();
        assert_eq!((r.clip, r.samples, r.seed), (0.1, 1_000_000, 0));
        assert!(serde_json::from_str::<EvalRequest>(r#"{"pred": "a", "gt": "b", "clipp": 1}"#).is_err());
        let s = serde_json::to_string(&JobState::Succeeded).unwrap();
        assert_eq!(s, "\"succeeded\"");
    }

    #[test]
    fn reconstruct_overrides() {
        let req = ReconstructRequest {
            scene: "s".into(),
            out: "o".into(),
            config: Some(ConfigText { name: "c.cfg".into(), text: "levels = 2\nseed = 5\n".into() }),
            levels: Some(1),
            seed: None,
            dump_tets: false,
        };
        let cfg = reconstruct_config(&req).unwrap();
        assert_eq!((cfg.levels, cfg.seed), (1, 5));
        let bad = ReconstructRequest { config: Some(ConfigText { name: "c.cfg".into(), text: "levels = x".into() }), ..req };
        let e = reconstruct_config(&bad).unwrap_err();
        assert!(e.to_string().starts_with("c.cfg:1:"), "{e}");
    }
}
