//! Orchestration: cameras and datasets, synthetic scenes, configuration,
//! the coarse-to-fine training schedule, evaluation and benchmarks.

mod camera;
mod config;
mod eval;
mod scene;
mod synth;
mod train;

pub use camera::CameraModel;
pub use config::{Refinement, TrainConfig, CONFIG_KEYS};
pub use eval::{cvt_bench, evaluate, jittered_lattice, CvtBenchReport, CvtBenchRow, EvalReport};
pub use scene::{load_scene, save_scene, RgbImage, SceneDataset};
pub use synth::{albedo, shade, synth_scene, view_sphere, Shape};
pub use train::{init_grid, reconstruct_to_dir, train, LevelOutput, LevelReport, TrainEvent, TrainResult};
