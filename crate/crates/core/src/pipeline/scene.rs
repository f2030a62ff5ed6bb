use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CameraModel;
use crate::extract::{load_mesh, save_mesh, TriMesh};
use crate::geom::{Aabb, Vec3};
use crate::{Error, Result};

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        RgbImage { width, height, data: vec![0; 3 * width as usize * height as usize] }
    }

    /// Color of pixel `(x, y)` in [0, 1].
    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        [0, 1, 2].map(|k| self.data[i + k] as f64 / 255.0)
    }

    /// Stores a [0, 1] color, rounded to 8 bits.
    pub fn set(&mut self, x: u32, y: u32, c: [f64; 3]) {
        let i = 3 * (y as usize * self.width as usize + x as usize);
        for k in 0..3 {
            self.data[i + k] = (c[k].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(f), self.width, self.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
        let mut w = enc.write_header().map_err(to_io)?;
        w.write_image_data(&self.data).map_err(to_io)?;
        w.finish().map_err(to_io)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: String| Error::Parse { file: path.to_path_buf(), line: 0, column: 0, message: m };
        let mut dec = png::Decoder::new(std::io::BufReader::new(f));
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec.read_info().map_err(|e| bad(e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| bad("image too large".into()))?];
        let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
        let (w, h) = (info.width, info.height);
        let px = (w * h) as usize;
        let data: Vec<u8> = match info.color_type {
            png::ColorType::Rgb => buf[..3 * px].to_vec(),
            png::ColorType::Rgba => buf[..4 * px].chunks(4).flat_map(|c| [c[0], c[1], c[2]]).collect(),
            png::ColorType::Grayscale => buf[..px].iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => buf[..2 * px].chunks(2).flat_map(|c| [c[0], c[0], c[0]]).collect(),
            other => return Err(bad(format!("unsupported PNG color type {other:?}"))),
        };
        Ok(RgbImage { width: w, height: h, data })
    }
}

/// Calibrated views of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDataset {
    pub cameras: Vec<CameraModel>,
    pub images: Vec<RgbImage>,
    pub gt_mesh: Option<TriMesh>,
    pub bbox: Aabb,
}

impl SceneDataset {
    pub fn validate(&self) -> Result<()> {
        if !self.bbox.is_nonempty() {
            return Err(Error::invalid("scene bbox is empty"));
        }
        if self.cameras.is_empty() {
            return Err(Error::invalid("scene has no cameras"));
        }
        crate::error::check_len(self.cameras.len(), self.images.len())?;
        for (i, (c, img)) in self.cameras.iter().zip(&self.images).enumerate() {
            c.validate().map_err(|e| Error::invalid(format!("camera {i}: {e}")))?;
            if (c.width, c.height) != (img.width, img.height) {
                return Err(Error::invalid(format!(
                    "image {i} is {}x{} but camera {i} expects {}x{}",
                    img.width, img.height, c.width, c.height
                )));
            }
        }
        Ok(())
    }

    pub fn n_pixels(&self) -> u64 {
        self.cameras.iter().map(|c| c.width as u64 * c.height as u64).sum()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CameraJson {
    file: String,
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    w2c: [f64; 16],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneJson {
    bbox: [[f64; 3]; 2],
    cameras: Vec<CameraJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_mesh: Option<String>,
}

/// Reads `scene.json`, its PNG images and the optional ground-truth mesh.
pub fn load_scene(dir: &Path) -> Result<SceneDataset> {
    let path = dir.join("scene.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let json: SceneJson = serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.clone(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut cameras = Vec::with_capacity(json.cameras.len());
    let mut images = Vec::with_capacity(json.cameras.len());
    for c in &json.cameras {
        let mut cam = CameraModel {
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: nalgebra::Matrix3::identity(),
            translation: Vec3::zeros(),
        };
        cam.set_w2c(&c.w2c)?;
        cameras.push(cam);
        images.push(RgbImage::load_png(&dir.join(&c.file))?);
    }
    let gt_mesh = json.gt_mesh.as_ref().map(|f| load_mesh(&dir.join(f))).transpose()?;
    let [lo, hi] = json.bbox;
    let ds = SceneDataset { cameras, images, gt_mesh, bbox: Aabb::new(Vec3::from(lo), Vec3::from(hi)) };
    ds.validate()?;
    Ok(ds)
}

/// Writes `scene.json`, `view_XXX.png` images and `gt.ply` when present.
pub fn save_scene(dir: &Path, ds: &SceneDataset) -> Result<()> {
    ds.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut cams = Vec::with_capacity(ds.cameras.len());
    for (i, (c, img)) in ds.cameras.iter().zip(&ds.images).enumerate() {
        let file = format!("view_{i:03}.png");
        img.save_png(&dir.join(&file))?;
        cams.push(CameraJson { file, width: c.width, height: c.height, fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy, w2c: c.w2c() });
    }
    let gt_mesh = match &ds.gt_mesh {
        Some(m) => {
            save_mesh(&dir.join("gt.ply"), m)?;
            Some("gt.ply".to_string())
        }
        None => None,
    };
    let json = SceneJson {
        bbox: [ds.bbox.min.into(), ds.bbox.max.into()],
        cameras: cams,
        gt_mesh,
    };
    let path = dir.join("scene.json");
    let text = serde_json::to_string_pretty(&json).map_err(|e| Error::invalid(e.to_string()))?;
    let mut f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(text.as_bytes()).and_then(|_| f.write_all(b"\n")).map_err(|e| Error::io(&path, e))
}
