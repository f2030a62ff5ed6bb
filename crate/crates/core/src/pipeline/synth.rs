//! Analytic test scenes rendered by sphere tracing.

use nalgebra::Rotation3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CameraModel, RgbImage, SceneDataset};
use crate::extract::{box_mesh, icosphere, torus_mesh, TriMesh};
use crate::geom::{Aabb, Vec3};
use crate::rng::KeyedRng;
use crate::{Error, Result};

pub const SPHERE_RADIUS: f64 = 0.5;
pub const TORUS_RADII: (f64, f64) = (0.5, 0.2);
pub const BOX_HALF: [f64; 3] = [0.45, 0.35, 0.3];
/// Distance of the cameras from the origin.
pub const VIEW_RADIUS: f64 = 3.0;
pub const FOV_Y: f64 = 40.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sphere,
    Torus,
    Box,
}

impl std::str::FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(Shape::Sphere),
            "torus" => Ok(Shape::Torus),
            "box" => Ok(Shape::Box),
            _ => Err(Error::invalid(format!("unknown shape '{s}' (expected sphere, torus or box)"))),
        }
    }
}

impl Shape {
    /// Exact signed distance to the shape centered at the origin.
    pub fn sdf(self, p: &Vec3) -> f64 {
        match self {
            Shape::Sphere => p.norm() - SPHERE_RADIUS,
            Shape::Torus => {
                let q = (p.x * p.x + p.y * p.y).sqrt() - TORUS_RADII.0;
                (q * q + p.z * p.z).sqrt() - TORUS_RADII.1
            }
            Shape::Box => {
                let q = Vec3::from_fn(|d, _| p[d].abs() - BOX_HALF[d]);
                q.sup(&Vec3::zeros()).norm() + q.max().min(0.0)
            }
        }
    }

    pub fn normal(self, p: &Vec3) -> Vec3 {
        let h = 1e-6;
        Vec3::from_fn(|d, _| {
            let mut e = Vec3::zeros();
            e[d] = h;
            self.sdf(&(p + e)) - self.sdf(&(p - e))
        })
        .normalize()
    }

    /// Closed triangulation of the surface.
    pub fn mesh(self) -> TriMesh {
        match self {
            Shape::Sphere => icosphere(SPHERE_RADIUS, 5),
            Shape::Torus => torus_mesh(TORUS_RADII.0, TORUS_RADII.1, 192, 96),
            Shape::Box => box_mesh(Vec3::from(BOX_HALF), 8),
        }
    }

    /// Distance along the ray to the surface, by sphere tracing.
    pub fn trace(self, o: &Vec3, d: &Vec3, t_max: f64) -> Option<f64> {
        let mut t = 0.0;
        for _ in 0..1024 {
            let s = self.sdf(&(o + d * t));
            if s < 1e-9 {
                return Some(t);
            }
            t += s;
            if t > t_max {
                return None;
            }
        }
        None
    }
}

/// Procedural albedo: smooth color bands in [0.15, 0.9].
pub fn albedo(p: &Vec3) -> [f64; 3] {
    let w = 7.0;
    [0.0, 2.1, 4.2].map(|phase: f64| {
        let s = (w * p.x + phase).sin() * (w * p.y + 0.5 * phase).sin() * (w * p.z - phase).cos();
        0.525 + 0.375 * s
    })
}

/// Lambertian shading plus a view-dependent highlight.
pub fn shade(p: &Vec3, n: &Vec3, view: &Vec3) -> [f64; 3] {
    let light = Vec3::new(1.0, 0.8, 2.0).normalize();
    let diffuse = 0.35 + 0.65 * n.dot(&light).max(0.0);
    let half = (light - view).normalize();
    let spec = 0.25 * n.dot(&half).max(0.0).powi(24);
    albedo(p).map(|a| (a * diffuse + spec).clamp(0.0, 1.0))
}

/// `n` camera centers on a Fibonacci sphere of radius [`VIEW_RADIUS`],
/// randomly rotated by `seed`.
pub fn view_sphere(n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = KeyedRng::new(&[seed, 0x7137]);
    let axis = nalgebra::Unit::new_normalize(Vec3::new(rng.normal(), rng.normal(), rng.normal()));
    let rot = Rotation3::from_axis_angle(&axis, rng.range(0.0, std::f64::consts::TAU));
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            rot * Vec3::new(r * phi.cos(), r * phi.sin(), z) * VIEW_RADIUS
        })
        .collect()
}

/// Renders `n_views` images of `shape` over a black background.
pub fn synth_scene(shape: Shape, n_views: usize, resolution: (u32, u32), seed: u64) -> Result<SceneDataset> {
    if n_views == 0 || resolution.0 == 0 || resolution.1 == 0 {
        return Err(Error::invalid("synth needs at least one view and a nonzero resolution"));
    }
    let (w, h) = resolution;
    let mut cameras = Vec::with_capacity(n_views);
    for eye in view_sphere(n_views, seed) {
        let up = if eye.normalize().z.abs() > 0.95 { Vec3::y() } else { Vec3::z() };
        cameras.push(CameraModel::look_at(eye, Vec3::zeros(), up, w, h, FOV_Y)?);
    }
    let images = cameras
        .par_iter()
        .map(|cam| -> Result<RgbImage> {
            let mut img = RgbImage::new(w, h);
            for y in 0..h {
                for x in 0..w {
                    let ray = cam.pixel_ray(x, y)?;
                    if let Some(t) = shape.trace(&ray.origin, &ray.dir, 2.0 * VIEW_RADIUS) {
                        let p = ray.at(t);
                        img.set(x, y, shade(&p, &shape.normal(&p), &ray.dir));
                    }
                }
            }
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneDataset {
        cameras,
        images,
        gt_mesh: Some(shape.mesh()),
        bbox: Aabb::new(Vec3::repeat(-1.0), Vec3::repeat(1.0)),
    })
}
