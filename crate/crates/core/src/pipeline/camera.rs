use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use crate::geom::Vec3;
use crate::traverse::Ray;
use crate::{Error, Result};

/// Pinhole camera with OpenCV axes (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation.
    pub rotation: Matrix3<f64>,
    /// World-to-camera translation.
    pub translation: Vec3,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("camera focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera image size must be positive"));
        }
        let r = &self.rotation;
        if (r.transpose() * r - Matrix3::identity()).amax() > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("camera rotation is not a proper orthonormal matrix"));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, width: u32, height: u32, fov_y: f64) -> Result<Self> {
        let fwd = (target - eye).try_normalize(1e-12).ok_or_else(|| Error::invalid("camera eye equals target"))?;
        let right = fwd.cross(&up).try_normalize(1e-12).ok_or_else(|| Error::invalid("camera up is parallel to view"))?;
        let down = fwd.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        let f = 0.5 * height as f64 / (0.5 * fov_y).tan();
        let cam = CameraModel {
            width,
            height,
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            rotation,
            translation: -(rotation * eye),
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Row-major 4×4 world-to-camera matrix.
    pub fn w2c(&self) -> [f64; 16] {
        let mut m = [0.0; 16];
        for r in 0..3 {
            for c in 0..3 {
                m[4 * r + c] = self.rotation[(r, c)];
            }
            m[4 * r + 3] = self.translation[r];
        }
        m[15] = 1.0;
        m
    }

    pub fn set_w2c(&mut self, m: &[f64; 16]) -> Result<()> {
        let mat = Matrix4::from_row_slice(m);
        if mat.row(3).iter().zip([0.0, 0.0, 0.0, 1.0]).any(|(a, b)| *a != b) {
            return Err(Error::invalid("w2c last row must be (0, 0, 0, 1)"));
        }
        self.rotation = mat.fixed_view::<3, 3>(0, 0).into_owned();
        self.translation = mat.fixed_view::<3, 1>(0, 3).into_owned();
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Optical axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.rotation.row(2).transpose()
    }

    /// Ray through the center of pixel `(x, y)`.
    pub fn pixel_ray(&self, x: u32, y: u32) -> Result<Ray> {
        if x >= self.width || y >= self.height {
            return Err(Error::invalid(format!("pixel ({x}, {y}) outside {}x{} image", self.width, self.height)));
        }
        let d = Vec3::new((x as f64 + 0.5 - self.cx) / self.fx, (y as f64 + 0.5 - self.cy) / self.fy, 1.0);
        Ray::new(self.center(), self.rotation.transpose() * d)
    }

    /// Pixel coordinates of a world point, or `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let q = self.rotation * p + self.translation;
        (q.z > 0.0).then(|| (self.fx * q.x / q.z + self.cx, self.fy * q.y / q.z + self.cy))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraModel {
        CameraModel {
            width: 21,
            height: 11,
            fx: 20.0,
            fy: 25.0,
            cx: 10.5,
            cy: 5.5,
            rotation: Matrix3::identity(),
            translation: Vec3::new(0.0, 0.0, 2.0),
        }
    }

    #[test]
    fn principal_point_looks_forward() {
        let c = cam();
        let r = c.pixel_ray(10, 5).unwrap();
        assert_eq!(r.dir, c.forward());
        assert_eq!(r.origin, Vec3::new(0.0, 0.0, -2.0));
    }

    #[test]
    fn corner_pixel_matches_pinhole_formula() {
        let c = cam();
        let r = c.pixel_ray(0, 0).unwrap();
        let expect = Vec3::new(-10.0 / 20.0, -5.0 / 25.0, 1.0).normalize();
        assert!((r.dir - expect).norm() < 1e-15);
        assert!((r.dir.norm() - 1.0).abs() < 1e-15);
        assert!(c.pixel_ray(21, 0).is_err());
    }

    #[test]
    fn look_at_projects_target_to_center() {
        let eye = Vec3::new(2.0, -1.0, 1.5);
        let c = CameraModel::look_at(eye, Vec3::zeros(), Vec3::z(), 64, 48, 0.8).unwrap();
        assert!((c.center() - eye).norm() < 1e-14);
        let (u, v) = c.project(&Vec3::zeros()).unwrap();
        assert!((u - 32.0).abs() < 1e-12 && (v - 24.0).abs() < 1e-12);
        // world up projects upward in the image
        let (_, v_up) = c.project(&Vec3::new(0.0, 0.0, 0.1)).unwrap();
        assert!(v_up < 24.0);
    }

    #[test]
    fn w2c_round_trip_and_validation() {
        let c = CameraModel::look_at(Vec3::new(0.3, 2.0, 0.1), Vec3::zeros(), Vec3::z(), 8, 8, 1.0).unwrap();
        let mut d = cam();
        d.set_w2c(&c.w2c()).unwrap();
        assert_eq!(d.rotation, c.rotation);
        assert_eq!(d.translation, c.translation);
        let mut bad = c.w2c();
        bad[0] *= 2.0;
        d.set_w2c(&bad).unwrap();
        assert!(d.validate().is_err());
        bad[12] = 1.0;
        assert!(d.set_w2c(&bad).is_err());
    }
}
