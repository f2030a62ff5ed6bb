//! Geometry kernel: sites, bounding boxes, KD-tree neighbor queries,
//! Delaunay tetrahedralization and the adjacency-linked tetrahedral mesh.

mod delaunay;
mod kdtree;
mod mesh;
pub mod predicates;

pub use delaunay::{delaunay, delaunay_with, DelaunayOptions};
pub use kdtree::{KdTree, KnnTable};
pub use mesh::{build_adjacency, NeighborRef, TetMesh, FACE_VERTICES};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteKind {
    Free,
    /// Camera centers: ray-marching seeds, never moved by CVT optimization.
    Camera,
}

/// CVT sites of one hierarchy level.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSet {
    pub positions: Vec<Vec3>,
    pub kinds: Vec<SiteKind>,
    pub level: u32,
}

impl SiteSet {
    pub fn new(positions: Vec<Vec3>, kinds: Vec<SiteKind>, level: u32) -> Result<Self> {
        crate::error::check_len(positions.len(), kinds.len())?;
        if let Some(i) = positions.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("site {i} has a non-finite position")));
        }
        Ok(SiteSet { positions, kinds, level })
    }

    pub fn free(positions: Vec<Vec3>) -> Self {
        let kinds = vec![SiteKind::Free; positions.len()];
        SiteSet { positions, kinds, level: 0 }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn is_camera(&self, i: usize) -> bool {
        self.kinds[i] == SiteKind::Camera
    }

    pub fn camera_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_camera(i)).collect()
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::from_points(&self.positions)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    pub fn cube(center: Vec3, half: f64) -> Self {
        let h = Vec3::repeat(half);
        Aabb { min: center - h, max: center + h }
    }

    pub fn from_points(points: &[Vec3]) -> Self {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            min = min.inf(p);
            max = max.sup(p);
        }
        Aabb { min, max }
    }

    pub fn is_nonempty(&self) -> bool {
        (0..3).all(|k| self.max[k] > self.min[k] && self.min[k].is_finite() && self.max[k].is_finite())
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Scales the box about its center.
    pub fn scaled(&self, factor: f64) -> Self {
        let c = self.center();
        let h = self.extent() * (0.5 * factor);
        Aabb { min: c - h, max: c + h }
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        p.sup(&self.min).inf(&self.max)
    }
}

/// Affine frame of a tetrahedron: origin vertex plus the inverse of the
/// edge matrix. Rows of the inverse are the spatial gradients of the
/// barycentric weights 1..3; the gradient of weight 0 is minus their sum.
#[derive(Debug, Clone, Copy)]
pub struct TetFrame {
    pub origin: Vec3,
    pub inv: Matrix3<f64>,
}

impl TetFrame {
    pub fn new(v: &[Vec3; 4]) -> Result<Self> {
        let e = Matrix3::from_columns(&[v[1] - v[0], v[2] - v[0], v[3] - v[0]]);
        let det = e.determinant();
        let scale = (v[1] - v[0]).norm().max((v[2] - v[0]).norm()).max((v[3] - v[0]).norm());
        if !(det.abs() > 1e-14 * scale * scale * scale) {
            return Err(Error::Degenerate(format!("tetrahedron volume determinant {det:e} is below tolerance")));
        }
        let inv = e.try_inverse().ok_or_else(|| Error::Degenerate("singular tetrahedron".into()))?;
        Ok(TetFrame { origin: v[0], inv })
    }

    pub fn barycentric(&self, p: &Vec3) -> [f64; 4] {
        let w = self.inv * (p - self.origin);
        [1.0 - w[0] - w[1] - w[2], w[0], w[1], w[2]]
    }

    /// Spatial gradients of the four barycentric weights.
    pub fn weight_gradients(&self) -> [Vec3; 4] {
        let r1 = self.inv.row(0).transpose();
        let r2 = self.inv.row(1).transpose();
        let r3 = self.inv.row(2).transpose();
        [-(r1 + r2 + r3), r1, r2, r3]
    }
}

/// Barycentric weights of `p` with respect to a tetrahedron.
pub fn barycentric(tet: &[Vec3; 4], p: &Vec3) -> Result<[f64; 4]> {
    Ok(TetFrame::new(tet)?.barycentric(p))
}

/// Six times the signed volume; positive for positively oriented tets.
pub fn orientation_det(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    (b - a).cross(&(c - a)).dot(&(d - a))
}
