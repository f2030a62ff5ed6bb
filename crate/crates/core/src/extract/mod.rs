//! Surface extraction and geometric evaluation: marching tetrahedra over the
//! Delaunay mesh, triangle-mesh I/O, BVH point-to-mesh distances and
//! clipped Chamfer accuracy / completeness.

mod bvh;
mod chamfer;
mod io;
mod primitives;

pub use bvh::{closest_point_on_triangle, point_triangle_distance, Bvh};
pub use chamfer::{chamfer, chamfer_points, sample_surface, ChamferConfig, ChamferReport};
pub use io::{
    load_mesh, read_obj, read_ply, save_mesh, write_obj, write_ply, write_tet_ply,
};
pub use primitives::{box_mesh, icosphere, torus_mesh};

use std::collections::HashMap;

use rayon::prelude::*;

use crate::geom::{SiteKind, TetMesh, Vec3};
use crate::{Error, Result};

/// Indexed triangle mesh.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        if let Some(t) = triangles.iter().position(|t| t.iter().any(|&v| v >= n)) {
            return Err(Error::invalid(format!("triangle {t} references a vertex out of range")));
        }
        if let Some(i) = vertices.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid(format!("vertex {i} is not finite")));
        }
        Ok(TriMesh { vertices, triangles })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|v| self.vertices[v as usize])
    }

    /// Unnormalized normal `(b − a) × (c − a)`, twice the area in length.
    pub fn triangle_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangle(t);
        (b - a).cross(&(c - a))
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| 0.5 * self.triangle_normal(t).norm()).sum()
    }

    /// Signed enclosed volume; positive for closed, outward-oriented meshes.
    pub fn volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    pub fn translated(&self, d: &Vec3) -> TriMesh {
        TriMesh { vertices: self.vertices.iter().map(|p| p + d).collect(), triangles: self.triangles.clone() }
    }

    /// Every undirected edge bounds exactly two triangles, which traverse it
    /// in opposite directions.
    pub fn is_closed_manifold(&self) -> bool {
        let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(self.triangles.len() * 3);
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed.iter().all(|(&(a, b), &count)| count == 1 && directed.get(&(b, a)) == Some(&1))
    }
}

/// Where an emitted vertex lies: on a crossing edge, or exactly on a site
/// whose value is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum VertexKey {
    Edge(u32, u32),
    Site(u32),
}

fn crossing(a: u32, b: u32, positions: &[Vec3], sdf: &[f64]) -> (VertexKey, Vec3) {
    let (u, v) = (a.min(b), a.max(b));
    let (su, sv) = (sdf[u as usize], sdf[v as usize]);
    let t = su / (su - sv);
    if t <= 0.0 {
        return (VertexKey::Site(u), positions[u as usize]);
    }
    if t >= 1.0 {
        return (VertexKey::Site(v), positions[v as usize]);
    }
    let (pu, pv) = (positions[u as usize], positions[v as usize]);
    (VertexKey::Edge(u, v), pu + (pv - pu) * t)
}

/// Triangles of one tetrahedron, oriented with normals toward positive sdf.
fn tet_triangles(tet: &[u32; 4], positions: &[Vec3], sdf: &[f64]) -> Vec<[(VertexKey, Vec3); 3]> {
    let inside = tet.map(|v| sdf[v as usize] < 0.0);
    let neg: Vec<u32> = (0..4).filter(|&k| inside[k]).map(|k| tet[k]).collect();
    let pos: Vec<u32> = (0..4).filter(|&k| !inside[k]).map(|k| tet[k]).collect();
    let cx = |a: u32, b: u32| crossing(a, b, positions, sdf);
    let tris = match neg.len() {
        1 => vec![[cx(neg[0], pos[0]), cx(neg[0], pos[1]), cx(neg[0], pos[2])]],
        3 => vec![[cx(pos[0], neg[0]), cx(pos[0], neg[1]), cx(pos[0], neg[2])]],
        2 => {
            let (ac, ad, bd, bc) =
                (cx(neg[0], pos[0]), cx(neg[0], pos[1]), cx(neg[1], pos[1]), cx(neg[1], pos[0]));
            vec![[ac, ad, bd], [ac, bd, bc]]
        }
        _ => return Vec::new(),
    };
    let centroid = |ids: &[u32]| ids.iter().map(|&v| positions[v as usize]).sum::<Vec3>() / ids.len() as f64;
    let outward = centroid(&pos) - centroid(&neg);
    tris.into_iter()
        .map(|[a, b, c]| {
            let n = (b.1 - a.1).cross(&(c.1 - a.1));
            if n.dot(&outward) < 0.0 {
                [a, c, b]
            } else {
                [a, b, c]
            }
        })
        .collect()
}

/// Zero level set of the piecewise-linear field `sdf` over `mesh`.
///
/// Values exactly zero count as positive. Vertices on shared edges are
/// merged, so the output is watertight away from the hull. Tets touching a
/// camera site are skipped when `kinds` is given.
pub fn marching_tetrahedra(
    mesh: &TetMesh,
    positions: &[Vec3],
    sdf: &[f64],
    kinds: Option<&[SiteKind]>,
) -> Result<TriMesh> {
    crate::error::check_len(positions.len(), sdf.len())?;
    if let Some(k) = kinds {
        crate::error::check_len(positions.len(), k.len())?;
    }
    if let Some(i) = sdf.iter().position(|s| !s.is_finite()) {
        return Err(Error::Numerical(format!("sdf of site {i} is not finite")));
    }
    let per_tet: Vec<_> = mesh
        .tets
        .par_iter()
        .map(|tet| {
            if let Some(k) = kinds {
                if tet.iter().any(|&v| k[v as usize] == SiteKind::Camera) {
                    return Vec::new();
                }
            }
            tet_triangles(tet, positions, sdf)
        })
        .collect();
    let mut index: HashMap<VertexKey, u32> = HashMap::new();
    let mut out = TriMesh::default();
    for tri in per_tet.into_iter().flatten() {
        let ids = tri.map(|(key, p)| {
            *index.entry(key).or_insert_with(|| {
                out.vertices.push(p);
                (out.vertices.len() - 1) as u32
            })
        });
        if ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2] {
            out.triangles.push(ids);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{build_adjacency, delaunay};
    use crate::rng::KeyedRng;

    fn unit_tet() -> (TetMesh, Vec<Vec3>) {
        let p = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()];
        (build_adjacency(vec![[0, 1, 2, 3]], 4).unwrap(), p)
    }

    #[test]
    fn one_negative_vertex_gives_midpoint_triangle() {
        let (m, p) = unit_tet();
        let out = marching_tetrahedra(&m, &p, &[-1.0, 1.0, 1.0, 1.0], None).unwrap();
        assert_eq!(out.triangles.len(), 1);
        let mut v = out.vertices.clone();
        v.sort_by(|a, b| a.as_slice().partial_cmp(b.as_slice()).unwrap());
        assert_eq!(v, vec![Vec3::new(0.0, 0.0, 0.5), Vec3::new(0.0, 0.5, 0.0), Vec3::new(0.5, 0.0, 0.0)]);
        // normal points away from the negative corner at the origin
        assert!(out.triangle_normal(0).dot(&Vec3::new(1.0, 1.0, 1.0)) > 0.0);
    }

    #[test]
    fn two_negative_vertices_give_a_quad() {
        let (m, p) = unit_tet();
        let out = marching_tetrahedra(&m, &p, &[-1.0, -1.0, 1.0, 1.0], None).unwrap();
        assert_eq!(out.triangles.len(), 2);
        assert_eq!(out.vertices.len(), 4);
        let positive_dir = (p[2] + p[3] - p[0] - p[1]) / 2.0;
        for t in 0..2 {
            assert!(out.triangle_normal(t).dot(&positive_dir) > 0.0);
        }
    }

    #[test]
    fn constant_sign_gives_nothing() {
        let (m, p) = unit_tet();
        assert!(marching_tetrahedra(&m, &p, &[1.0; 4], None).unwrap().is_empty());
        assert!(marching_tetrahedra(&m, &p, &[-1.0; 4], None).unwrap().is_empty());
        assert!(marching_tetrahedra(&m, &p, &[0.0; 4], None).unwrap().is_empty());
    }

    #[test]
    fn sphere_in_random_cloud_is_closed_and_interpolates_zero() {
        let mut rng = KeyedRng::new(&[8]);
        let p: Vec<Vec3> =
            (0..3000).map(|_| Vec3::new(rng.range(-1.0, 1.0), rng.range(-1.0, 1.0), rng.range(-1.0, 1.0))).collect();
        let m = delaunay(&p).unwrap();
        let sdf: Vec<f64> = p.iter().map(|q| q.norm() - 0.6).collect();
        let out = marching_tetrahedra(&m, &p, &sdf, None).unwrap();
        assert!(out.is_closed_manifold());
        assert!(out.volume() > 0.0);
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 0.6f64.powi(3);
        assert!((out.volume() - exact).abs() < 0.1 * exact);
    }

    #[test]
    fn camera_tets_are_skipped() {
        let (m, p) = unit_tet();
        let kinds = [SiteKind::Camera, SiteKind::Free, SiteKind::Free, SiteKind::Free];
        assert!(marching_tetrahedra(&m, &p, &[-1.0, 1.0, 1.0, 1.0], Some(&kinds)).unwrap().is_empty());
    }

    #[test]
    fn zero_valued_site_collapses_degenerate_triangles() {
        let (m, p) = unit_tet();
        let out = marching_tetrahedra(&m, &p, &[-1.0, 0.0, 0.0, 1.0], None).unwrap();
        assert_eq!(out.triangles.len(), 1);
        for t in 0..out.triangles.len() {
            assert!(out.triangle_normal(t).norm() > 1e-12);
        }
    }
}
