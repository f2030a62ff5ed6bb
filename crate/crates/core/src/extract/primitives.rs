//! Closed, outward-oriented triangle meshes of analytic shapes.

use std::collections::HashMap;

use super::TriMesh;
use crate::geom::Vec3;

/// Subdivided icosahedron with vertices on the sphere of radius `r` about
/// the origin.
pub fn icosphere(r: f64, depth: u32) -> TriMesh {
    let g = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3> = [
        (-1.0, g, 0.0),
        (1.0, g, 0.0),
        (-1.0, -g, 0.0),
        (1.0, -g, 0.0),
        (0.0, -1.0, g),
        (0.0, 1.0, g),
        (0.0, -1.0, -g),
        (0.0, 1.0, -g),
        (g, 0.0, -1.0),
        (g, 0.0, 1.0),
        (-g, 0.0, -1.0),
        (-g, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut f: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..depth {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, v: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                v.push(((v[a as usize] + v[b as usize]) / 2.0).normalize());
                (v.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for [a, b, c] in f {
            let ab = midpoint(a, b, &mut v);
            let bc = midpoint(b, c, &mut v);
            let ca = midpoint(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    TriMesh { vertices: v.into_iter().map(|p| p * r).collect(), triangles: f }
}

/// Torus about the z axis with tube radius `minor`, sampled on an
/// `n_major × n_minor` parameter grid.
pub fn torus_mesh(major: f64, minor: f64, n_major: u32, n_minor: u32) -> TriMesh {
    let mut vertices = Vec::with_capacity((n_major * n_minor) as usize);
    for i in 0..n_major {
        let u = std::f64::consts::TAU * i as f64 / n_major as f64;
        for j in 0..n_minor {
            let w = std::f64::consts::TAU * j as f64 / n_minor as f64;
            let rad = major + minor * w.cos();
            vertices.push(Vec3::new(rad * u.cos(), rad * u.sin(), minor * w.sin()));
        }
    }
    let id = |i: u32, j: u32| (i % n_major) * n_minor + (j % n_minor);
    let mut triangles = Vec::with_capacity((2 * n_major * n_minor) as usize);
    for i in 0..n_major {
        for j in 0..n_minor {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    TriMesh { vertices, triangles }
}

/// Axis-aligned box with half extents `half`, each face split into an
/// `n × n` grid of quads.
pub fn box_mesh(half: Vec3, n: u32) -> TriMesh {
    let mut index: HashMap<[i64; 3], u32> = HashMap::new();
    let mut mesh = TriMesh::default();
    let n = n.max(1) as i64;
    let mut vertex = |g: [i64; 3], mesh: &mut TriMesh| {
        *index.entry(g).or_insert_with(|| {
            let p = Vec3::from_fn(|d, _| half[d] * (2.0 * g[d] as f64 / n as f64 - 1.0));
            mesh.vertices.push(p);
            (mesh.vertices.len() - 1) as u32
        })
    };
    for axis in 0..3 {
        let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0, n] {
            for i in 0..n {
                for j in 0..n {
                    let corner = |di: i64, dj: i64| {
                        let mut g = [0i64; 3];
                        g[axis] = side;
                        g[u] = i + di;
                        g[w] = j + dj;
                        g
                    };
                    let q = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)].map(|g| vertex(g, &mut mesh));
                    // (u, w, axis) is right-handed, so CCW in (u, w) faces +axis
                    if side == n {
                        mesh.triangles.push([q[0], q[1], q[2]]);
                        mesh.triangles.push([q[0], q[2], q[3]]);
                    } else {
                        mesh.triangles.push([q[0], q[2], q[1]]);
                        mesh.triangles.push([q[0], q[3], q[2]]);
                    }
                }
            }
        }
    }
    mesh
}
