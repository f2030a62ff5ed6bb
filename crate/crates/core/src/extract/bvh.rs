use super::TriMesh;
use crate::geom::{Aabb, Vec3};
use crate::{Error, Result};

const LEAF_SIZE: usize = 4;

/// Closest point to `p` on triangle `(a, b, c)` by Voronoi-region
/// classification.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    // interior: orthogonal projection onto the supporting plane
    let n = ab.cross(&ac);
    p - n * (ap.dot(&n) / n.norm_squared())
}

pub fn point_triangle_distance(p: &Vec3, tri: &[Vec3; 3]) -> f64 {
    (p - closest_point_on_triangle(p, &tri[0], &tri[1], &tri[2])).norm()
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    /// Leaf: `[start, end)` into the triangle order; inner: child indices.
    a: u32,
    b: u32,
    leaf: bool,
}

/// Bounding-volume hierarchy over the triangles of a mesh.
#[derive(Debug, Clone)]
pub struct Bvh {
    tris: Vec<[Vec3; 3]>,
    nodes: Vec<Node>,
}

fn box_distance_sq(b: &Aabb, p: &Vec3) -> f64 {
    (0..3)
        .map(|d| {
            let e = (b.min[d] - p[d]).max(0.0).max(p[d] - b.max[d]);
            e * e
        })
        .sum()
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Result<Self> {
        if mesh.is_empty() {
            return Err(Error::invalid("cannot measure distance to an empty mesh"));
        }
        let all: Vec<[Vec3; 3]> = (0..mesh.triangles.len()).map(|t| mesh.triangle(t)).collect();
        let centroids: Vec<Vec3> = all.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<u32> = (0..all.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * all.len() / LEAF_SIZE + 1);
        build_node(&all, &centroids, &mut order, 0, &mut nodes);
        let tris = order.iter().map(|&t| all[t as usize]).collect();
        Ok(Bvh { tris, nodes })
    }

    /// Exact distance from `p` to the nearest triangle.
    pub fn distance(&self, p: &Vec3) -> f64 {
        self.distance_sq_below(p, f64::INFINITY).sqrt()
    }

    /// Squared distance, with branches farther than `bound²` skipped; the
    /// result is exact whenever it is below `bound²`.
    pub fn distance_sq_below(&self, p: &Vec3, bound: f64) -> f64 {
        let mut best = if bound.is_finite() { bound * bound } else { f64::INFINITY };
        let mut stack = vec![0u32];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n as usize];
            if box_distance_sq(&node.bounds, p) > best {
                continue;
            }
            if node.leaf {
                for t in &self.tris[node.a as usize..node.b as usize] {
                    let d = (p - closest_point_on_triangle(p, &t[0], &t[1], &t[2])).norm_squared();
                    best = best.min(d);
                }
            } else {
                let (da, db) = (
                    box_distance_sq(&self.nodes[node.a as usize].bounds, p),
                    box_distance_sq(&self.nodes[node.b as usize].bounds, p),
                );
                // visit the nearer child first
                if da <= db {
                    stack.push(node.b);
                    stack.push(node.a);
                } else {
                    stack.push(node.a);
                    stack.push(node.b);
                }
            }
        }
        best
    }
}

fn build_node(all: &[[Vec3; 3]], centroids: &[Vec3], order: &mut [u32], offset: usize, nodes: &mut Vec<Node>) -> u32 {
    let me = nodes.len() as u32;
    let mut bounds = Aabb::new(Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
    for &t in order.iter() {
        for v in &all[t as usize] {
            bounds.min = bounds.min.inf(v);
            bounds.max = bounds.max.sup(v);
        }
    }
    if order.len() <= LEAF_SIZE {
        nodes.push(Node { bounds, a: offset as u32, b: (offset + order.len()) as u32, leaf: true });
        return me;
    }
    let ext = bounds.extent();
    let dim = (0..3).max_by(|&a, &b| ext[a].total_cmp(&ext[b])).unwrap();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        centroids[a as usize][dim].total_cmp(&centroids[b as usize][dim]).then(a.cmp(&b))
    });
    nodes.push(Node { bounds, a: 0, b: 0, leaf: false });
    let (l, r) = order.split_at_mut(mid);
    let left = build_node(all, centroids, l, offset, nodes);
    let right = build_node(all, centroids, r, offset + mid, nodes);
    nodes[me as usize].a = left;
    nodes[me as usize].b = right;
    me
}
