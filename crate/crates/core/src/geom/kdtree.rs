use rayon::prelude::*;

use super::Vec3;
use crate::{Error, Result};

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { dim: u8, value: f64, left: u32, right: u32 },
}

/// Balanced KD-tree over a frozen snapshot of points.
///
/// Neighbor order is (squared distance, index) lexicographic, so results are
/// identical to a brute-force scan even when distances tie.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    ids: Vec<u32>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("cannot build a KD-tree over zero sites"));
        }
        let mut ids: Vec<u32> = (0..points.len() as u32).collect();
        let pts: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        build_node(&pts, &mut ids, 0, &mut nodes);
        let points = ids.iter().map(|&i| pts[i as usize]).collect();
        Ok(KdTree { points, ids, nodes })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Closest site to `q` and its distance.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let best = self.search(q, 1, None);
        (best[0].1 as usize, best[0].0.sqrt())
    }

    /// The `k` closest sites to `q`, by ascending distance.
    pub fn knn(&self, q: &Vec3, k: usize) -> Result<Vec<usize>> {
        if k > self.len() {
            return Err(Error::invalid(format!("k = {k} exceeds the {} indexed sites", self.len())));
        }
        Ok(self.search(q, k, None).into_iter().map(|(_, i)| i as usize).collect())
    }

    /// The `k` closest sites to `q` other than site `exclude` (the query site
    /// itself when `q` is a member).
    pub fn knn_excluding(&self, q: &Vec3, k: usize, exclude: usize) -> Result<Vec<usize>> {
        if k + 1 > self.len() {
            return Err(Error::invalid(format!(
                "k = {k} exceeds the {} other indexed sites",
                self.len().saturating_sub(1)
            )));
        }
        Ok(self.search(q, k, Some(exclude as u32)).into_iter().map(|(_, i)| i as usize).collect())
    }

    /// Like [`KdTree::knn_excluding`] but also returns squared distances.
    pub fn knn_with_distances(&self, q: &Vec3, k: usize, exclude: Option<usize>) -> Vec<(f64, u32)> {
        self.search(q, k, exclude.map(|e| e as u32))
    }

    fn search(&self, q: &Vec3, k: usize, exclude: Option<u32>) -> Vec<(f64, u32)> {
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        if k == 0 {
            return best;
        }
        let q = [q.x, q.y, q.z];
        self.visit(0, &q, k, exclude, &mut best);
        best
    }

    fn visit(&self, node: usize, q: &[f64; 3], k: usize, exclude: Option<u32>, best: &mut Vec<(f64, u32)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start as usize..end as usize {
                    let id = self.ids[slot];
                    if Some(id) == exclude {
                        continue;
                    }
                    let p = &self.points[slot];
                    let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                    insert_candidate(best, k, (d2, id));
                }
            }
            Node::Split { dim, value, left, right } => {
                let diff = q[dim as usize] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.visit(near as usize, q, k, exclude, best);
                if best.len() < k || diff * diff <= best[best.len() - 1].0 {
                    self.visit(far as usize, q, k, exclude, best);
                }
            }
        }
    }
}

#[inline]
fn insert_candidate(best: &mut Vec<(f64, u32)>, k: usize, cand: (f64, u32)) {
    let less = |a: &(f64, u32), b: &(f64, u32)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);
    if best.len() == k && !less(&cand, &best[k - 1]) {
        return;
    }
    let mut pos = best.len();
    while pos > 0 && less(&cand, &best[pos - 1]) {
        pos -= 1;
    }
    best.insert(pos, cand);
    if best.len() > k {
        best.pop();
    }
}

fn build_node(pts: &[[f64; 3]], ids: &mut [u32], offset: usize, nodes: &mut Vec<Node>) -> u32 {
    let me = nodes.len() as u32;
    if ids.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf { start: offset as u32, end: (offset + ids.len()) as u32 });
        return me;
    }
    // Split the widest axis at the median.
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in ids.iter() {
        let p = &pts[i as usize];
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let dim = (0..3).max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b]))).unwrap();
    let mid = ids.len() / 2;
    ids.select_nth_unstable_by(mid, |&a, &b| {
        pts[a as usize][dim].total_cmp(&pts[b as usize][dim]).then(a.cmp(&b))
    });
    let value = pts[ids[mid] as usize][dim];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (l, r) = ids.split_at_mut(mid);
    let left = build_node(pts, l, offset, nodes);
    let right = build_node(pts, r, offset + mid, nodes);
    nodes[me as usize] = Node::Split { dim: dim as u8, value, left, right };
    me
}

/// Fixed-size k-nearest-neighbor lists for every site, query site excluded.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnTable {
    pub k: usize,
    n: usize,
    neighbors: Vec<u32>,
}

impl KnnTable {
    pub fn build(positions: &[Vec3], k: usize) -> Result<Self> {
        let tree = KdTree::build(positions)?;
        Self::from_tree(&tree, positions, k)
    }

    pub fn from_tree(tree: &KdTree, positions: &[Vec3], k: usize) -> Result<Self> {
        if k + 1 > positions.len() {
            return Err(Error::invalid(format!("k = {k} needs more than {} sites", positions.len())));
        }
        let neighbors: Vec<u32> = positions
            .par_iter()
            .enumerate()
            .flat_map_iter(|(i, p)| tree.search(p, k, Some(i as u32)).into_iter().map(|(_, j)| j))
            .collect();
        Ok(KnnTable { k, n: positions.len(), neighbors })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn neighbors(&self, i: usize) -> &[u32] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }
}
