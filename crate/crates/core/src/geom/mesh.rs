use super::{orientation_det, TetFrame, Vec3};
use crate::{Error, Result};

/// Vertex slots of the face opposite each vertex, ordered counter-clockwise
/// when seen from outside a positively oriented tetrahedron.
pub const FACE_VERTICES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];

/// Packed reference to the tetrahedron across a face: `tet << 2 | slot`,
/// where `slot` is the face index inside the neighbor. All-ones marks a
/// boundary face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NeighborRef(u32);

impl NeighborRef {
    pub const BOUNDARY: NeighborRef = NeighborRef(u32::MAX);

    pub fn new(tet: u32, slot: u8) -> Self {
        debug_assert!(tet < (1 << 30) && slot < 4);
        NeighborRef(tet << 2 | slot as u32)
    }

    pub fn is_boundary(self) -> bool {
        self == Self::BOUNDARY
    }

    /// `(tet, face slot in that tet)`, or `None` on the hull.
    pub fn get(self) -> Option<(u32, u8)> {
        if self.is_boundary() {
            None
        } else {
            Some((self.0 >> 2, (self.0 & 3) as u8))
        }
    }

    pub fn raw(self) -> u32 {
        self.0
    }
}

/// Tetrahedral complex with face adjacency, deduplicated edges and
/// vertex-to-tet incidence.
#[derive(Debug, Clone)]
pub struct TetMesh {
    pub tets: Vec<[u32; 4]>,
    pub neighbors: Vec<[NeighborRef; 4]>,
    pub edges: Vec<[u32; 2]>,
    n_vertices: usize,
    incidence_offsets: Vec<u32>,
    incidence: Vec<u32>,
}

impl TetMesh {
    pub fn len(&self) -> usize {
        self.tets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tets.is_empty()
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    /// Tetrahedra incident to vertex `v`, in ascending tet order.
    pub fn incident_tets(&self, v: usize) -> &[u32] {
        if v >= self.n_vertices {
            return &[];
        }
        &self.incidence[self.incidence_offsets[v] as usize..self.incidence_offsets[v + 1] as usize]
    }

    pub fn tet_points(&self, t: usize, positions: &[Vec3]) -> [Vec3; 4] {
        let tet = self.tets[t];
        std::array::from_fn(|k| positions[tet[k] as usize])
    }

    /// Global vertex ids of face `slot` of tet `t`, outward-oriented.
    pub fn face(&self, t: usize, slot: usize) -> [u32; 3] {
        let tet = self.tets[t];
        FACE_VERTICES[slot].map(|k| tet[k])
    }

    pub fn boundary_face_count(&self) -> usize {
        self.neighbors.iter().flatten().filter(|n| n.is_boundary()).count()
    }

    /// Barycentric frames for every tetrahedron.
    pub fn frames(&self, positions: &[Vec3]) -> Result<Vec<TetFrame>> {
        use rayon::prelude::*;
        (0..self.len()).into_par_iter().map(|t| TetFrame::new(&self.tet_points(t, positions))).collect()
    }

    /// Like [`TetMesh::frames`] but maps near-flat slivers to `None`.
    pub fn frames_lenient(&self, positions: &[Vec3]) -> Vec<Option<TetFrame>> {
        use rayon::prelude::*;
        (0..self.len()).into_par_iter().map(|t| TetFrame::new(&self.tet_points(t, positions)).ok()).collect()
    }

    /// Checks positive orientation of every tet and symmetry of the neighbor
    /// relation.
    pub fn validate(&self, positions: &[Vec3]) -> Result<()> {
        for t in 0..self.len() {
            let p = self.tet_points(t, positions);
            if !(super::predicates::orient(&p[0], &p[1], &p[2], &p[3]) > 0.0) {
                return Err(Error::Degenerate(format!("tet {t} is not positively oriented")));
            }
            for slot in 0..4 {
                if let Some((n, ns)) = self.neighbors[t][slot].get() {
                    let back = self.neighbors[n as usize][ns as usize];
                    if back != NeighborRef::new(t as u32, slot as u8) {
                        return Err(Error::Degenerate(format!("asymmetric adjacency between tets {t} and {n}")));
                    }
                    let mut a = self.face(t, slot);
                    let mut b = self.face(n as usize, ns as usize);
                    a.sort_unstable();
                    b.sort_unstable();
                    if a != b {
                        return Err(Error::Degenerate(format!("tets {t} and {n} do not share the linked face")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Total signed volume (for sanity checks against hull volumes).
    pub fn volume(&self, positions: &[Vec3]) -> f64 {
        (0..self.len())
            .map(|t| {
                let p = self.tet_points(t, positions);
                orientation_det(&p[0], &p[1], &p[2], &p[3]) / 6.0
            })
            .sum()
    }
}

/// Links faces shared between tetrahedra and derives edges and incidence.
///
/// Fails when a face is shared by more than two tetrahedra.
pub fn build_adjacency(tets: Vec<[u32; 4]>, n_vertices: usize) -> Result<TetMesh> {
    if tets.len() >= (1 << 30) {
        return Err(Error::invalid("too many tetrahedra for 30-bit neighbor references"));
    }
    for (t, tet) in tets.iter().enumerate() {
        if tet.iter().any(|&v| v as usize >= n_vertices) {
            return Err(Error::invalid(format!("tet {t} references a vertex out of range")));
        }
    }
    let mut faces: Vec<([u32; 3], u32)> = Vec::with_capacity(tets.len() * 4);
    for (t, tet) in tets.iter().enumerate() {
        for (slot, fv) in FACE_VERTICES.iter().enumerate() {
            let mut key = fv.map(|k| tet[k]);
            key.sort_unstable();
            faces.push((key, (t as u32) << 2 | slot as u32));
        }
    }
    faces.sort_unstable();
    let mut neighbors = vec![[NeighborRef::BOUNDARY; 4]; tets.len()];
    let mut i = 0;
    while i < faces.len() {
        let mut j = i + 1;
        while j < faces.len() && faces[j].0 == faces[i].0 {
            j += 1;
        }
        match j - i {
            1 => {}
            2 => {
                let (a, b) = (faces[i].1, faces[i + 1].1);
                neighbors[(a >> 2) as usize][(a & 3) as usize] = NeighborRef(b);
                neighbors[(b >> 2) as usize][(b & 3) as usize] = NeighborRef(a);
            }
            _ => {
                return Err(Error::Degenerate(format!(
                    "face {:?} is shared by {} tetrahedra",
                    faces[i].0,
                    j - i
                )))
            }
        }
        i = j;
    }

    let mut edges: Vec<[u32; 2]> = Vec::with_capacity(tets.len() * 2);
    for tet in &tets {
        for a in 0..4 {
            for b in a + 1..4 {
                let (u, v) = (tet[a].min(tet[b]), tet[a].max(tet[b]));
                edges.push([u, v]);
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();

    let mut counts = vec![0u32; n_vertices + 1];
    for tet in &tets {
        for &v in tet {
            counts[v as usize + 1] += 1;
        }
    }
    for v in 0..n_vertices {
        counts[v + 1] += counts[v];
    }
    let mut fill = counts.clone();
    let mut incidence = vec![0u32; counts[n_vertices] as usize];
    for (t, tet) in tets.iter().enumerate() {
        for &v in tet {
            incidence[fill[v as usize] as usize] = t as u32;
            fill[v as usize] += 1;
        }
    }

    Ok(TetMesh { tets, neighbors, edges, n_vertices, incidence_offsets: counts, incidence })
}
