//! Camera-seeded ray marching through the tetrahedral mesh.
//!
//! Exit faces are found in the plane orthogonal to the ray: the four tet
//! vertices are projected to 2D coordinates around the ray, and the ray
//! leaves through the face whose projected triangle contains the origin.
//! Each edge test is a 2D cross product of two projected vertices, which is
//! exactly antisymmetric in floating point, so adjacent tets agree on every
//! shared-face decision.

use serde::{Deserialize, Serialize};

use crate::field::face_sdf;
use crate::geom::{TetMesh, Vec3, FACE_VERTICES};
use crate::render::alpha;
use crate::rng::KeyedRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    /// Ray with a normalized copy of `dir`.
    pub fn new(origin: Vec3, dir: Vec3) -> Result<Self> {
        let n = dir.norm();
        if !(n > 0.0 && n.is_finite()) || !origin.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("ray needs a finite origin and nonzero direction"));
        }
        Ok(Ray { origin, dir: dir / n })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + t * self.dir
    }

    /// Direction tilted by `angle` radians toward a direction keyed on `key`.
    pub fn perturbed(&self, key: &[u64], angle: f64) -> Ray {
        let mut rng = KeyedRng::new(key);
        let (u1, u2) = plane_frame(&self.dir);
        let phi = rng.uniform() * std::f64::consts::TAU;
        let w = phi.cos() * u1 + phi.sin() * u2;
        Ray { origin: self.origin, dir: (angle.cos() * self.dir + angle.sin() * w).normalize() }
    }
}

/// A point on a face given by three site ids and barycentric weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FacePoint {
    pub verts: [u32; 3],
    pub bary: [f64; 3],
}

impl FacePoint {
    /// A mesh vertex, expressed as a degenerate face point.
    pub fn vertex(v: u32) -> Self {
        FacePoint { verts: [v; 3], bary: [1.0, 0.0, 0.0] }
    }

    pub fn sdf(&self, sdf: &[f64]) -> f64 {
        face_sdf(self.verts, self.bary, sdf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub tet: u32,
    /// Entry face slot; `None` for the first tet of a camera fan.
    pub entry_slot: Option<u8>,
    pub exit_slot: u8,
    pub t_in: f64,
    pub t_out: f64,
    pub p_in: Vec3,
    pub p_out: Vec3,
    pub entry: FacePoint,
    pub exit: FacePoint,
    pub sdf_in: f64,
    pub sdf_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentList {
    /// The ray actually marched (perturbed when the original grazed an edge).
    pub ray: Ray,
    pub segments: Vec<Segment>,
    /// Set when the walk stopped at the segment cap before leaving the hull.
    pub truncated: bool,
}

impl SegmentList {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("tet,entry_slot,exit_slot,t_in,t_out,sdf_in,sdf_out\n");
        for g in &self.segments {
            let entry = g.entry_slot.map_or(String::from("-"), |e| e.to_string());
            s += &format!("{},{},{},{},{},{},{}\n", g.tet, entry, g.exit_slot, g.t_in, g.t_out, g.sdf_in, g.sdf_out);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarchConfig {
    pub max_segments: usize,
    /// Relative tolerance of the 2D containment test.
    pub containment_eps: f64,
    /// Tilt applied to grazing rays, in radians.
    pub perturb_angle: f64,
    pub max_perturbations: u32,
}

impl Default for MarchConfig {
    fn default() -> Self {
        MarchConfig { max_segments: 1024, containment_eps: 1e-12, perturb_angle: 1e-7, max_perturbations: 8 }
    }
}

/// Orthonormal `(u1, u2)` with `u1 × u2 = v`.
pub fn plane_frame(v: &Vec3) -> (Vec3, Vec3) {
    let a = if v.x.abs() <= v.y.abs() && v.x.abs() <= v.z.abs() {
        Vec3::x()
    } else if v.y.abs() <= v.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let u1 = a.cross(v).normalize();
    let u2 = v.cross(&u1);
    (u1, u2)
}

/// Tets incident to the camera vertex.
pub fn camera_tets(mesh: &TetMesh, camera: usize) -> Result<&[u32]> {
    if camera >= mesh.n_vertices() {
        return Err(Error::invalid(format!("camera site {camera} is not a mesh vertex")));
    }
    Ok(mesh.incident_tets(camera))
}

/// Projection of the tet around one ray.
struct Projected {
    q: [[f64; 2]; 4],
    scale: f64,
}

impl Projected {
    fn new(pts: &[Vec3; 4], ray: &Ray, frame: &(Vec3, Vec3)) -> Self {
        let q = pts.map(|p| {
            let d = p - ray.origin;
            [d.dot(&frame.0), d.dot(&frame.1)]
        });
        let scale = q.iter().map(|x| x[0] * x[0] + x[1] * x[1]).fold(0.0, f64::max);
        Projected { q, scale }
    }

    #[inline]
    fn cross(&self, i: usize, j: usize) -> f64 {
        self.q[i][0] * self.q[j][1] - self.q[i][1] * self.q[j][0]
    }

    /// Edge values of face `slot` in outward order `(a, b, c)`:
    /// `[cross(b, c), cross(c, a), cross(a, b)]`, proportional to the
    /// barycentric weights of the origin.
    fn face_values(&self, slot: usize) -> [f64; 3] {
        let [a, b, c] = FACE_VERTICES[slot];
        [self.cross(b, c), self.cross(c, a), self.cross(a, b)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExitFace {
    /// Clear containment in exactly one face.
    Clear { slot: u8, bary: [f64; 3] },
    /// Containment within tolerance of an edge or vertex.
    Grazing { slot: Option<u8> },
}

fn classify(proj: &Projected, entry: Option<usize>, only: Option<usize>, eps: f64) -> ExitFace {
    let tol = eps * proj.scale;
    let mut clear = None;
    let mut near = None;
    for slot in 0..4 {
        if Some(slot) == entry || only.is_some_and(|o| o != slot) {
            continue;
        }
        let e = proj.face_values(slot);
        let m = e[0].min(e[1]).min(e[2]);
        if m > tol {
            if clear.is_none() {
                clear = Some((slot, e));
            }
        } else if m >= -tol && near.is_none() {
            near = Some(slot);
        }
    }
    match (clear, near) {
        (Some((slot, e)), None) => {
            let s = e[0] + e[1] + e[2];
            ExitFace::Clear { slot: slot as u8, bary: [e[0] / s, e[1] / s, e[2] / s] }
        }
        (Some((slot, _)), Some(n)) => ExitFace::Grazing { slot: Some(slot.min(n) as u8) },
        (None, n) => ExitFace::Grazing { slot: n.map(|s| s as u8) },
    }
}

/// Exit face of the ray through the tet with vertices `pts`, excluding
/// `entry`.
pub fn exit_face(pts: &[Vec3; 4], ray: &Ray, entry: Option<u8>, eps: f64) -> ExitFace {
    let frame = plane_frame(&ray.dir);
    classify(&Projected::new(pts, ray, &frame), entry.map(usize::from), None, eps)
}

/// Ray parameter of the plane through a face.
fn face_t(ray: &Ray, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let n = (b - a).cross(&(c - a));
    n.dot(&(a - ray.origin)) / n.dot(&ray.dir)
}

enum Walk {
    Done(SegmentList),
    Grazing,
}

fn walk(mesh: &TetMesh, positions: &[Vec3], sdf: &[f64], camera: usize, ray: Ray, cfg: &MarchConfig, lenient: bool) -> Result<Walk> {
    let frame = plane_frame(&ray.dir);
    let mut out = SegmentList { ray, segments: Vec::new(), truncated: false };

    // Leave the camera fan through the face opposite the camera.
    let mut start = None;
    let mut fallback = None;
    for &t in camera_tets(mesh, camera)? {
        let tet = mesh.tets[t as usize];
        let k = tet.iter().position(|&v| v as usize == camera).unwrap();
        let proj = Projected::new(&mesh.tet_points(t as usize, positions), &ray, &frame);
        match classify(&proj, None, Some(k), cfg.containment_eps) {
            ExitFace::Clear { bary, .. } => {
                start = Some((t, k, bary));
                break;
            }
            ExitFace::Grazing { slot: Some(_) } if fallback.is_none() => {
                let e = proj.face_values(k);
                let s = e[0] + e[1] + e[2];
                fallback = Some((t, k, e.map(|x| x.max(0.0) / s.max(f64::MIN_POSITIVE))));
            }
            _ => {}
        }
    }
    let (mut tet_id, mut exit_slot, mut bary) = match (start, fallback) {
        (Some(s), _) => s,
        (None, Some(f)) if lenient => f,
        (None, Some(_)) => return Ok(Walk::Grazing),
        (None, None) => return Ok(Walk::Done(out)),
    };
    let mut entry = FacePoint::vertex(camera as u32);
    let mut entry_slot: Option<u8> = None;
    let mut t_in = 0.0;
    let mut p_in = ray.origin;

    for _ in 0..=mesh.len() {
        let tet = mesh.tets[tet_id as usize];
        let face = FACE_VERTICES[exit_slot].map(|k| tet[k]);
        let [a, b, c] = face.map(|v| positions[v as usize]);
        let t_out = face_t(&ray, &a, &b, &c);
        if !(t_out > t_in) && !lenient {
            return Ok(Walk::Grazing);
        }
        let t_out = t_out.max(t_in);
        let exit = FacePoint { verts: face, bary };
        let seg = Segment {
            tet: tet_id,
            entry_slot,
            exit_slot: exit_slot as u8,
            t_in,
            t_out,
            p_in,
            p_out: ray.at(t_out),
            entry,
            exit,
            sdf_in: entry.sdf(sdf),
            sdf_out: exit.sdf(sdf),
        };
        out.segments.push(seg);
        if out.segments.len() >= cfg.max_segments {
            out.truncated = mesh.neighbors[tet_id as usize][exit_slot].get().is_some();
            return Ok(Walk::Done(out));
        }
        let Some((next, back)) = mesh.neighbors[tet_id as usize][exit_slot].get() else {
            return Ok(Walk::Done(out));
        };
        let proj = Projected::new(&mesh.tet_points(next as usize, positions), &ray, &frame);
        let (slot, w) = match classify(&proj, Some(back as usize), None, cfg.containment_eps) {
            ExitFace::Clear { slot, bary } => (slot as usize, bary),
            ExitFace::Grazing { slot: Some(s) } if lenient => {
                let e = proj.face_values(s as usize);
                let e = e.map(|x| x.max(0.0));
                let sum = (e[0] + e[1] + e[2]).max(f64::MIN_POSITIVE);
                (s as usize, e.map(|x| x / sum))
            }
            ExitFace::Grazing { slot: None } if lenient => {
                return Err(Error::Numerical(format!("ray lost inside tet {next}")));
            }
            ExitFace::Grazing { .. } => return Ok(Walk::Grazing),
        };
        entry = seg.exit;
        entry_slot = Some(back);
        t_in = seg.t_out;
        p_in = seg.p_out;
        tet_id = next;
        exit_slot = slot;
        bary = w;
    }
    Err(Error::Numerical("ray walk revisited a tetrahedron; adjacency is broken".into()))
}

/// Marches `ray` from camera vertex `camera` to the hull boundary. Grazing
/// rays are retried with the direction tilted by a tiny angle keyed on
/// `pixel_key`.
pub fn march(
    mesh: &TetMesh,
    positions: &[Vec3],
    sdf: &[f64],
    camera: usize,
    ray: &Ray,
    pixel_key: u64,
    cfg: &MarchConfig,
) -> Result<SegmentList> {
    let mut current = *ray;
    for attempt in 0..=cfg.max_perturbations {
        let lenient = attempt == cfg.max_perturbations;
        match walk(mesh, positions, sdf, camera, current, cfg, lenient)? {
            Walk::Done(list) => return Ok(list),
            Walk::Grazing => current = ray.perturbed(&[pixel_key, attempt as u64], cfg.perturb_angle),
        }
    }
    unreachable!("the last attempt is lenient")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    /// Segments whose four tet vertices all have sdf above `band / β` are
    /// dropped.
    pub band: f64,
    /// Walks are cut once transmittance falls below this value.
    pub min_transmittance: f64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig { band: 8.0, min_transmittance: 1e-4 }
    }
}

/// Drops segments outside the opacity band and truncates after the ray is
/// effectively opaque.
pub fn prune(list: &SegmentList, mesh: &TetMesh, sdf: &[f64], beta: f64, cfg: &PruneConfig) -> SegmentList {
    let limit = cfg.band / beta;
    let mut out = SegmentList { ray: list.ray, segments: Vec::new(), truncated: list.truncated };
    let mut trans = 1.0;
    for seg in &list.segments {
        let far = mesh.tets[seg.tet as usize].iter().all(|&v| sdf[v as usize] > limit);
        if far {
            continue;
        }
        out.segments.push(*seg);
        trans *= 1.0 - alpha(seg.sdf_in, seg.sdf_out, beta);
        if trans < cfg.min_transmittance {
            break;
        }
    }
    out
}

/// A piece of a segment after splitting at the SDF zero crossing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubSegment {
    pub t0: f64,
    pub t1: f64,
    pub sdf0: f64,
    pub sdf1: f64,
    /// Fraction of the parent segment at which the split happened, if any.
    pub split: Option<f64>,
    /// 0 for the first piece, 1 for the second.
    pub part: u8,
}

/// Splits a segment at the linear zero of its endpoint SDFs when they have
/// opposite signs.
pub fn subdivide_crossing(t_in: f64, t_out: f64, sdf_in: f64, sdf_out: f64) -> ([SubSegment; 2], usize) {
    if sdf_in * sdf_out < 0.0 {
        let s = sdf_in / (sdf_in - sdf_out);
        let tc = t_in + s * (t_out - t_in);
        (
            [
                SubSegment { t0: t_in, t1: tc, sdf0: sdf_in, sdf1: 0.0, split: Some(s), part: 0 },
                SubSegment { t0: tc, t1: t_out, sdf0: 0.0, sdf1: sdf_out, split: Some(s), part: 1 },
            ],
            2,
        )
    } else {
        let whole = SubSegment { t0: t_in, t1: t_out, sdf0: sdf_in, sdf1: sdf_out, split: None, part: 0 };
        ([whole, whole], 1)
    }
}
