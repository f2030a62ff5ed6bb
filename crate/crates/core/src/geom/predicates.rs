//! Adaptive-precision geometric predicates.
//!
//! Orientation follows the right-hand rule: `orient(a, b, c, d) > 0` when
//! `det[b - a, c - a, d - a] > 0`. The in-sphere test resolves exactly
//! cospherical configurations by symbolically perturbing the lifted
//! coordinate of each point, with the lowest site index perturbed most.
//! That keeps the tetrahedralization unique and deterministic for lattices
//! and other degenerate inputs without ever producing flat tetrahedra.

use robust::Coord3D;

use super::Vec3;

#[inline]
fn c(p: &Vec3) -> Coord3D<f64> {
    Coord3D { x: p.x, y: p.y, z: p.z }
}

/// Exact sign (adaptive magnitude) of six times the signed volume of `abcd`.
#[inline]
pub fn orient(a: &Vec3, b: &Vec3, c_: &Vec3, d: &Vec3) -> f64 {
    // The reference routine uses the opposite handedness.
    -robust::orient3d(c(a), c(b), c(c_), c(d))
}

/// True when `e` lies strictly inside the circumsphere of the positively
/// oriented tetrahedron `abcd`, after symbolic perturbation.
///
/// `ids` are the global indices of `a, b, c, d, e` and drive the
/// perturbation order. All five points must be distinct.
pub fn in_sphere_perturbed(p: [&Vec3; 5], ids: [u32; 5]) -> bool {
    // Swap a and b so that the reference routine sees a positively oriented
    // tet in its own handedness; then "inside" means a positive determinant.
    let rows = [p[1], p[0], p[2], p[3], p[4]];
    let rid = [ids[1], ids[0], ids[2], ids[3], ids[4]];
    let det = robust::insphere(c(rows[0]), c(rows[1]), c(rows[2]), c(rows[3]), c(rows[4]));
    if det != 0.0 {
        return det > 0.0;
    }
    // The 5x5 lifted determinant is linear in each lifted coordinate. Lowering
    // row k's lift by eps_k changes it by -eps_k * C_k with cofactor
    // C_k = (-1)^(k+3) * orient3d(rows without k); the most significant
    // nonzero term decides the sign.
    let mut order = [0usize, 1, 2, 3, 4];
    order.sort_by_key(|&k| rid[k]);
    for &k in &order {
        let rest: Vec<&Vec3> = (0..5).filter(|&j| j != k).map(|j| rows[j]).collect();
        let minor = robust::orient3d(c(rest[0]), c(rest[1]), c(rest[2]), c(rest[3]));
        if minor != 0.0 {
            let cofactor = if (k + 3) % 2 == 0 { minor } else { -minor };
            return cofactor < 0.0;
        }
    }
    // Unreachable for a non-degenerate tetrahedron.
    false
}

/// Unperturbed in-sphere value; positive inside for positively oriented tets.
pub fn in_sphere_raw(a: &Vec3, b: &Vec3, c_: &Vec3, d: &Vec3, e: &Vec3) -> f64 {
    robust::insphere(c(b), c(a), c(c_), c(d), c(e))
}
