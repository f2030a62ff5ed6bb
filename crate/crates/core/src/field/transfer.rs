//! Resampling the piecewise-linear field at moved site positions.

use rayon::prelude::*;

use super::{interpolate_features, FieldState};
use crate::error::check_len;
use crate::geom::{barycentric, TetMesh, Vec3};
use crate::Result;

/// Walk limit per query before falling back to the starting site's values.
const MAX_WALK: usize = 4096;

/// Tet containing `q` and its barycentric weights, found by a visibility
/// walk that starts at the tets around site `start`. `None` when `q` lies
/// outside the hull or the walk stalls.
pub fn locate_from(mesh: &TetMesh, positions: &[Vec3], start: usize, q: &Vec3) -> Option<(usize, [f64; 4])> {
    let mut t = *mesh.incident_tets(start).first()? as usize;
    let mut prev = usize::MAX;
    for _ in 0..MAX_WALK {
        let w = barycentric(&mesh.tet_points(t, positions), q).ok()?;
        let (k, min) = w.iter().copied().enumerate().fold((0, f64::INFINITY), |a, (k, x)| if x < a.1 { (k, x) } else { a });
        if min >= -1e-12 {
            return Some((t, w));
        }
        // cross the face opposite the most negative weight; avoid stepping
        // straight back when rounding makes two faces look violated
        let mut next = mesh.neighbors[t][k].get().map(|(n, _)| n as usize);
        if next == Some(prev) {
            let alt = (0..4).filter(|&j| j != k && w[j] < 0.0).min_by(|&a, &b| w[a].total_cmp(&w[b]));
            next = alt.and_then(|j| mesh.neighbors[t][j].get().map(|(n, _)| n as usize));
        }
        prev = t;
        t = next?;
    }
    None
}

/// Field at `moved[i]` interpolated from `field` on `mesh` over `positions`.
/// Sites whose new position is outside the hull keep their values.
pub fn transfer_field(mesh: &TetMesh, positions: &[Vec3], field: &FieldState, moved: &[Vec3]) -> Result<FieldState> {
    check_len(positions.len(), moved.len())?;
    field.check(positions.len())?;
    let values: Vec<_> = (0..moved.len())
        .into_par_iter()
        .map(|i| {
            if moved[i] == positions[i] {
                return (field.sdf[i], field.f_cse[i], field.f_fine[i]);
            }
            match locate_from(mesh, positions, i, &moved[i]) {
                Some((t, w)) => {
                    let tet = mesh.tets[t];
                    let sdf = (0..4).map(|k| w[k] * field.sdf[tet[k] as usize]).sum();
                    let cse = interpolate_features(&w, tet.map(|v| &field.f_cse[v as usize]));
                    let fine = interpolate_features(&w, tet.map(|v| &field.f_fine[v as usize]));
                    (sdf, cse, fine)
                }
                None => (field.sdf[i], field.f_cse[i], field.f_fine[i]),
            }
        })
        .collect();
    let mut out = FieldState { sdf: Vec::with_capacity(values.len()), f_cse: Vec::new(), f_fine: Vec::new() };
    for (s, c, f) in values {
        out.sdf.push(s);
        out.f_cse.push(c);
        out.f_fine.push(f);
    }
    Ok(out)
}
