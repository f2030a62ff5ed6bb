//! Surface-adaptive refinement by edge-midpoint insertion.

use super::{FieldState, Feature};
use crate::geom::{SiteKind, SiteSet, TetMesh};
use crate::FEATURE_DIM;

/// Refinement test for an edge: it crosses the zero level set, or one end
/// is closer to the surface than 1.5 edge lengths.
pub fn upsample_rule(sdf_i: f64, sdf_j: f64, length: f64) -> bool {
    sdf_i * sdf_j < 0.0 || sdf_i.abs().min(sdf_j.abs()) < 1.5 * length
}

/// Mesh edges selected for refinement, in mesh edge order. Edges touching a
/// camera site are never refined.
pub fn upsample_edges(mesh: &TetMesh, sites: &SiteSet, sdf: &[f64]) -> Vec<[u32; 2]> {
    mesh.edges
        .iter()
        .copied()
        .filter(|&[i, j]| {
            let (i, j) = (i as usize, j as usize);
            !sites.is_camera(i)
                && !sites.is_camera(j)
                && upsample_rule(sdf[i], sdf[j], (sites.positions[i] - sites.positions[j]).norm())
        })
        .collect()
}

/// Appends one free site at the midpoint of each edge, with the average of
/// the endpoint values, and increments the level.
pub fn insert_midpoints(sites: &SiteSet, field: &FieldState, edges: &[[u32; 2]]) -> (SiteSet, FieldState) {
    let mut out_sites = sites.clone();
    let mut out = field.clone();
    let avg = |a: &Feature, b: &Feature| -> Feature { std::array::from_fn(|k| 0.5 * (a[k] + b[k])) };
    for &[i, j] in edges {
        let (i, j) = (i as usize, j as usize);
        out_sites.positions.push(0.5 * (sites.positions[i] + sites.positions[j]));
        out_sites.kinds.push(SiteKind::Free);
        out.sdf.push(0.5 * (field.sdf[i] + field.sdf[j]));
        out.f_cse.push(avg(&field.f_cse[i], &field.f_cse[j]));
        out.f_fine.push(avg(&field.f_fine[i], &field.f_fine[j]));
    }
    out_sites.level += 1;
    debug_assert_eq!(out.f_cse.first().map_or(FEATURE_DIM, |f| f.len()), FEATURE_DIM);
    (out_sites, out)
}

/// One refinement step: midpoints of all qualifying edges.
pub fn upsample(mesh: &TetMesh, sites: &SiteSet, field: &FieldState) -> (SiteSet, FieldState) {
    let edges = upsample_edges(mesh, sites, &field.sdf);
    insert_midpoints(sites, field, &edges)
}
