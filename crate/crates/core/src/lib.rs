//! Multi-view surface reconstruction on an adaptive centroidal Voronoi
//! tessellation.
//!
//! Sites of a CVT carry a signed distance value and two learnable feature
//! vectors. Images are rendered by marching rays through the dual Delaunay
//! tetrahedralization, and the photometric error is back-propagated to the
//! sites. The tessellation is refined near the zero level set between
//! optimization levels and regularized with an approximate, SDF-aware CVT
//! energy.
//!
//! Module map:
//!
//! * [`geom`]: KD-tree, Delaunay tetrahedralization, adjacency-linked [`TetMesh`].
//! * [`cvt`]: approximate CVT energy, gradients and optimizer.
//! * [`field`]: per-site SDF/features, interpolation, regularizers, up-sampling.
//! * [`traverse`]: camera-seeded ray marching through the tetrahedral mesh.
//! * [`render`]: S-density compositing, color networks, photometric loss.
//! * [`extract`]: marching tetrahedra, triangle meshes, Chamfer metrics.
//! * [`pipeline`]: cameras, datasets, synthetic scenes, configuration, training.

pub mod api;
pub mod cvt;
pub mod error;
pub mod extract;
pub mod field;
pub mod geom;
pub mod optim;
pub mod pipeline;
pub mod render;
pub mod rng;
pub mod traverse;

pub use error::{Error, Result};
pub use geom::{Aabb, KdTree, SiteKind, SiteSet, TetMesh, Vec3};

/// Length of the coarse and fine per-site feature vectors.
pub const FEATURE_DIM: usize = 8;
