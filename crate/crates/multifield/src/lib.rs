//! Multi-feature implicit fields at desk scale.
//!
//! The crate computes four ground-truth spatial features of points relative
//! to watertight meshes (occupancy, signed distance, spherical-harmonics
//! space-coverage coefficients, closest-distance direction), trains a
//! multi-head implicit field on them, and uses the field's descriptors for
//! shape reconstruction, correspondence, SE(3) pose transfer and grasp
//! learning on procedurally generated categorical shapes.
//!
//! See the `examples/` directory for one runnable example per capability,
//! and the `multifield` binary for the scriptable pipeline.

pub mod cli;
pub mod features;
pub mod field;
pub mod geom;
pub mod grasp;
pub mod nn;
pub mod pose;
pub mod recon;
