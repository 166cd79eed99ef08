//! Mesh and point-cloud primitives, spatial queries, procedural shape
//! generation and synthetic partial views.

mod bvh;
mod io;
mod mesh;
mod pose;
mod sample;
mod shapes;
mod vec3;

pub use bvh::{closest_point_triangle, SpatialIndex};
pub use io::{read_obj, read_ply, write_obj, write_ply};
pub use mesh::TriMesh;
pub use pose::{Pose, UnitQuat};
pub use sample::{look_at, render_partial, render_partial_indexed, sample_surface};
pub use shapes::{generate_shape, shape_landmarks, ShapeCategory, ShapeSpec};
pub use vec3::Vec3;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("shape parameter `{name}` out of range: {value} (expected {expected})")]
    InvalidParams {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },
    #[error("mesh is not watertight: {0}")]
    NonWatertight(String),
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("no visible surface from the given camera")]
    NoVisibleSurface,
    #[error("unknown shape category `{0}` (expected mug, bowl or bottle)")]
    UnknownCategory(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error in {file}: {msg}")]
    Parse { file: String, msg: String },
}

/// A point cloud with optional per-point unit normals.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            normals: None,
        }
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Self {
        debug_assert_eq!(points.len(), normals.len());
        Self {
            points,
            normals: Some(normals),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Arithmetic-mean centroid over a canonical (sorted, deduplicated)
    /// ordering of the points, so the result does not depend on point order
    /// or on exact duplicates.
    pub fn canonical_centroid(&self) -> Vec3 {
        let mut pts = self.points.clone();
        pts.sort_by(|a, b| {
            a.x.total_cmp(&b.x)
                .then(a.y.total_cmp(&b.y))
                .then(a.z.total_cmp(&b.z))
        });
        pts.dedup_by(|a, b| a.x == b.x && a.y == b.y && a.z == b.z);
        let mut sum = Vec3::ZERO;
        for p in &pts {
            sum = sum + *p;
        }
        sum / pts.len() as f64
    }

    /// Axis-aligned bounding box as (min, max).
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::splat(f64::INFINITY);
        let mut hi = Vec3::splat(f64::NEG_INFINITY);
        for p in &self.points {
            lo = lo.min(*p);
            hi = hi.max(*p);
        }
        (lo, hi)
    }

    /// Diagonal length of the bounding box.
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi - lo).norm()
    }

    pub fn translated(&self, t: Vec3) -> Self {
        Self {
            points: self.points.iter().map(|p| *p + t).collect(),
            normals: self.normals.clone(),
        }
    }

    pub fn transformed(&self, pose: &Pose) -> Self {
        Self {
            points: self.points.iter().map(|p| pose.apply(*p)).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| pose.rotation.rotate(*n)).collect()),
        }
    }
}
