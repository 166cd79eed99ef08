//! Ground-truth oracles for the four branch targets and the training
//! dataset builder.

mod dataset;
mod oracle;
mod sh;

pub use dataset::{
    build_dataset, read_dataset, write_dataset, DatasetConfig, FeatureDataset, ViewMode,
};
pub use oracle::{cdd_oracle, escf_oracle, occupancy_oracle, scf_coverage, FeatureOracle};
pub use sh::{QuadratureRule, ShBasis, SphereQuadrature};

use crate::geom::{GeomError, Vec3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("query point lies on the surface; resample it")]
    OnSurface,
    #[error("shape `{shape}`: {source}")]
    Shape {
        shape: String,
        #[source]
        source: GeomError,
    },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad dataset file {file}: {msg}")]
    BadFile { file: String, msg: String },
}

/// One training record: query point with targets for all four branches.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample {
    pub x: Vec3,
    /// 1 iff strictly inside
    pub occ: f64,
    /// signed distance, negative inside (scene units)
    pub sdf: f64,
    /// spherical-harmonics coefficients of the coverage function,
    /// (l, m)-lexicographic, length (L+1)^2
    pub escf: Vec<f64>,
    /// inner product of the closest-point direction with the principal
    /// direction, in [-1, 1]
    pub cdd: f64,
}
