//! Discretizations: a staggered radial grid with finite-volume operators for
//! real variational profiles in dimension N, and a periodic box with spectral
//! multipliers for complex dynamics.

mod periodic;
mod radial;
mod snapshot;

pub use periodic::{ComplexField, PeriodicGrid, Spectral};
pub use radial::{unit_sphere_area, BiharmonicSolver, RadialGrid, RescaleReport};
pub use snapshot::{
    read_snapshot, read_snapshot_file, write_snapshot, write_snapshot_file, Snapshot,
    SnapshotError,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid mismatch: field has {got} values, grid has {want} nodes")]
    Mismatch { got: usize, want: usize },
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("invalid dilation factor mu = {0}")]
    InvalidDilation(f64),
}
