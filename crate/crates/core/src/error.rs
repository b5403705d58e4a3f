use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate shape model: {0}")]
    DegenerateModel(String),

    #[error("degenerate normal triangle at vertex {vertex}")]
    DegenerateNormal { vertex: usize },

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("slice plane does not intersect the mesh (after {attempts} attempts)")]
    EmptySlice { attempts: usize },

    #[error("contour points are not coplanar (max deviation {deviation:e})")]
    NotCoplanar { deviation: f64 },

    #[error("point {point} has label {label} but no model component carries that label")]
    UnknownLabel { point: usize, label: i64 },

    #[error("responsibilities of point {point} underflowed (sigma^2 collapse?)")]
    ResponsibilityUnderflow { point: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("mesh is not closed: odd ray-crossing parity along the {axis} axis")]
    NonClosedMesh { axis: char },

    #[error("voxel grids differ in origin, spacing or dimensions")]
    GridMismatch,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse error at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("unsupported format version {found:?} (expected {expected:?})")]
    VersionMismatch { found: String, expected: &'static str },
}

impl Error {
    /// True for failures of the numerical pipeline (as opposed to bad input
    /// or file problems). Used by the CLI to select its exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateModel(_)
                | Error::DegenerateNormal { .. }
                | Error::DegenerateMesh(_)
                | Error::EmptySlice { .. }
                | Error::NotCoplanar { .. }
                | Error::ResponsibilityUnderflow { .. }
                | Error::NotPositiveDefinite(_)
                | Error::NonClosedMesh { .. }
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
