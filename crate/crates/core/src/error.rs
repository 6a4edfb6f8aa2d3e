use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        rows: usize,
        cols: usize,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("value outside [0,1] in {context}")]
    OutOfRange { context: &'static str },

    #[error("degenerate mesh cell ({row},{col}): non-positive bilinear jacobian")]
    DegenerateCell { row: usize, col: usize },

    #[error("mesh vertex ({row},{col}) lies outside the output rectangle")]
    VertexOutOfBounds { row: usize, col: usize },

    #[error("inverse bilinear solve did not converge in cell ({row},{col})")]
    InverseBilinearDiverged { row: usize, col: usize },

    #[error("energy became non-finite at iteration {iteration}")]
    NonFiniteEnergy { iteration: usize },

    #[error("mesh deformation projection failed after {attempts} attempts (seed {seed})")]
    ProjectionFailed { seed: u64, attempts: usize },

    #[error("no usable source images in {0}")]
    NoUsableSources(PathBuf),

    #[error("empty evaluation region")]
    EmptyRegion,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}
