use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid panorama dimensions {width}x{height}: width must be twice the height")]
    InvalidDimensions { width: usize, height: usize },

    #[error("icosphere level {0} exceeds the maximum of {max}", max = crate::icosphere::MAX_LEVEL)]
    LevelTooLarge(u32),

    #[error("rotation matrix is not orthonormal with det +1")]
    NotARotation,

    #[error("image has no color channels")]
    MissingColor,

    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionsMismatch(usize, usize, usize, usize),

    #[error("invalid lens parameters: {0}")]
    InvalidLens(String),

    #[error("direction not covered by either fisheye lens")]
    DirectionUncovered,

    #[error("no heat-map pixel passes the threshold")]
    EmptyHeatmap,

    #[error("folded vertical mean is degenerate")]
    DegenerateMean,

    #[error("no horizon plane consensus: {0}")]
    NoConsensus(String),

    #[error("horizon normal points straight down")]
    DegenerateDown,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("MPP models were built on different grids or smoothing")]
    GridMismatch,

    #[error("reference frame {0} not found")]
    MissingReference(u64),

    #[error("ground truth does not match frames: {0}")]
    GroundTruthMismatch(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
