use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file for frame index {index} in {dir}")]
    MissingFile { dir: PathBuf, index: usize },

    #[error("dimension mismatch: expected {expected:?}, found {found:?}{context}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
        context: String,
    },

    #[error("count mismatch: {left} vs {right}{context}")]
    CountMismatch {
        left: usize,
        right: usize,
        context: String,
    },

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec failure on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("disparity map has no valid pixel")]
    NoValidDisparity,

    #[error("no disparity bin qualifies as a foreground peak")]
    NoForegroundPeak,

    #[error("mask has no foreground pixel")]
    EmptyMask,

    #[error("region of interest contains no pixel")]
    EmptyRoi,

    #[error("grid has no occupied vertex")]
    EmptyGrid,

    #[error("empty input")]
    EmptyInput,

    #[error("graph has {0} nodes, exhaustive search is limited to 20")]
    TooLarge(usize),

    #[error("shape leaves the image at frame {frame}")]
    ShapeOutOfBounds { frame: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("bad value `{value}` for `{key}`: expected {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        match source {
            image::ImageError::IoError(e) => Error::io(path, e),
            other => Error::Image {
                path: path.into(),
                source: other,
            },
        }
    }

    pub(crate) fn bad_value(key: &str, value: &str, expected: &str) -> Self {
        Error::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            expected: expected.to_string(),
        }
    }
}
