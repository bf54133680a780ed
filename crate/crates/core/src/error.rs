use std::path::PathBuf;

/// Errors raised by the detection pipeline and its tooling.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported or corrupt image {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("upscaled image would hold {requested} pixels, budget is {budget}")]
    PixelBudget { requested: u64, budget: u64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("image of {width}x{height} is smaller than the 16x16 detector minimum")]
    InputTooSmall { width: u32, height: u32 },

    #[error("point maps to infinity under the homography")]
    PointAtInfinity,

    #[error("degenerate point configuration")]
    Degenerate,

    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("no homography hypothesis found enough inliers")]
    NoModel,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid forgery spec: {0}")]
    ForgerySpec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, Error>;
