use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("incompatible adapters: {0}")]
    IncompatibleAdapter(String),

    /// A mask used for pooling or augmentation has no foreground pixel.
    #[error("empty mask support")]
    EmptySupport,

    /// The similarity map has no spread, so no threshold separates it.
    #[error("degenerate similarity map (constant values)")]
    DegenerateMap,

    #[error("non-finite loss at step {step}: l_aug={l_aug}, l_cyc={l_cyc}")]
    NonFiniteLoss { step: usize, l_aug: f64, l_cyc: f64 },

    #[error("sequence generation failed at alpha={alpha}: {source}")]
    Generation {
        alpha: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("interpolation backend: {0}")]
    Backend(String),

    #[error("frame cache {path}: {reason}")]
    Cache { path: PathBuf, reason: String },

    #[error("tracker: {0}")]
    Tracker(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
