use std::path::PathBuf;

use thiserror::Error;

use crate::learn::EnsembleReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate image id `{0}` in manifest")]
    DuplicateId(String),

    #[error("unknown group label `{0}` (expected MUT or WT)")]
    BadLabel(String),

    #[error("image file not found: {}", .0.display())]
    MissingImage(PathBuf),

    #[error("cell masks overlap at pixel ({x}, {y})")]
    OverlapError { x: u32, y: u32 },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("stain matrix is singular (condition number {0:.3e})")]
    SingularStains(f64),

    #[error("cell mask has {0} pixels, at least 4 are required")]
    TooSmall(usize),

    #[error("training labels contain a single class")]
    DegenerateLabels,

    #[error("class {class} has {count} members, fewer than {folds} folds")]
    StratificationError {
        class: usize,
        count: usize,
        folds: usize,
    },

    #[error("pruning removed every instance of a class at iteration {iteration}")]
    PrunedToDegenerate {
        iteration: usize,
        report: Box<EnsembleReport>,
    },

    #[error("dissimilarity matrix is not symmetric, nonnegative and zero-diagonal: {0}")]
    BadDissimilarity(String),

    #[error("requested {k} clusters for {n} points")]
    BadK { k: usize, n: usize },

    #[error("could not place cell {placed} of {requested} without overlap")]
    PlacementError { placed: usize, requested: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("TIFF error: {0}")]
    Tiff(#[from] tiff::TiffError),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
