use thiserror::Error;

use crate::geom::PointCloud;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient points: need {needed}, have {have}")]
    InsufficientPoints { needed: usize, have: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("instance of {size} points exceeds exact cap {cap}; use emd_approx")]
    TooLargeForExact { size: usize, cap: usize },

    #[error("point behind camera (index {index}, depth {depth})")]
    BehindCamera { index: usize, depth: f64 },

    #[error("no surface found")]
    NoSurface,

    #[error("degenerate triangle produces non-finite cotangent weight at face {0}")]
    DegenerateFace(usize),

    #[error("non-manifold edge ({0}, {1}) shared by more than two faces")]
    NonManifold(usize, usize),

    #[error("cannot satisfy 50% coverage rule after {0} attempts")]
    CoverageRule(usize),

    #[error("optimization diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        last_finite: Box<PointCloud>,
    },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input (paths, formats, arguments)
    /// rather than by a numerical or algorithmic failure.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Parse(_)
            | Error::Io(_)
            | Error::InvalidArgument(_)
            | Error::SizeMismatch { .. }
            | Error::DimensionMismatch(..)
            | Error::TooLargeForExact { .. } => true,
            Error::Stage { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}
