use thiserror::Error;

/// Errors produced by the registration, reconstruction and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate 6D rotation parameter: {0}")]
    DegenerateParam(&'static str),
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("refinement diverged (rmse {rmse:.6e})")]
    DivergedRefinement { rmse: f64 },
    #[error("no correspondences within the search radius")]
    NoCorrespondences,
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("no valid frames")]
    NoValidFrames,
    #[error("reconstruction bounds are empty")]
    EmptyBounds,
    #[error("scalar field is uniform, no surface to extract")]
    DegenerateField,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("group `{0}` has no items")]
    EmptyGroup(String),
    #[error("frame {0} has no masked pixels")]
    NoMaskedPixels(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of a numerical routine, as opposed to bad input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateParam(_)
                | Error::DegenerateConfiguration(_)
                | Error::InsufficientPoints { .. }
                | Error::DivergedRefinement { .. }
                | Error::NoCorrespondences
                | Error::NoValidFrames
                | Error::EmptyBounds
                | Error::DegenerateField
                | Error::NoMaskedPixels(_)
        )
    }

    pub(crate) fn format(what: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            what,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
