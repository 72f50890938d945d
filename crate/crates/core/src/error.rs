use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("disconnected topology: buses {component:?} are cut off from the slack bus")]
    DisconnectedTopology { component: Vec<u32> },

    #[error("singular network reduction: {0}")]
    SingularReduction(String),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty range: {0}")]
    EmptyRange(String),

    #[error("catalog spec inconsistent: {0}")]
    SpecInconsistency(String),

    #[error("pair is not controllable (rank {rank} < {n})")]
    Uncontrollable { rank: usize, n: usize },

    #[error("pole set is not closed under complex conjugation")]
    NotConjugateClosed,

    #[error("pole placement failed: {0}")]
    PlacementFailed(String),

    #[error("non-finite state at sample {sample}")]
    NonFinite { sample: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty model or dataset: {0}")]
    Empty(String),

    #[error("scenarios {0} and {1} produce identical responses")]
    Indistinguishable(u32, u32),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(line: usize, field: &str, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// True for errors caused by bad user input rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::IndexOutOfRange { .. }
                | Error::DimensionMismatch(_)
                | Error::EmptyRange(_)
                | Error::SpecInconsistency(_)
                | Error::NotConjugateClosed
                | Error::InvalidConfig(_)
                | Error::Format(_)
        )
    }
}
