use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("row count mismatch: {left} rows vs {right} rows")]
    CountMismatch { left: usize, right: usize },

    #[error("zero-norm row at index {row}{}", if *.after_centering { " after centering" } else { "" })]
    ZeroNormRow { row: usize, after_centering: bool },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("unknown id {0:?}")]
    UnknownId(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch in {what}: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum {
        what: String,
        stored: u32,
        computed: u32,
    },

    #[error("unsupported {what} version {found}")]
    Version { what: &'static str, found: u32 },

    #[error("service error: {0}")]
    Service(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("item {id:?}: {source}")]
    Item {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("interrupted at iteration {iteration}: {source}; resume from {}", .checkpoint.display())]
    Interrupted {
        iteration: usize,
        checkpoint: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure classes, mapped to process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
    Service,
    Internal,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Validation => 2,
            ErrorClass::Numerical => 3,
            ErrorClass::Service => 4,
            ErrorClass::Internal => 5,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn for_item(self, id: impl Into<String>) -> Self {
        Error::Item {
            id: id.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error beneath stage, item and interruption wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } | Error::Item { source, .. } | Error::Interrupted { source, .. } => {
                source.root()
            }
            other => other,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Numerical(_) => ErrorClass::Numerical,
            Error::Service(_) => ErrorClass::Service,
            Error::Stage { source, .. } | Error::Item { source, .. } | Error::Interrupted { source, .. } => {
                source.class()
            }
            Error::Json(_) => ErrorClass::Validation,
            Error::Io { .. } => ErrorClass::Validation,
            Error::DimensionMismatch { .. }
            | Error::CountMismatch { .. }
            | Error::ZeroNormRow { .. }
            | Error::NonFinite { .. }
            | Error::DuplicateId(_)
            | Error::UnknownId(_)
            | Error::Empty(_)
            | Error::InvalidArgument(_)
            | Error::Degenerate(_)
            | Error::Format(_)
            | Error::Checksum { .. }
            | Error::Version { .. } => ErrorClass::Validation,
        }
    }

    pub(crate) fn dims(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            actual,
        }
    }
}
