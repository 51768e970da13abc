use thiserror::Error;

/// Failure category, used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Usage,
    Data,
    Numeric,
    Benchmark,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Usage => 1,
            Category::Data => 2,
            Category::Numeric => 3,
            Category::Benchmark => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op} on axis {axis}: {detail}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        detail: String,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("state error: {0}")]
    State(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("mapping error: {0}")]
    Mapping(String),

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: usize, detail: String },

    #[error("split error: {0}")]
    Split(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("benchmark failed after {} completed rows ({}): {source}", completed.len(), completed.join(", "))]
    PartialReport {
        completed: Vec<String>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, axis: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            axis,
            detail: detail.into(),
        }
    }

    pub fn category(&self) -> Category {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::Parameter(_) => Category::Usage,
            Error::Mapping(_) | Error::Format { .. } | Error::Split(_) | Error::Io(_) => {
                Category::Data
            }
            Error::Dimension { .. }
            | Error::State(_)
            | Error::Metric(_)
            | Error::Normalization(_)
            | Error::Training(_) => Category::Numeric,
            Error::PartialReport { .. } => Category::Benchmark,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
