use std::path::PathBuf;

/// Errors produced by the model, the simulator and its configuration layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// An allocation problem has no feasible solution.
    #[error("infeasible allocation: {0}")]
    Infeasible(String),

    /// A flash programming rule was broken (write order, erase with live data, ...).
    #[error("flash constraint violated: {0}")]
    Constraint(String),

    /// No free page is left anywhere the write could go.
    #[error("device capacity exhausted: {0}")]
    CapacityExhausted(String),

    /// Garbage collection could not obtain room for the pages it must migrate.
    #[error("garbage collection deadlock: {0}")]
    Deadlock(String),

    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("{}:{line}: {message}", path.display())]
    Trace {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
