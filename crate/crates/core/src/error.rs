use std::io;

use thiserror::Error;

/// Errors raised anywhere in the learning engine.
#[derive(Debug, Error)]
pub enum CbclError {
    /// Malformed or unsupported file content (bad magic, version, truncation).
    #[error("format error: {0}")]
    Format(String),
    /// Invalid data values (dimension mismatch, non-finite entries, empty sets).
    #[error("data error: {0}")]
    Data(String),
    /// Inconsistent or out-of-range configuration.
    #[error("config error: {0}")]
    Config(String),
    /// Training diverged.
    #[error("numerics error at epoch {epoch}: {message}")]
    Numerics { epoch: usize, message: String },
    /// A query needed at least one learned cluster but found none.
    #[error("empty model: {0}")]
    EmptyModel(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    /// A protocol step failed; carries the increment it failed in.
    #[error("increment {index}: {source}")]
    Increment {
        index: usize,
        #[source]
        source: Box<CbclError>,
    },
}

pub type Result<T> = std::result::Result<T, CbclError>;

impl CbclError {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            CbclError::Config(_) => 2,
            CbclError::Format(_) | CbclError::Data(_) | CbclError::EmptyModel(_) | CbclError::Io(_) => 3,
            CbclError::Numerics { .. } => 4,
            CbclError::Increment { source, .. } => source.exit_code(),
        }
    }

    pub(crate) fn at_increment(self, index: usize) -> Self {
        match self {
            e @ CbclError::Increment { .. } => e,
            e => CbclError::Increment {
                index,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, looking through increment wrappers.
    pub fn root(&self) -> &CbclError {
        match self {
            CbclError::Increment { source, .. } => source.root(),
            e => e,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(CbclError::Config("x".into()).exit_code(), 2);
        assert_eq!(CbclError::Format("x".into()).exit_code(), 3);
        assert_eq!(CbclError::Data("x".into()).exit_code(), 3);
        let n = CbclError::Numerics {
            epoch: 3,
            message: "nan".into(),
        };
        assert_eq!(n.exit_code(), 4);
        let wrapped = n.at_increment(2);
        assert_eq!(wrapped.exit_code(), 4);
        assert!(wrapped.to_string().starts_with("increment 2"));
    }
}
