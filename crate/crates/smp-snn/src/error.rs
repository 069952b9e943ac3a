use thiserror::Error;

#[derive(Debug, Error)]
pub enum SmpError {
    #[error("config error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value encountered in {context}{}", iteration.map(|k| format!(" at iteration {k}")).unwrap_or_default())]
    NonFinite {
        context: &'static str,
        iteration: Option<usize>,
    },

    #[error("parse error in {path} at record {record}: {message}")]
    Parse {
        path: String,
        record: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SmpError>;

impl SmpError {
    pub fn config(msg: impl Into<String>) -> Self {
        SmpError::Config(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        SmpError::Io {
            path: path.into(),
            source,
        }
    }
}
