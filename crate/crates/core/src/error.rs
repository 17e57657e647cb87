use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("star-shapedness lost at node {node}: r = {value}")]
    StarShapeLost { node: usize, value: f64 },

    #[error("left the positive H_m cone at node {node}: H_m = {value}")]
    ConeExit { node: usize, value: f64 },

    #[error("non-finite value at node {node}")]
    NonFinite { node: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Index of the grid node that triggered a geometric failure, if any.
    pub fn node(&self) -> Option<usize> {
        match self {
            Error::StarShapeLost { node, .. }
            | Error::ConeExit { node, .. }
            | Error::NonFinite { node } => Some(*node),
            _ => None,
        }
    }
}
