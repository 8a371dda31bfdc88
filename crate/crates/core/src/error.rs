use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("column {column} has zero norm and cannot be standardized")]
    ZeroColumn { column: usize },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("anchor validation failed: {0}")]
    AnchorViolation(String),

    #[error("infeasible generator configuration: {0}")]
    Infeasible(String),

    #[error("node {node} in network {network}: {source}")]
    Node {
        node: usize,
        network: u8,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} node(s) failed: {summary}")]
    NodeFailures { failed: usize, summary: String },
}

impl Error {
    pub(crate) fn at_node(self, node: usize, network: u8) -> Error {
        Error::Node {
            node,
            network,
            source: Box::new(self),
        }
    }

    /// Coarse category used by front ends to choose an exit status.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Dimension(_)
            | Error::InvalidArgument(_)
            | Error::AnchorViolation(_)
            | Error::Infeasible(_) => ErrorKind::Validation,
            Error::ZeroColumn { .. } | Error::Singular(_) | Error::NodeFailures { .. } => {
                ErrorKind::Numerical
            }
            Error::Node { source, .. } => source.kind(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
}
