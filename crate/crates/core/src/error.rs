use std::fmt;

use cdl_autodiff::AutodiffError;

/// Which part of a step produced a non-finite value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Position,
    Force,
    Impulse,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Position => "position",
            Component::Force => "force",
            Component::Impulse => "impulse",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoreError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contact flags inconsistent for pair ({0}, {1}): exactly one flag set")]
    InconsistentPair(usize, usize),
    #[error("degenerate contact operator: body {0} is active but its row is zero")]
    DegenerateContact(usize),
    #[error("non-finite {component} at step {step}")]
    NonFinite { component: Component, step: usize },
    #[error("simulation blew up at step {0}")]
    BlowUp(usize),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("malformed document: {0}")]
    Format(String),
}

impl From<std::io::Error> for CoreError {
    fn from(e: std::io::Error) -> Self {
        CoreError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CoreError {
    fn from(e: serde_json::Error) -> Self {
        CoreError::Format(e.to_string())
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
