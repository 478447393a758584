use cdl_core::CoreError;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("malformed input: {0}")]
    Input(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl LabError {
    /// 2 for bad configuration or input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::Input(_) => 2,
            LabError::Numerical(_) => 3,
            LabError::Io(_) => 1,
        }
    }
}

impl From<CoreError> for LabError {
    fn from(e: CoreError) -> Self {
        let msg = e.to_string();
        match e {
            CoreError::Config(_) | CoreError::Length(_) => LabError::Config(msg),
            CoreError::InconsistentPair(..)
            | CoreError::DegenerateContact(_)
            | CoreError::NonFinite { .. }
            | CoreError::BlowUp(_)
            | CoreError::NonFiniteLoss { .. }
            | CoreError::Autodiff(_) => LabError::Numerical(msg),
            CoreError::Format(_) => LabError::Input(msg),
            CoreError::Io(_) => LabError::Io(msg),
        }
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}
