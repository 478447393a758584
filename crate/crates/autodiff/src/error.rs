use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: String,
        got: String,
    },
    #[error("backward root must be a scalar, got a {rows}x{cols} tensor")]
    NonScalarRoot { rows: usize, cols: usize },
    #[error("non-finite gradient in parameter `{name}` at optimiser step {step}")]
    NonFiniteGradient { name: String, step: u64 },
    #[error("parameter document is invalid: {0}")]
    Params(String),
}
