use crate::Shape;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch { op: &'static str, lhs: Shape, rhs: Shape },

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("backward: loss must be a scalar, got shape {0}")]
    NonScalarLoss(Shape),

    #[error("backward: loss is detached from the graph, no leaf requires grad")]
    Detached,
}

impl TensorError {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Invalid { op, msg: msg.into() }
    }

    pub fn mismatch(op: &'static str, lhs: Shape, rhs: Shape) -> Self {
        TensorError::ShapeMismatch { op, lhs, rhs }
    }
}
