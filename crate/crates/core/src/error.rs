use thiserror::Error;

pub type Result<T> = std::result::Result<T, XplError>;

#[derive(Debug, Error)]
pub enum XplError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Domain { op: &'static str, msg: String },
    #[error("{op}: zero-norm input")]
    ZeroNorm { op: &'static str },
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("backward root must be scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("map is constant; correlation undefined")]
    ConstantMap,
    #[error("model tag mismatch: {0}")]
    TagMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl XplError {
    pub(crate) fn domain(op: &'static str, msg: impl Into<String>) -> Self {
        XplError::Domain {
            op,
            msg: msg.into(),
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        XplError::Parse {
            line,
            msg: msg.into(),
        }
    }
}
