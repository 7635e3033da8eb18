use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: range {start}..{end} out of bounds for extent {extent}")]
    Range {
        op: &'static str,
        start: usize,
        end: usize,
        extent: usize,
    },
    #[error("{op} of an empty list")]
    Empty { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NanGradient(String),
    #[error("loss closure is not deterministic: two evaluations gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },
}

pub type Result<T, E = NumericError> = std::result::Result<T, E>;
