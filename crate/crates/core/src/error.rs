//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operation received operands whose shapes do not compose.
    #[error("shape mismatch in `{op}`: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Backward was requested from a non-scalar root node.
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },

    /// Two consecutive layers of a network spec do not compose.
    #[error("layers do not compose: `{from}` produces {shape:?}, `{to}` cannot consume it")]
    LayerCompose {
        from: String,
        to: String,
        shape: Vec<usize>,
    },

    /// A pair's polarity flag contradicts the labels of its endpoints.
    #[error("pair ({a}, {b}) flagged {flagged} but labels are {label_a} and {label_b}")]
    PairContract {
        a: usize,
        b: usize,
        flagged: &'static str,
        label_a: usize,
        label_b: usize,
    },

    #[error("index {index} out of bounds for {what} of length {len}")]
    IndexOutOfBounds {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("dataset `{0}` is empty")]
    EmptyDataset(String),

    #[error("domain generalization requires at least 2 domains, got {0}")]
    TooFewDomains(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("IDX file `{path}`: {detail}")]
    Idx { path: String, detail: String },

    #[error("CSV dataset `{path}` line {line}: {detail}")]
    CsvData {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
