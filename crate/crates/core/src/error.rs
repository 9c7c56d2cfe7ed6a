use std::path::PathBuf;

use thiserror::Error;

use crate::quantum::DensityReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("invalid density matrix: {0}")]
    InvalidDensity(DensityReport),

    #[error("Kraus set is not trace preserving (|sum K^H K - I|_F = {residual:.3e})")]
    NotTracePreserving { residual: f64 },

    #[error("matrix is not on the Stiefel manifold (|X^H X - I|_F = {residual:.3e})")]
    NotOnStiefel { residual: f64 },

    #[error("cannot partition {rows} rows into blocks of {block_dim}")]
    Partition { rows: usize, block_dim: usize },

    #[error(
        "zero-probability observation: symbol {symbol} at step {step}{} (p = {prob:.3e})",
        sequence.map(|s| format!(" of sequence {s}")).unwrap_or_default()
    )]
    ZeroProbability {
        sequence: Option<usize>,
        step: usize,
        symbol: usize,
        prob: f64,
    },

    #[error("observation has probability {prob:.3e}, below the underflow floor")]
    ImpossibleObservation { prob: f64 },

    #[error("symbol {symbol} outside alphabet of size {alphabet}")]
    SymbolOutOfRange { symbol: usize, alphabet: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty data set")]
    EmptyData,

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Attach the index of the offending sequence to a zero-probability error.
    pub(crate) fn in_sequence(self, index: usize) -> Self {
        match self {
            Error::ZeroProbability { step, symbol, prob, .. } => Error::ZeroProbability {
                sequence: Some(index),
                step,
                symbol,
                prob,
            },
            other => other,
        }
    }
}
