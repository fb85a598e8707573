//! Text classification with a weighted recurrent neural network.
//!
//! The pipeline: tokenize a labeled document collection, learn (or load)
//! word vectors, run each document through an LSTM, pool the per-word
//! hidden states with learned positional weights into a document vector,
//! and classify with a small dense network. Baselines (last-state RNN,
//! bidirectional RNN, bag-of-embeddings DNN) share the same components.
//! All gradients are hand-derived and checked against finite differences.

pub mod config;
pub mod corpus;
pub mod embeddings;
pub mod evaluation;
pub mod gradcheck;
pub mod lstm;
pub mod matrix;
pub mod models;
pub mod synthetic;
pub mod training;

use std::process::ExitCode;

/// Crate-wide error type. Variants map onto CLI exit codes:
/// config/usage = 1, data = 2, numerical failure = 3.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Error::Config(_) => ExitCode::from(1),
            Error::Data(_) | Error::Shape(_) | Error::Io(_) => ExitCode::from(2),
            Error::Numeric(_) => ExitCode::from(3),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
