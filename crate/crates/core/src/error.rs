//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("sentence {id}: {msg}")]
    Validation { id: String, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("sentence {id} has {len} tokens, encoder max length is {max}")]
    TooLong { id: String, len: usize, max: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("training aborted at epoch {epoch}, batch {batch}: non-finite loss (separation={separation}, a_to_o={a_to_o}, o_to_a={o_to_a})")]
    TrainDiverged {
        epoch: usize,
        batch: usize,
        separation: f64,
        a_to_o: f64,
        o_to_a: f64,
    },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
