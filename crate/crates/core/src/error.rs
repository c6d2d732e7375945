// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by graph construction, generation, fitting and analysis.
#[derive(Debug, Error)]
pub enum Error {
    /// A graph hypothesis violates a structural requirement.
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    /// A node id is outside the hypothesis' node set.
    #[error("unknown node {node} in graph `{graph}`")]
    UnknownNode {
        /// Hypothesis name.
        graph: String,
        /// Offending node id.
        node: usize,
    },

    /// An argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation had nothing to work on (empty stream, empty group).
    #[error("no data: {0}")]
    NoData(String),

    /// The numerics failed (divergence, singular denominators).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A record does not match its schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// A pipeline stage failed.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        /// Stage name.
        stage: String,
        /// Underlying failure.
        source: Box<Error>,
    },

    /// Filesystem failure.
    #[error("{path}: {source}")]
    Io {
        /// Path being accessed.
        path: String,
        /// Underlying failure.
        source: std::io::Error,
    },

    /// JSON encoding or decoding failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for this error: 2 for data errors, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_owned(),
            source: Box::new(self),
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
