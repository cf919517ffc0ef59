use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("no training triples")]
    NoTrainingTriples,

    #[error("id overflow: {0}")]
    IdOverflow(String),

    #[error("unknown entity id {0}")]
    UnknownEntity(usize),

    #[error("unknown relation id {0}")]
    UnknownRelation(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty softmax group {0}")]
    EmptyGroup(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty evaluation split")]
    EmptySplit,

    #[error("pagerank did not converge after {iters} iterations (residual {residual:e})")]
    NonConvergence { iters: usize, residual: f64 },

    #[error("entity {0} does not appear in the attention traces")]
    EntityNotTraced(usize),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The error with any stage tags removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit status: 2 for bad input, 3 for numeric failure, 4 for
    /// non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::NonConvergence { .. } => 4,
            e if e.is_input_error() => 2,
            _ => 3,
        }
    }

    /// Whether this error comes from bad input (files, ids, config) rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self.root(),
            Error::Io { .. }
                | Error::MissingFile(_)
                | Error::Parse { .. }
                | Error::NoTrainingTriples
                | Error::IdOverflow(_)
                | Error::UnknownEntity(_)
                | Error::UnknownRelation(_)
                | Error::Config(_)
                | Error::EmptySplit
                | Error::EntityNotTraced(_)
                | Error::Checkpoint(_)
                | Error::Dimension(_)
                | Error::EmptyGroup(_)
        )
    }
}
