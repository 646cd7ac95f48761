use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error in {}: {msg}", path.display())]
    Config { path: PathBuf, msg: String },
    #[error("data error in {}: {msg}", path.display())]
    Data { path: PathBuf, msg: String },
    #[error("cannot access {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{context}: {source}")]
    Model {
        context: String,
        source: cogfuse_model::ModelError,
    },
    #[error("{context}: {source}")]
    Sim {
        context: String,
        source: cogfuse_sim::SimError,
    },
}

impl CliError {
    /// Process exit status: 1 for usage errors, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn config(path: &Path, msg: impl Into<String>) -> Self {
        Self::Config {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    pub(crate) fn data(path: &Path, msg: impl Into<String>) -> Self {
        Self::Data {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn model(context: impl Into<String>) -> impl FnOnce(cogfuse_model::ModelError) -> Self {
        let context = context.into();
        move |source| Self::Model { context, source }
    }

    pub(crate) fn sim(context: impl Into<String>) -> impl FnOnce(cogfuse_sim::SimError) -> Self {
        let context = context.into();
        move |source| Self::Sim { context, source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
