use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("planning error: no route from node {from} to node {to}")]
    Unreachable { from: usize, to: usize },
    #[error("unknown node {0}")]
    UnknownNode(usize),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("controller error: {0}")]
    Controller(String),
    #[error("argument error: {0}")]
    Argument(String),
}

pub type Result<T> = std::result::Result<T, SimError>;
