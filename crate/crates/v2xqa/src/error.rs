use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("task bank validation failed: {0}")]
    BankValidation(String),

    #[error("unknown question id: {0}")]
    UnknownQid(String),

    #[error("unknown scene id: {0}")]
    UnknownScene(u64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("corpus construction failed: {0}")]
    Corpus(String),

    #[error("split construction failed: {0}")]
    Split(String),

    #[error("prompt rendering failed: {0}")]
    Render(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
