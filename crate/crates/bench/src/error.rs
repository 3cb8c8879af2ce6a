use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("unknown config key `{key}` (line {line})")]
    UnknownKey { key: String, line: usize },

    #[error("config key `{key}`: cannot parse `{value}`: {msg}")]
    ConfigValue {
        key: String,
        value: String,
        msg: String,
    },

    #[error("IDX format error at byte {offset}: {msg}")]
    Idx { offset: usize, msg: String },

    #[error("invalid experiment setup: {0}")]
    Setup(String),

    #[error("training diverged at epoch {epoch}, step {step} ({context}); last good epoch: {last_good_epoch:?}")]
    Diverged {
        epoch: usize,
        step: usize,
        context: String,
        last_good_epoch: Option<usize>,
    },

    #[error(transparent)]
    Core(#[from] sinkgraph_core::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> BenchError {
    let path = path.into();
    move |source| BenchError::Io { path, source }
}
