use std::path::PathBuf;

/// Errors raised across the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semi-definite (eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("malformed network spec: {0}")]
    Spec(String),

    #[error("input too small at layer {layer}: {detail}")]
    Shape { layer: usize, detail: String },

    #[error("tape does not match network: {0}")]
    Tape(String),

    #[error("region grid does not fit activations: {0}")]
    Grid(String),

    #[error("unknown image {0}")]
    UnknownImage(u32),

    #[error("no positive available for query {0}")]
    NoPositive(u32),

    #[error("undefined scale change between images {0} and {1}: no shared points")]
    UndefinedScale(u32, u32),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("only {available} negative candidates for query {query}, {requested} requested (deficit {})", requested - available)]
    ShortList {
        query: u32,
        requested: usize,
        available: usize,
    },

    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("evaluation protocol: {0}")]
    Protocol(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("bad file format in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
