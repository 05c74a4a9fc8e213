use thiserror::Error;

/// Errors produced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid site: {0}")]
    InvalidSite(String),

    #[error("unsupported site/metric combination: {site} sites require {required}")]
    UnsupportedMetric {
        site: &'static str,
        required: &'static str,
    },

    #[error("invalid site set: {0}")]
    InvalidSiteSet(String),

    #[error("invalid generation parameters: {0}")]
    InvalidGeneration(String),

    #[error("k = {k} exceeds the number of items ({n})")]
    TooManyClusters { k: usize, n: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "fat bisector too thin; increase epsilon (epsilon = {epsilon}, accepted {accepted} of {drawn} probes)"
    )]
    FatBisectorTooThin {
        epsilon: f64,
        accepted: usize,
        drawn: usize,
    },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("node {node}: {source}")]
    Node {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("model format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
