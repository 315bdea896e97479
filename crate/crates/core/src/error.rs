use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    DimensionMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("layer {layer} has out_dim {out_dim} but layer {next} has in_dim {in_dim}")]
    ChainViolation {
        layer: usize,
        next: usize,
        out_dim: usize,
        in_dim: usize,
    },

    #[error("layer index {index} out of range 1..={layers}")]
    InvalidLayer { index: usize, layers: usize },

    #[error("bad magic {found:?} at byte 0, expected {expected:?}")]
    BadMagic { expected: String, found: String },

    #[error("{format} version {found} is not supported (expected {expected})")]
    VersionMismatch {
        format: &'static str,
        found: char,
        expected: char,
    },

    #[error("truncated {format} at byte {offset}: {needed} more bytes required")]
    Truncated {
        format: &'static str,
        offset: usize,
        needed: usize,
    },

    #[error("malformed {format} at byte {offset}: {reason}")]
    Malformed {
        format: &'static str,
        offset: usize,
        reason: String,
    },

    #[error("explicit gradient needs {required} entries, guard allows {allowed}")]
    SizeGuard { required: u64, allowed: u64 },

    #[error("incompatible features: {0}")]
    FeatureMismatch(String),

    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    #[error("all training labels are {0:+}; both classes are required")]
    AllSameSign(i8),

    #[error("SMO did not converge after {iterations} iterations (duality gap {gap:e}, max violation {violation:e})")]
    NotConverged {
        iterations: usize,
        gap: f64,
        violation: f64,
    },

    #[error("class {class}: {source}")]
    Class {
        class: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("average precision needs at least one relevant item")]
    NoRelevant,

    #[error("no class has both positive and negative samples")]
    NoEvaluableClasses,

    #[error("fingerprint mismatch: model trained on {model}, got {given}")]
    FingerprintMismatch { model: String, given: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("model file: {0}")]
    BadModel(String),

    #[error("model file: {0}")]
    ModelFormat(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by invalid parameters rather than by the data.
    pub fn is_usage_error(&self) -> bool {
        match self {
            Error::InvalidArgument(_) | Error::InvalidTemperature(_) | Error::InvalidLayer { .. } => true,
            Error::Sample { source, .. } | Error::Class { source, .. } => source.is_usage_error(),
            _ => false,
        }
    }
}
