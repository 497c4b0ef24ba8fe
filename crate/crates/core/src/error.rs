use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("value {value} is outside the function domain (must be > 0)")]
    DomainError { value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("barycenter iteration stopped after {iterations} iterations with residual {residual:e}")]
    BarycenterNoConvergence {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("batch normalization needs at least 2 rows in train mode, got {rows}")]
    DegenerateBatch { rows: usize },

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("graph cycle detected at node {node}")]
    GraphCycle { node: usize },

    #[error("segment has {samples} samples, need at least 2")]
    TooFewSamples { samples: usize },

    #[error("band {lo}-{hi} Hz is invalid for sample rate {rate} Hz")]
    BandOutOfRange { lo: f64, hi: f64, rate: f64 },

    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),

    #[error("bad magic bytes in container")]
    BadMagic,

    #[error("container version {0} is not supported")]
    VersionUnsupported(u32),

    #[error("container is truncated")]
    TruncatedFile,

    #[error("checksum mismatch for entry '{0}'")]
    ChecksumMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("missing run: {0}")]
    MissingRun(String),

    #[error("incompatible runs, differing fields: {0:?}")]
    IncompatibleRuns(Vec<String>),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::InvalidConfig(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
