use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("input {input:?} too small for architecture {arch}: minimum spatial extent is {min_h}x{min_w}")]
    InputTooSmall {
        arch: String,
        input: Vec<usize>,
        min_h: usize,
        min_w: usize,
    },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("recording shorter than window ({frames} < {window})")]
    RecordingTooShort { frames: usize, window: usize },

    #[error("manifest has no entry for subject {0}")]
    MissingSubject(String),

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("file truncated while reading {0}")]
    Truncated(&'static str),

    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("model has {found} classes but {expected} were expected")]
    ClassCountMismatch { expected: usize, found: usize },

    #[error("layer {layer}: all-zero denominator with zero stabilizer")]
    ZeroDenominator { layer: usize },

    #[error("rule assignment has no rule for layer {0}")]
    MissingRule(usize),

    #[error("rule {rule} cannot be applied to layer {layer}")]
    RuleNotApplicable { layer: usize, rule: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },

    #[error("no cycles detected")]
    NoCycles,

    #[error("curves are not comparable: {0}")]
    IncomparableCurves(String),

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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
