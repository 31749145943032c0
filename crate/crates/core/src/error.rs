//! Crate-wide error type.
//!
//! Variants are grouped by how a caller should react: configuration problems
//! (caller passed an invalid plan), data problems (inputs on disk or in memory
//! are unusable), and numerical failures (a computation produced a non-finite
//! or impossible value). The CLI maps these groups onto distinct exit codes.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // --- configuration -----------------------------------------------------
    /// One or more config fields are invalid; every offending field is listed.
    #[error("invalid config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    /// A config source contained keys that no field accepts.
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),

    // --- data --------------------------------------------------------------
    #[error("file not found: {0}")]
    MissingFile(PathBuf),

    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("duplicate id: {0}")]
    DuplicateId(u64),

    #[error("unknown id: {0}")]
    UnknownId(u64),

    #[error("embedding is not unit-norm (|norm - 1| = {deviation:.3e})")]
    NotNormalized { deviation: f64 },

    #[error("dataset provenance violation: {0}")]
    Provenance(String),

    // --- file formats ------------------------------------------------------
    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("file truncated while reading {context}")]
    Truncated { context: &'static str },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    // --- numerics ----------------------------------------------------------
    #[error("training diverged: non-finite loss at step {step}")]
    Divergence { step: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("metric undefined: {0}")]
    DegenerateMetric(String),

    // --- composition ---------------------------------------------------------
    /// A sweep point failed; the point is named, the cause is preserved.
    #[error("sweep point {point}: {source}")]
    SweepPoint {
        point: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Single-message convenience constructor for [`Error::InvalidConfig`].
    pub fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(vec![msg.into()])
    }

    /// True when the error signals a bad configuration rather than bad data.
    pub fn is_config(&self) -> bool {
        match self {
            Error::InvalidConfig(_) | Error::UnknownKeys(_) => true,
            Error::SweepPoint { source, .. } => source.is_config(),
            _ => false,
        }
    }

    /// True when the error signals a numerical failure.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Divergence { .. } | Error::NonFinite(_) | Error::DegenerateMetric(_) => true,
            Error::SweepPoint { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

/// Validation helper: accumulates problems so every offending field can be
/// reported at once instead of one error per run.
#[derive(Debug, Default)]
pub struct Problems(Vec<String>);

impl Problems {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, msg: impl Into<String>) {
        self.0.push(msg.into());
    }

    pub fn require(&mut self, ok: bool, msg: impl Into<String>) {
        if !ok {
            self.push(msg);
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(self.0))
        }
    }
}
