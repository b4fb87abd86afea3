use std::path::PathBuf;

/// Errors surfaced by every part of the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("{what}: input too short for receptive field, requires {required} but got {actual}")]
    TooShort {
        what: String,
        required: usize,
        actual: usize,
    },

    #[error("id {id} out of range for vocabulary of size {vocab}")]
    IdOutOfRange { id: usize, vocab: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("gated activation needs an even feature count, got {0}")]
    OddGatedFeatures(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Invalid(String),

    #[error("bad magic: not a feature sequence file")]
    BadMagic,

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("track length mismatch: {track} has {found} entries, expected {expected}")]
    LengthMismatch {
        track: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("parameter {name}: shape {found:?} does not match expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("standard deviation of {0} is zero")]
    ZeroVariance(String),

    #[error("no phrase long enough: window span {span} exceeds longest usable phrase {longest}")]
    NoUsablePhrase { span: usize, longest: usize },

    #[error("empty evaluation split")]
    EmptySplit,

    #[error("training diverged at update {update} (last good checkpoint: {last_checkpoint:?})")]
    Divergence {
        update: u64,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("degenerate scores: {0}")]
    DegenerateScores(String),

    #[error("{0}")]
    Usage(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
