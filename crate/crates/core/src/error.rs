use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input too short: {len} samples, need at least {win_length}")]
    InputTooShort { len: usize, win_length: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: {what} is {got_bins}x{got_frames}, expected {want_bins}x{want_frames}")]
    ShapeMismatch {
        what: &'static str,
        got_bins: usize,
        got_frames: usize,
        want_bins: usize,
        want_frames: usize,
    },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("unsupported sample rate {got} Hz (expected {want} Hz, no resampling)")]
    UnsupportedSampleRate { got: u32, want: u32 },

    #[error("unsupported WAV layout: {0}")]
    UnsupportedWav(String),

    #[error("bad prior file {path}: {reason}")]
    PriorFormat { path: PathBuf, reason: String },

    #[error("insufficient decay range")]
    InsufficientDecay,

    #[error("no direct path: impulse response is all zero")]
    NoDirectPath,

    #[error("silent input: {0}")]
    SilentInput(&'static str),

    #[error("empty batch")]
    EmptyBatch,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}
