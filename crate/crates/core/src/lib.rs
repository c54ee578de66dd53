//! Single-channel speech dereverberation and blind room impulse response
//! identification by variational EM over a convolutive transfer function
//! (CTF) model.
//!
//! The pipeline is:
//!
//! 1. [`stft`]: analysis of the reverberant observation into a complex
//!    spectrogram.
//! 2. [`prior`]: an anechoic-speech prior precision, either from a clean
//!    reference (oracle) or from magnitudes exported by an external enhancer.
//! 3. [`vem`]: per-band variational EM estimating the anechoic spectrum, the
//!    CTF filter and the noise precision.
//! 4. [`rir`]: conversion of the CTF filter to a time-domain RIR through a
//!    pseudo sine-sweep measurement.
//! 5. [`acoustics`]: RT60 and DRR from an impulse response.
//!
//! [`simulate`] and [`eval`] support synthetic experiments and scoring.

pub mod acoustics;
pub mod config;
pub mod dsp;
mod error;
pub mod eval;
pub mod prior;
pub mod rir;
pub mod pipeline;
pub mod simulate;
pub mod stft;
pub mod vem;
pub mod wav;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use stft::{Spectrogram, StftConfig, Waveform};
