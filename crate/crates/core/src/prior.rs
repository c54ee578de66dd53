//! Anechoic-speech prior precision.
//!
//! The prior on each anechoic STFT coefficient is a zero-mean complex
//! Gaussian with precision `alpha(f,t) = 1 / max(|S(f,t)|², floor)`, where
//! `|S|` is either the magnitude of a clean reference (oracle) or magnitudes
//! produced by an external enhancer and exchanged through a VPRI file.
//!
//! VPRI layout, little-endian:
//!
//! | bytes | content                                  |
//! |-------|------------------------------------------|
//! | 4     | magic `b"VPRI"`                          |
//! | 4     | `u32` version, currently 1               |
//! | 4     | `u32` F (frequency bins)                 |
//! | 4     | `u32` T (frames)                         |
//! | 4·F·T | `f32` magnitudes, frequency-major        |
//!
//! Magnitudes are expected in the observation's normalized domain, i.e. the
//! STFT of a signal divided by the observation's maximum absolute value.

use std::fs;
use std::path::Path;

use crate::stft::{self, Spectrogram, Waveform};
use crate::{Error, Result};

pub const DEFAULT_POWER_FLOOR: f64 = 1e-10;

const MAGIC: &[u8; 4] = b"VPRI";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Nonnegative F×T magnitude matrix, frequency-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Magnitudes {
    n_bins: usize,
    n_frames: usize,
    values: Vec<f64>,
}

impl Magnitudes {
    pub fn new(n_bins: usize, n_frames: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_bins * n_frames {
            return Err(Error::InvalidConfig(format!(
                "magnitude matrix has {} values, expected {n_bins}x{n_frames}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("magnitudes"));
        }
        if values.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidConfig("magnitudes must be nonnegative".into()));
        }
        Ok(Self { n_bins, n_frames, values })
    }

    pub fn from_spectrogram(spec: &Spectrogram) -> Self {
        Self { n_bins: spec.n_bins(), n_frames: spec.n_frames(), values: spec.magnitudes() }
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Fails unless the shape equals the observation spectrogram's.
    pub fn check_matches(&self, obs: &Spectrogram) -> Result<()> {
        check_shape("prior", self.n_bins, self.n_frames, obs)
    }
}

fn check_shape(what: &'static str, bins: usize, frames: usize, obs: &Spectrogram) -> Result<()> {
    if bins != obs.n_bins() || frames != obs.n_frames() {
        return Err(Error::ShapeMismatch {
            what,
            got_bins: bins,
            got_frames: frames,
            want_bins: obs.n_bins(),
            want_frames: obs.n_frames(),
        });
    }
    Ok(())
}

/// Prior precision `alpha(f,t)`, strictly positive and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorPrecision {
    n_bins: usize,
    n_frames: usize,
    alpha: Vec<f64>,
    floor: f64,
}

impl PriorPrecision {
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha
    }

    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.alpha[bin * self.n_frames + frame]
    }

    pub fn row(&self, bin: usize) -> &[f64] {
        &self.alpha[bin * self.n_frames..(bin + 1) * self.n_frames]
    }

    pub fn check_matches(&self, obs: &Spectrogram) -> Result<()> {
        check_shape("prior precision", self.n_bins, self.n_frames, obs)
    }
}

/// `alpha = 1 / max(mag², floor)` elementwise.
pub fn from_magnitude(mag: &Magnitudes, floor: f64) -> Result<PriorPrecision> {
    if !(floor.is_finite() && floor > 0.0) {
        return Err(Error::InvalidConfig(format!("power floor {floor} must be positive")));
    }
    if mag.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("magnitudes"));
    }
    let alpha = mag.values.iter().map(|m| 1.0 / (m * m).max(floor)).collect();
    Ok(PriorPrecision { n_bins: mag.n_bins, n_frames: mag.n_frames, alpha, floor })
}

/// Oracle prior from a clean (direct-path) reference aligned with `obs`.
///
/// The reference is normalized by the observation's scale so both live in the
/// same domain, then zero-padded or truncated to the observation's frame
/// count. A reference whose own frame count differs by more than one frame is
/// rejected.
pub fn oracle_from_reference(
    clean: &Waveform,
    obs: &Spectrogram,
    floor: f64,
) -> Result<PriorPrecision> {
    if clean.sample_rate() != obs.sample_rate() {
        return Err(Error::LengthMismatch(format!(
            "reference sample rate {} differs from observation {}",
            clean.sample_rate(),
            obs.sample_rate()
        )));
    }
    let cfg = obs.config();
    let ref_frames = cfg.n_frames(clean.len().max(cfg.win_length()));
    if ref_frames.abs_diff(obs.n_frames()) > 1 {
        return Err(Error::LengthMismatch(format!(
            "reference spans {ref_frames} frames, observation {}",
            obs.n_frames()
        )));
    }
    let aligned = clean.resized(cfg.synthesis_len(obs.n_frames())).scaled(1.0 / obs.scale());
    let spec = stft::forward(&aligned, cfg)?;
    debug_assert_eq!(spec.n_frames(), obs.n_frames());
    from_magnitude(&Magnitudes::from_spectrogram(&spec), floor)
}

pub fn encode_prior(mag: &Magnitudes) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * mag.values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(mag.n_bins as u32).to_le_bytes());
    out.extend_from_slice(&(mag.n_frames as u32).to_le_bytes());
    for v in &mag.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

/// Parses VPRI bytes; `origin` is only used in error messages.
pub fn decode_prior(bytes: &[u8], origin: &Path) -> Result<Magnitudes> {
    let bad = |reason: String| Error::PriorFormat { path: origin.to_path_buf(), reason };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the 16-byte header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad(format!("bad magic {:?}, expected \"VPRI\"", &bytes[..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let (n_bins, n_frames) = (word(8) as usize, word(12) as usize);
    let expected = n_bins
        .checked_mul(n_frames)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| bad(format!("dimensions {n_bins}x{n_frames} overflow")))?;
    if bytes.len() - HEADER_LEN != expected {
        return Err(bad(format!(
            "payload is {} bytes, {n_bins}x{n_frames} needs {expected}",
            bytes.len() - HEADER_LEN
        )));
    }
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(bad("magnitudes must be finite and nonnegative".into()));
    }
    Ok(Magnitudes { n_bins, n_frames, values })
}

pub fn save_prior_file(path: impl AsRef<Path>, mag: &Magnitudes) -> Result<()> {
    fs::write(path, encode_prior(mag))?;
    Ok(())
}

pub fn load_prior_file(path: impl AsRef<Path>) -> Result<Magnitudes> {
    let path = path.as_ref();
    decode_prior(&fs::read(path)?, path)
}
