//! Short-time Fourier analysis and least-squares overlap-add synthesis.
//!
//! Frames are left-aligned: frame `t` covers samples `[t*hop, t*hop + win)`
//! and the input is zero-padded at the tail so the last frame is complete.
//! There is no centering, so a delay of one frame is exactly one hop.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result};

/// Mono time-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidConfig("waveform must have at least one sample".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("waveform"));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Truncates or zero-pads to `len` samples (`len` is clamped to ≥ 1).
    pub fn resized(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len.max(1), 0.0);
        Self { samples, sample_rate: self.sample_rate }
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|v| v * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

/// Transform parameters: window length (= FFT size), hop and the tabulated
/// periodic Hann window used for both analysis and synthesis.
#[derive(Debug, Clone, PartialEq)]
pub struct StftConfig {
    win_length: usize,
    hop: usize,
    window: Vec<f64>,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self::new(512, 128).expect("default STFT config is valid")
    }
}

impl StftConfig {
    pub fn new(win_length: usize, hop: usize) -> Result<Self> {
        if win_length < 2 || hop == 0 {
            return Err(Error::InvalidConfig(format!(
                "win_length ({win_length}) must be ≥ 2 and hop ({hop}) ≥ 1"
            )));
        }
        if !win_length.is_multiple_of(hop) {
            return Err(Error::InvalidConfig(format!(
                "hop ({hop}) must divide win_length ({win_length})"
            )));
        }
        let window = periodic_hann(win_length);
        let cfg = Self { win_length, hop, window };
        // Hann² only sums to a constant for overlaps of 2/3 or more.
        let sums = cfg.squared_window_sums();
        let (lo, hi) = sums
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if hi - lo > 1e-9 * hi {
            return Err(Error::InvalidConfig(format!(
                "hop {hop} does not give a constant squared-window overlap-add for win_length {win_length}"
            )));
        }
        Ok(cfg)
    }

    pub fn win_length(&self) -> usize {
        self.win_length
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn fft_size(&self) -> usize {
        self.win_length
    }

    /// Number of frequency bins in the half spectrum.
    pub fn n_bins(&self) -> usize {
        self.fft_size() / 2 + 1
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Frames produced for a signal of `len` samples (`len ≥ win_length`).
    pub fn n_frames(&self, len: usize) -> usize {
        if len <= self.win_length {
            1
        } else {
            1 + (len - self.win_length).div_ceil(self.hop)
        }
    }

    /// Length of the synthesized signal for `n_frames` frames.
    pub fn synthesis_len(&self, n_frames: usize) -> usize {
        (n_frames.max(1) - 1) * self.hop + self.win_length
    }

    /// Steady-state overlap-add gain of the squared window.
    pub fn ola_gain(&self) -> f64 {
        let sums = self.squared_window_sums();
        sums.iter().sum::<f64>() / sums.len() as f64
    }

    fn squared_window_sums(&self) -> Vec<f64> {
        (0..self.hop)
            .map(|n| {
                (n..self.win_length)
                    .step_by(self.hop)
                    .map(|i| self.window[i] * self.window[i])
                    .sum()
            })
            .collect()
    }
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Complex half-spectrum STFT, stored frequency-major (`F` rows of `T` frames).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    data: Vec<Complex64>,
    n_bins: usize,
    n_frames: usize,
    config: StftConfig,
    scale: f64,
    sample_rate: u32,
}

impl Spectrogram {
    /// All-zero spectrogram with the same shape, config, scale and rate as `like`.
    pub fn zeros_like(like: &Spectrogram) -> Self {
        Self {
            data: vec![Complex64::default(); like.data.len()],
            ..like.clone_header()
        }
    }

    fn clone_header(&self) -> Self {
        Self {
            data: Vec::new(),
            n_bins: self.n_bins,
            n_frames: self.n_frames,
            config: self.config.clone(),
            scale: self.scale,
            sample_rate: self.sample_rate,
        }
    }

    /// Builds a spectrogram from frequency-major data.
    pub fn from_data(
        config: StftConfig,
        n_frames: usize,
        data: Vec<Complex64>,
        scale: f64,
        sample_rate: u32,
    ) -> Result<Self> {
        let n_bins = config.n_bins();
        if data.len() != n_bins * n_frames {
            return Err(Error::InvalidConfig(format!(
                "spectrogram data has {} entries, expected {n_bins}x{n_frames}",
                data.len()
            )));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("spectrogram"));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidConfig(format!("spectrogram scale {scale} must be positive")));
        }
        Ok(Self { data, n_bins, n_frames, config, scale, sample_rate })
    }

    /// Same header as `self` with new frequency-major data.
    pub fn with_data(&self, data: Vec<Complex64>) -> Result<Self> {
        Self::from_data(self.config.clone(), self.n_frames, data, self.scale, self.sample_rate)
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    /// Factor that maps the normalized signal back to the source amplitude.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn at(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.n_frames + frame]
    }

    pub fn row(&self, bin: usize) -> &[Complex64] {
        &self.data[bin * self.n_frames..(bin + 1) * self.n_frames]
    }

    pub fn row_mut(&mut self, bin: usize) -> &mut [Complex64] {
        &mut self.data[bin * self.n_frames..(bin + 1) * self.n_frames]
    }

    pub fn rows(&self) -> std::slice::Chunks<'_, Complex64> {
        self.data.chunks(self.n_frames)
    }

    pub fn rows_mut(&mut self) -> std::slice::ChunksMut<'_, Complex64> {
        self.data.chunks_mut(self.n_frames)
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    /// Copy with frequency rows `[0, count)` set to zero.
    pub fn zero_low_bins(mut self, count: usize) -> Self {
        let end = count.min(self.n_bins) * self.n_frames;
        self.data[..end].fill(Complex64::default());
        self
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Plans {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }
}

/// Forward STFT of `wave` as-is (`scale = 1`).
pub fn forward(wave: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    analyze(wave.samples(), cfg, 1.0, wave.sample_rate())
}

/// Forward STFT after normalizing `wave` by its maximum absolute value.
///
/// The factor is kept in [`Spectrogram::scale`] so [`inverse`] returns a
/// signal at the original amplitude. A silent input keeps scale 1.
pub fn forward_normalized(wave: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    let peak = wave.max_abs();
    let scale = if peak > 0.0 { peak } else { 1.0 };
    let samples: Vec<f64> = wave.samples().iter().map(|v| v / scale).collect();
    analyze(&samples, cfg, scale, wave.sample_rate())
}

fn analyze(samples: &[f64], cfg: &StftConfig, scale: f64, sample_rate: u32) -> Result<Spectrogram> {
    let win = cfg.win_length();
    if samples.len() < win {
        return Err(Error::InputTooShort { len: samples.len(), win_length: win });
    }
    let n_frames = cfg.n_frames(samples.len());
    let n_bins = cfg.n_bins();
    let plans = Plans::new(cfg.fft_size());
    let mut data = vec![Complex64::default(); n_bins * n_frames];
    let mut buf = vec![Complex64::default(); win];
    for t in 0..n_frames {
        let start = t * cfg.hop();
        for (n, slot) in buf.iter_mut().enumerate() {
            let x = samples.get(start + n).copied().unwrap_or(0.0);
            *slot = Complex64::new(x * cfg.window[n], 0.0);
        }
        plans.forward.process(&mut buf);
        for f in 0..n_bins {
            data[f * n_frames + t] = buf[f];
        }
    }
    Ok(Spectrogram { data, n_bins, n_frames, config: cfg.clone(), scale, sample_rate })
}

/// Lower bound on the overlap-add normalizer, relative to its interior value.
pub const SYNTHESIS_FLOOR: f64 = 1e-3;

/// Least-squares overlap-add synthesis, multiplied by the spectrogram scale.
///
/// The output has `(T - 1) * hop + win_length` samples; callers truncate to
/// the original length.
pub fn inverse(spec: &Spectrogram) -> Result<Waveform> {
    let cfg = spec.config();
    if spec.n_bins != cfg.n_bins() || spec.data.len() != spec.n_bins * spec.n_frames {
        return Err(Error::ShapeMismatch {
            what: "spectrogram",
            got_bins: spec.n_bins,
            got_frames: spec.data.len() / spec.n_bins.max(1),
            want_bins: cfg.n_bins(),
            want_frames: spec.n_frames,
        });
    }
    let n = cfg.fft_size();
    let hop = cfg.hop();
    let out_len = cfg.synthesis_len(spec.n_frames);
    let plans = Plans::new(n);
    let mut out = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];
    let mut buf = vec![Complex64::default(); n];
    let inv_n = 1.0 / n as f64;
    for t in 0..spec.n_frames {
        for k in 0..spec.n_bins {
            buf[k] = spec.at(k, t);
        }
        for k in spec.n_bins..n {
            buf[k] = spec.at(n - k, t).conj();
        }
        plans.inverse.process(&mut buf);
        let start = t * hop;
        for (i, c) in buf.iter().enumerate() {
            let w = cfg.window[i];
            out[start + i] += c.re * inv_n * w;
            norm[start + i] += w * w;
        }
    }
    // Near the signal edges only window tails overlap; flooring the
    // normalizer keeps inconsistent spectra from being amplified there.
    let floor = SYNTHESIS_FLOOR * cfg.ola_gain();
    for (y, d) in out.iter_mut().zip(&norm) {
        *y = *y / d.max(floor) * spec.scale;
    }
    Waveform::new(out, spec.sample_rate)
}
