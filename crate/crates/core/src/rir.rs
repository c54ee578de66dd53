//! CTF filter to room impulse response through a pseudo sweep measurement.
//!
//! A logarithmic sine sweep is analyzed with the same STFT as the speech,
//! filtered band by band with the CTF along the frame axis, synthesized back
//! to a waveform, and deconvolved with the sweep's inverse filter.

use num_complex::Complex64;

use crate::dsp::{argmax_abs, convolve};
use crate::stft::{self, Spectrogram, StftConfig, Waveform};
use crate::vem::CtfFilter;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub f1: f64,
    pub f2: f64,
    pub duration_s: f64,
    pub fade_in: usize,
    pub fade_out: usize,
    pub sample_rate: u32,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            f1: 62.5,
            f2: 8000.0,
            duration_s: 8.192,
            fade_in: 256,
            fade_out: 128,
            sample_rate: 16000,
        }
    }
}

impl SweepConfig {
    /// Sweep length in samples.
    pub fn len(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.f1 > 0.0 && self.f1 < self.f2 && self.f2 <= nyquist) {
            return Err(Error::InvalidConfig(format!(
                "sweep needs 0 < f1 < f2 ≤ {nyquist} Hz, got {} .. {}",
                self.f1, self.f2
            )));
        }
        let exact = self.duration_s * self.sample_rate as f64;
        if (exact - exact.round()).abs() > 1e-6 || exact < 2.0 {
            return Err(Error::InvalidConfig(format!(
                "sweep duration {} s is not a whole number of samples",
                self.duration_s
            )));
        }
        if self.fade_in + self.fade_out > self.len() {
            return Err(Error::InvalidConfig("sweep fades longer than the sweep".into()));
        }
        Ok(())
    }

    /// `ln(ω2/ω1)`.
    fn log_ratio(&self) -> f64 {
        (self.f2 / self.f1).ln()
    }
}

/// Sweep phase `N·ω1/ln(ω2/ω1)·(exp(n·ln(ω2/ω1)/N) - 1)` in radians.
pub fn sweep_phase(n: f64, cfg: &SweepConfig) -> f64 {
    let len = cfg.len() as f64;
    let w1 = 2.0 * std::f64::consts::PI * cfg.f1 / cfg.sample_rate as f64;
    let k = cfg.log_ratio();
    len * w1 / k * ((n * k / len).exp() - 1.0)
}

/// Logarithmic sine sweep with half-raised-cosine fades.
pub fn log_sweep(cfg: &SweepConfig) -> Result<Waveform> {
    cfg.validate()?;
    let len = cfg.len();
    let mut e: Vec<f64> = (0..len).map(|n| sweep_phase(n as f64, cfg).sin()).collect();
    for n in 0..cfg.fade_in {
        e[n] *= 0.5 - 0.5 * (std::f64::consts::PI * n as f64 / cfg.fade_in as f64).cos();
    }
    for n in 0..cfg.fade_out {
        e[len - 1 - n] *= 0.5 - 0.5 * (std::f64::consts::PI * n as f64 / cfg.fade_out as f64).cos();
    }
    Waveform::new(e, cfg.sample_rate)
}

/// Inverse filter of a sweep and the position of its deconvolution peak.
#[derive(Debug, Clone)]
pub struct InverseFilter {
    pub filter: Waveform,
    /// Index of the peak of `conv(sweep, filter)`.
    pub peak_index: usize,
}

/// Time-reversed sweep with an exponentially decaying envelope, scaled so
/// `conv(sweep, v)` peaks at exactly 1.
pub fn inverse_filter(sweep: &Waveform, cfg: &SweepConfig) -> Result<InverseFilter> {
    cfg.validate()?;
    let len = sweep.len();
    let k = cfg.log_ratio();
    let raw: Vec<f64> = sweep
        .samples()
        .iter()
        .rev()
        .enumerate()
        .map(|(n, v)| v * (-(n as f64) * k / len as f64).exp())
        .collect();
    let response = convolve(sweep.samples(), &raw);
    let peak_index = argmax_abs(&response);
    let gain = 1.0 / response[peak_index];
    Ok(InverseFilter {
        filter: Waveform::new(raw.iter().map(|v| v * gain).collect(), sweep.sample_rate())?,
        peak_index,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RirConfig {
    pub sweep: SweepConfig,
    /// Samples kept on each side of the CTF support.
    pub crop_margin: usize,
    /// Lowest bands zeroed before the pseudo measurement.
    pub zero_low_bands: usize,
}

impl Default for RirConfig {
    fn default() -> Self {
        Self { sweep: SweepConfig::default(), crop_margin: 2 * 512, zero_low_bands: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RirEstimate {
    pub waveform: Waveform,
    /// Index of the largest |sample|, taken as the direct path.
    pub direct_index: usize,
}

/// Precomputed sweep, its spectrogram and its inverse filter, reusable across
/// filters with the same STFT and sweep settings.
#[derive(Debug, Clone)]
pub struct PseudoMeasurement {
    stft: StftConfig,
    cfg: RirConfig,
    excitation: Spectrogram,
    inverse: InverseFilter,
    /// Zeros placed before the sweep ahead of analysis.
    lead: usize,
}

impl PseudoMeasurement {
    pub fn new(stft_cfg: &StftConfig, cfg: &RirConfig) -> Result<Self> {
        let sweep = log_sweep(&cfg.sweep)?;
        let inverse = inverse_filter(&sweep, &cfg.sweep)?;
        // One window of silence on each side keeps filtered content away from
        // the synthesis edges, where few frames overlap.
        let lead = stft_cfg.win_length();
        let mut padded = vec![0.0; lead];
        padded.extend_from_slice(sweep.samples());
        padded.resize(padded.len() + lead, 0.0);
        let excitation = stft::forward(&Waveform::new(padded, sweep.sample_rate())?, stft_cfg)?;
        Ok(Self { stft: stft_cfg.clone(), cfg: cfg.clone(), excitation, inverse, lead })
    }

    pub fn inverse(&self) -> &InverseFilter {
        &self.inverse
    }

    /// Sweep spectrogram filtered by `h` along frames: `Y(f,t) = Σ_l H_l(f)·E(f,t-l)`,
    /// extended by `L - 1` frames so the filter tail is kept.
    pub fn measurement_spectrum(&self, h: &CtfFilter) -> Result<Spectrogram> {
        let e = &self.excitation;
        if h.n_bins() != e.n_bins() {
            return Err(Error::ShapeMismatch {
                what: "CTF filter",
                got_bins: h.n_bins(),
                got_frames: h.len(),
                want_bins: e.n_bins(),
                want_frames: h.len(),
            });
        }
        let frames = e.n_frames() + h.len() - 1;
        let mut data = vec![Complex64::default(); e.n_bins() * frames];
        for (f, out) in data.chunks_mut(frames).enumerate() {
            let taps = h.row(f);
            if taps.iter().all(|c| c.norm_sqr() == 0.0) {
                continue;
            }
            for (t, ev) in e.row(f).iter().enumerate() {
                for (l, hl) in taps.iter().enumerate() {
                    out[t + l] += hl * ev;
                }
            }
        }
        Spectrogram::from_data(self.stft.clone(), frames, data, 1.0, e.sample_rate())
    }

    /// Deconvolved impulse response before cropping, with the sample index
    /// where a zero-delay direct path lands.
    pub fn uncropped(&self, h: &CtfFilter) -> Result<(Vec<f64>, usize)> {
        let h = h.zero_low_bands(self.cfg.zero_low_bands);
        let y = stft::inverse(&self.measurement_spectrum(&h)?)?;
        Ok((convolve(y.samples(), self.inverse.filter.samples()), self.inverse.peak_index + self.lead))
    }

    /// Cropped RIR estimate of `h`.
    pub fn rir(&self, h: &CtfFilter) -> Result<RirEstimate> {
        let (full, origin) = self.uncropped(h)?;
        let support = (h.len() - 1) * self.stft.hop() + self.stft.win_length();
        let start = origin.saturating_sub(self.cfg.crop_margin);
        let end = (origin + support + self.cfg.crop_margin).min(full.len());
        let samples = full[start..end].to_vec();
        let sample_rate = self.excitation.sample_rate();
        if samples.iter().all(|v| *v == 0.0) {
            log::warn!("all-zero CTF filter gives an all-zero RIR");
            return Ok(RirEstimate { waveform: Waveform::new(samples, sample_rate)?, direct_index: 0 });
        }
        let direct_index = argmax_abs(&samples);
        Ok(RirEstimate { waveform: Waveform::new(samples, sample_rate)?, direct_index })
    }
}

/// Converts a CTF filter to an RIR waveform.
pub fn ctf_to_rir(h: &CtfFilter, stft_cfg: &StftConfig, cfg: &RirConfig) -> Result<RirEstimate> {
    PseudoMeasurement::new(stft_cfg, cfg)?.rir(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_starts_at_zero_and_has_expected_length() {
        let cfg = SweepConfig::default();
        let e = log_sweep(&cfg).unwrap();
        assert_eq!(e.len(), 131072);
        assert_eq!(e.samples()[0], 0.0);
        assert_eq!(sweep_phase(0.0, &cfg), 0.0);
    }

    #[test]
    fn instantaneous_frequency_spans_range() {
        let cfg = SweepConfig::default();
        let n = cfg.len() as f64;
        let fs = cfg.sample_rate as f64;
        // Central difference of the phase, in cycles per sample.
        let inst = |m: f64| (sweep_phase(m + 0.5, &cfg) - sweep_phase(m - 0.5, &cfg)) / (2.0 * std::f64::consts::PI);
        assert!((inst(0.0) / (cfg.f1 / fs) - 1.0).abs() < 0.005);
        assert!((inst(n) / (cfg.f2 / fs) - 1.0).abs() < 0.005);
    }

    #[test]
    fn invalid_sweeps_rejected() {
        let bad = SweepConfig { f2: 9000.0, ..SweepConfig::default() };
        assert!(log_sweep(&bad).is_err());
        let bad = SweepConfig { duration_s: 0.10001, ..SweepConfig::default() };
        assert!(log_sweep(&bad).is_err());
    }

    fn short_cfg() -> SweepConfig {
        SweepConfig { duration_s: 1.024, ..SweepConfig::default() }
    }

    #[test]
    fn inverse_filter_gives_unit_peak() {
        let cfg = short_cfg();
        let e = log_sweep(&cfg).unwrap();
        let inv = inverse_filter(&e, &cfg).unwrap();
        assert_eq!(inv.filter.len(), e.len());
        let r = convolve(e.samples(), inv.filter.samples());
        assert!((r[inv.peak_index] - 1.0).abs() < 1e-12);
        assert_eq!(argmax_abs(&r), inv.peak_index);
    }

    #[test]
    fn zero_filter_gives_zero_rir() {
        let stft_cfg = StftConfig::default();
        let cfg = RirConfig { sweep: short_cfg(), ..RirConfig::default() };
        let zero = CtfFilter::from_taps(257, 4, vec![Complex64::default(); 257 * 4]).unwrap();
        let est = ctf_to_rir(&zero, &stft_cfg, &cfg).unwrap();
        assert_eq!(est.direct_index, 0);
        assert!(est.waveform.samples().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn wrong_band_count_rejected() {
        let cfg = RirConfig { sweep: short_cfg(), ..RirConfig::default() };
        let h = CtfFilter::identity(100, 3);
        assert!(ctf_to_rir(&h, &StftConfig::default(), &cfg).is_err());
    }

    fn unit_lag(lag: usize, len: usize) -> CtfFilter {
        let mut h = CtfFilter::from_taps(257, len, vec![Complex64::default(); 257 * len]).unwrap();
        for f in 0..257 {
            h.row_mut(f)[lag] = Complex64::new(1.0, 0.0);
        }
        h
    }

    fn measurement() -> PseudoMeasurement {
        let cfg = RirConfig { sweep: short_cfg(), zero_low_bands: 0, ..RirConfig::default() };
        PseudoMeasurement::new(&StftConfig::default(), &cfg).unwrap()
    }

    fn energy(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn identity_filter_gives_impulse() {
        let est = measurement().rir(&unit_lag(0, 4)).unwrap();
        let w = est.waveform.samples();
        let d = est.direct_index;
        let near = energy(&w[d - 2..=d + 2]);
        assert!(near / energy(w) >= 0.95, "fraction {}", near / energy(w));
        assert_eq!(d, RirConfig::default().crop_margin);
    }

    #[test]
    fn one_frame_delay_shifts_by_hop() {
        let pm = measurement();
        let a = pm.rir(&unit_lag(0, 4)).unwrap();
        let b = pm.rir(&unit_lag(1, 4)).unwrap();
        assert_eq!(b.direct_index, a.direct_index + 128);
    }

    #[test]
    fn pipeline_is_linear() {
        let pm = measurement();
        let mut h1 = unit_lag(0, 3);
        h1.row_mut(40)[2] = Complex64::new(0.3, -0.2);
        let h2 = unit_lag(1, 3);
        let sum = CtfFilter::from_taps(
            257,
            3,
            h1.taps().iter().zip(h2.taps()).map(|(a, b)| a * 2.0 + b).collect(),
        )
        .unwrap();
        let (y1, _) = pm.uncropped(&h1).unwrap();
        let (y2, _) = pm.uncropped(&h2).unwrap();
        let (ys, _) = pm.uncropped(&sum).unwrap();
        let scale = ys.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for ((a, b), s) in y1.iter().zip(&y2).zip(&ys) {
            assert!((2.0 * a + b - s).abs() < 1e-9 * scale);
        }
    }

    #[test]
    fn last_tap_stays_inside_crop() {
        // Random phases across bands make the filtered spectrum inconsistent;
        // the response must still land inside the crop window.
        let pm = measurement();
        let len = 30;
        let mut h = CtfFilter::from_taps(257, len, vec![Complex64::default(); 257 * len]).unwrap();
        for f in 0..257 {
            h.row_mut(f)[len - 1] = Complex64::from_polar(1.0, f as f64 * 2.399);
        }
        let (full, _) = pm.uncropped(&h).unwrap();
        let est = pm.rir(&h).unwrap();
        assert!(energy(est.waveform.samples()) / energy(&full) > 0.99);
    }
}

