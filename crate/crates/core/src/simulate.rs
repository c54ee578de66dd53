//! Synthetic data: exponentially decaying noise RIRs with prescribed RT60 and
//! DRR, a speech-like source, reverberant mixtures at a target SNR and
//! direct-path references. Everything is deterministic in its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use num_complex::Complex64;

use crate::dsp::{argmax_abs, convolve, mean_power};
use crate::stft::{self, Spectrogram, StftConfig};
use crate::vem::CtfFilter;
use crate::{Error, Result, Waveform};

/// Direct-path half window used by the DRR definition, in seconds.
pub const DIRECT_WINDOW_S: f64 = 0.0025;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRirSpec {
    pub rt60: f64,
    pub drr_db: f64,
    /// Position of the direct-path impulse, in samples.
    pub direct_delay: usize,
    pub length: usize,
    pub sample_rate: u32,
    pub seed: u64,
}

impl SynthRirSpec {
    fn direct_spread(&self) -> usize {
        (DIRECT_WINDOW_S * self.sample_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rt60.is_finite() && self.rt60 > 0.0) {
            return Err(Error::InvalidConfig(format!("rt60 {} must be positive", self.rt60)));
        }
        if !self.drr_db.is_finite() {
            return Err(Error::InvalidConfig("drr must be finite".into()));
        }
        if self.length <= self.direct_delay + self.direct_spread() + 1 {
            return Err(Error::InvalidConfig(format!(
                "RIR length {} leaves no room for a tail after delay {}",
                self.length, self.direct_delay
            )));
        }
        Ok(())
    }
}

/// Unit impulse at `direct_delay` plus a Gaussian tail with energy envelope
/// decaying 60 dB per `rt60` (exactly, per 1 ms block), starting just after the direct-path window and
/// scaled so the direct/remaining energy ratio equals `drr_db`.
pub fn synth_rir(spec: &SynthRirSpec) -> Result<Waveform> {
    spec.validate()?;
    let fs = spec.sample_rate as f64;
    let decay = 3.0 * std::f64::consts::LN_10 / (fs * spec.rt60);
    let tail_start = spec.direct_delay + spec.direct_spread() + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut h = vec![0.0; spec.length];
    let env = |n: usize| (-decay * (n - spec.direct_delay) as f64).exp();
    // Gaussian samples, each 1 ms block rescaled to the envelope's energy so
    // the decay curve is free of realization noise.
    let block = ((fs / 1000.0).round() as usize).max(1);
    for start in (tail_start..spec.length).step_by(block) {
        let end = (start + block).min(spec.length);
        let g: Vec<f64> = (start..end).map(|_| rng.sample(StandardNormal)).collect();
        let g_energy: f64 = g.iter().map(|v| v * v).sum();
        let e_energy: f64 = (start..end).map(|n| env(n).powi(2)).sum();
        let k = if g_energy > 0.0 { (e_energy / g_energy).sqrt() } else { 0.0 };
        for (slot, v) in h[start..end].iter_mut().zip(&g) {
            *slot = v * k;
        }
    }
    let tail_energy: f64 = h.iter().map(|v| v * v).sum();
    let gain = (10f64.powf(-spec.drr_db / 10.0) / tail_energy).sqrt();
    for v in &mut h[tail_start..] {
        *v *= gain;
    }
    h[spec.direct_delay] = 1.0;
    Waveform::new(h, spec.sample_rate)
}

pub fn white_noise(len: usize, sample_rate: u32, seed: u64) -> Result<Waveform> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Waveform::new((0..len.max(1)).map(|_| rng.sample(StandardNormal)).collect(), sample_rate)
}

/// Speech-like test source: syllables of harmonic (voiced) or noisy
/// (unvoiced) excitation with formant-shaped spectra, separated by pauses.
/// Peak amplitude is 0.5.
pub fn pseudo_speech(duration_s: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    let fs = sample_rate as f64;
    let len = (duration_s * fs).round() as usize;
    if len == 0 {
        return Err(Error::InvalidConfig("speech duration must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; len];
    let mut pos = (rng.random_range(0.02..0.08) * fs) as usize;
    while pos < len {
        let syl = (rng.random_range(0.12..0.28) * fs) as usize;
        let end = (pos + syl).min(len);
        let formants: Vec<(f64, f64)> = (0..3)
            .map(|i| {
                let centre = rng.random_range(300.0..900.0) * (1.0 + 1.6 * i as f64);
                (centre, rng.random_range(80.0..200.0))
            })
            .collect();
        let shape = |freq: f64| -> f64 {
            formants
                .iter()
                .map(|&(c, bw)| 1.0 / (1.0 + ((freq - c) / bw).powi(2)))
                .sum::<f64>()
                + 0.02
        };
        let level = rng.random_range(0.4..1.0);
        if rng.random_bool(0.75) {
            let f0_start: f64 = rng.random_range(100.0..220.0);
            let f0_end = f0_start * rng.random_range(0.8..1.25);
            let n_harm = ((fs / 2.0 - 200.0) / f0_start.max(f0_end)) as usize;
            let gains: Vec<f64> = (1..=n_harm).map(|k| shape(k as f64 * f0_start)).collect();
            let mut phase = 0.0;
            for (i, slot) in out[pos..end].iter_mut().enumerate() {
                let frac = i as f64 / syl as f64;
                let f0 = f0_start + (f0_end - f0_start) * frac;
                phase += 2.0 * std::f64::consts::PI * f0 / fs;
                let env = (std::f64::consts::PI * frac).sin().powi(2);
                let voiced: f64 =
                    gains.iter().enumerate().map(|(k, g)| g * ((k + 1) as f64 * phase).sin()).sum();
                let breath: f64 = rng.sample::<f64, _>(StandardNormal) * 0.02;
                *slot += level * env * (voiced + breath);
            }
        } else {
            // Fricative: differenced noise tilts energy towards high frequencies.
            let mut prev = 0.0;
            for (i, slot) in out[pos..end].iter_mut().enumerate() {
                let frac = i as f64 / syl as f64;
                let env = (std::f64::consts::PI * frac).sin().powi(2);
                let w: f64 = rng.sample(StandardNormal);
                *slot += level * 0.6 * env * (w - 0.7 * prev);
                prev = w;
            }
        }
        let pause = (rng.random_range(0.03..0.2) * fs) as usize;
        pos = end + pause;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    Waveform::new(out, sample_rate)
}

fn check_rates(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.sample_rate() != b.sample_rate() {
        return Err(Error::InvalidConfig(format!(
            "sample rates differ: {} vs {}",
            a.sample_rate(),
            b.sample_rate()
        )));
    }
    Ok(())
}

/// Full convolution `clean * rir`.
pub fn reverberate(clean: &Waveform, rir: &Waveform) -> Result<Waveform> {
    check_rates(clean, rir)?;
    Waveform::new(convolve(clean.samples(), rir.samples()), clean.sample_rate())
}

/// `clean * rir` plus `noise` (looped or truncated) scaled to `snr_db` over the
/// reverberant signal. `snr_db = +∞` adds no noise.
pub fn mix(clean: &Waveform, rir: &Waveform, noise: &Waveform, snr_db: f64) -> Result<Waveform> {
    check_rates(clean, noise)?;
    if clean.max_abs() == 0.0 {
        return Err(Error::SilentInput("clean signal is silent, SNR is undefined"));
    }
    let reverberant = reverberate(clean, rir)?;
    if snr_db == f64::INFINITY {
        return Ok(reverberant);
    }
    if snr_db.is_nan() {
        return Err(Error::InvalidConfig("SNR is NaN".into()));
    }
    let len = reverberant.len();
    let looped: Vec<f64> = noise.samples().iter().copied().cycle().take(len).collect();
    let noise_power = mean_power(&looped);
    if noise_power == 0.0 {
        return Err(Error::SilentInput("noise signal is silent"));
    }
    let signal_power = mean_power(reverberant.samples());
    let gain = (signal_power / noise_power / 10f64.powf(snr_db / 10.0)).sqrt();
    let out = reverberant.samples().iter().zip(&looped).map(|(s, w)| s + gain * w).collect();
    Waveform::new(out, clean.sample_rate())
}

/// `clean` convolved with only the direct part of `rir`: the peak sample, or
/// the peak ±`half_window` samples. Length matches [`mix`].
pub fn direct_path_reference(
    clean: &Waveform,
    rir: &Waveform,
    half_window: Option<usize>,
) -> Result<Waveform> {
    check_rates(clean, rir)?;
    let peak = argmax_abs(rir.samples());
    let spread = half_window.unwrap_or(0);
    let lo = peak.saturating_sub(spread);
    let hi = (peak + spread).min(rir.len() - 1);
    let mut direct = vec![0.0; rir.len()];
    direct[lo..=hi].copy_from_slice(&rir.samples()[lo..=hi]);
    Waveform::new(convolve(clean.samples(), &direct), clean.sample_rate())
}

/// One synthetic reverberant utterance with everything needed to score it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub clean: Waveform,
    pub rir: Waveform,
    pub observed: Waveform,
    pub reference: Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub rir: SynthRirSpec,
    pub speech_s: f64,
    /// `+∞` for a noiseless mixture.
    pub snr_db: f64,
    pub seed: u64,
}

pub fn scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    let fs = spec.rir.sample_rate;
    let clean = pseudo_speech(spec.speech_s, fs, spec.seed)?;
    let rir = synth_rir(&spec.rir)?;
    let noise = white_noise(clean.len() + rir.len(), fs, spec.seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let observed = mix(&clean, &rir, &noise, spec.snr_db)?;
    let reference = direct_path_reference(&clean, &rir, None)?;
    Ok(Scenario { clean, rir, observed, reference })
}

/// Observation generated directly in the STFT domain by a known CTF filter.
#[derive(Debug, Clone)]
pub struct CtfScenario {
    /// `X(f,t) = Σ_l H_l(f)·S(f,t-l) + W(f,t)`.
    pub observed: Spectrogram,
    /// Anechoic `S`, the STFT of a speech-like source.
    pub anechoic: Spectrogram,
    pub filter: CtfFilter,
}

/// Builds a [`CtfScenario`] with `n_frames` frames and an `ctf_len`-tap
/// filter: unit direct tap plus a complex Gaussian tail whose amplitude decays
/// by `e` every `ctf_len / 3` frames. White complex noise is added at `snr_db`
/// relative to the noise-free observation (`+∞` for none).
pub fn ctf_scenario(
    cfg: &StftConfig,
    n_frames: usize,
    ctf_len: usize,
    snr_db: f64,
    seed: u64,
) -> Result<CtfScenario> {
    if ctf_len == 0 || n_frames == 0 {
        return Err(Error::InvalidConfig("ctf_len and n_frames must be positive".into()));
    }
    let len = cfg.synthesis_len(n_frames);
    let speech = pseudo_speech(len as f64 / 16000.0, 16000, seed)?.resized(len);
    let anechoic = stft::forward(&speech, cfg)?;
    debug_assert_eq!(anechoic.n_frames(), n_frames);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
    let mut gauss = || Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * std::f64::consts::FRAC_1_SQRT_2;
    let n_bins = cfg.n_bins();
    let tau = (ctf_len as f64 / 3.0).max(0.5);
    let mut taps = vec![Complex64::default(); n_bins * ctf_len];
    for row in taps.chunks_mut(ctf_len) {
        row[0] = Complex64::new(1.0, 0.0);
        for (l, slot) in row.iter_mut().enumerate().skip(1) {
            *slot = gauss() * 0.5 * (-(l as f64) / tau).exp();
        }
    }
    let filter = CtfFilter::from_taps(n_bins, ctf_len, taps)?;

    let mut clean_obs = vec![Complex64::default(); n_bins * n_frames];
    for (f, out) in clean_obs.chunks_mut(n_frames).enumerate() {
        let s = anechoic.row(f);
        for (t, slot) in out.iter_mut().enumerate() {
            for (l, hl) in filter.row(f).iter().enumerate().take(t + 1) {
                *slot += hl * s[t - l];
            }
        }
    }
    if snr_db.is_finite() {
        let power = clean_obs.iter().map(|c| c.norm_sqr()).sum::<f64>() / clean_obs.len() as f64;
        let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        for v in &mut clean_obs {
            *v += gauss() * sigma;
        }
    }
    let observed = anechoic.with_data(clean_obs)?;
    Ok(CtfScenario { observed, anechoic, filter })
}
