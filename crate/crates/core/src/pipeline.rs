//! End-to-end dereverberation and blind RIR identification.

use crate::acoustics::{self, AcousticParams};
use crate::config::PipelineConfig;
use crate::prior::{self, Magnitudes, PriorPrecision};
use crate::rir::{PseudoMeasurement, RirEstimate};
use crate::stft::{self, Spectrogram, Waveform};
use crate::vem::{self, VemOutput};
use crate::Result;

/// Where the anechoic prior comes from.
#[derive(Debug, Clone)]
pub enum PriorSource {
    /// Clean direct-path reference aligned with the observation.
    Oracle(Waveform),
    /// Magnitudes in the normalized observation's STFT domain.
    Magnitudes(Magnitudes),
}

/// Analyzed observation with a prior checked against it.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub observed: Spectrogram,
    pub alpha: PriorPrecision,
}

/// Validates the config, analyzes `x` and builds the prior. All shape and
/// config errors surface here, before any inference.
pub fn prepare(x: &Waveform, source: &PriorSource, cfg: &PipelineConfig) -> Result<Prepared> {
    cfg.validate()?;
    let observed = stft::forward_normalized(x, &cfg.stft()?)?;
    let alpha = match source {
        PriorSource::Oracle(clean) => prior::oracle_from_reference(clean, &observed, cfg.prior_floor)?,
        PriorSource::Magnitudes(mag) => {
            mag.check_matches(&observed)?;
            prior::from_magnitude(mag, cfg.prior_floor)?
        }
    };
    alpha.check_matches(&observed)?;
    Ok(Prepared { observed, alpha })
}

#[derive(Debug, Clone)]
pub struct Dereverbed {
    /// Enhanced waveform, same length and scale as the input.
    pub enhanced: Waveform,
    pub vem: VemOutput,
}

pub fn dereverb(p: &Prepared, cfg: &PipelineConfig, input_len: usize) -> Result<Dereverbed> {
    let out = vem::run(&p.observed, &p.alpha, &cfg.vem)?;
    let enhanced = stft::inverse(&out.spectrum)?.resized(input_len);
    Ok(Dereverbed { enhanced, vem: out })
}

#[derive(Debug, Clone)]
pub struct Identified {
    pub rir: RirEstimate,
    pub params: AcousticParams,
    pub vem: VemOutput,
}

/// Runs VEM and turns the estimated filter into an RIR with its RT60/DRR.
pub fn identify(p: &Prepared, cfg: &PipelineConfig) -> Result<Identified> {
    let out = vem::run(&p.observed, &p.alpha, &cfg.vem)?;
    let measurement = PseudoMeasurement::new(p.observed.config(), &cfg.rir)?;
    let rir = measurement.rir(&out.filter)?;
    let params = acoustics::analyze(&rir.waveform, &cfg.rt60, &cfg.drr)?;
    Ok(Identified { rir, params, vem: out })
}
