//! Pipeline settings as `key = value` text.
//!
//! Blank lines and `#` comments are ignored; unknown keys are errors. The
//! dump produced by [`PipelineConfig::to_text`] parses back to an identical
//! config.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::acoustics::{DrrConfig, Rt60Config};
use crate::rir::RirConfig;
use crate::stft::StftConfig;
use crate::vem::VemConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub win_length: usize,
    pub hop: usize,
    pub vem: VemConfig,
    /// Power floor applied when building the prior precision.
    pub prior_floor: f64,
    pub rir: RirConfig,
    pub rt60: Rt60Config,
    pub drr: DrrConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            win_length: 512,
            hop: 128,
            vem: VemConfig::default(),
            prior_floor: crate::prior::DEFAULT_POWER_FLOOR,
            rir: RirConfig::default(),
            rt60: Rt60Config::default(),
            drr: DrrConfig::default(),
            seed: 0,
        }
    }
}

/// Keys in dump order.
pub const KEYS: &[&str] = &[
    "win_length",
    "hop",
    "ctf_len",
    "lambda",
    "iters",
    "skip_bands",
    "delta_cap",
    "jitter",
    "power_floor",
    "prior_floor",
    "crop_margin",
    "rir_zero_bands",
    "sweep_f1",
    "sweep_f2",
    "sweep_duration",
    "sweep_fade_in",
    "sweep_fade_out",
    "rt60_start_drop_db",
    "rt60_max_start_delay",
    "rt60_fit_drop_db",
    "rt60_stride",
    "drr_window",
    "drr_cap",
    "drr_floor",
    "seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for key {key}")))
}

impl PipelineConfig {
    pub fn stft(&self) -> Result<StftConfig> {
        StftConfig::new(self.win_length, self.hop)
    }

    pub fn validate(&self) -> Result<()> {
        self.stft()?;
        self.vem.validate()?;
        self.rir.sweep.validate()?;
        if self.rir.sweep.sample_rate != crate::wav::SAMPLE_RATE {
            return Err(Error::InvalidConfig("sweep sample rate must be 16000".into()));
        }
        if !(self.prior_floor.is_finite() && self.prior_floor > 0.0) {
            return Err(Error::InvalidConfig("prior_floor must be positive".into()));
        }
        Ok(())
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "win_length" => self.win_length = parse(key, v)?,
            "hop" => self.hop = parse(key, v)?,
            "ctf_len" => self.vem.ctf_len = parse(key, v)?,
            "lambda" => self.vem.lambda = parse(key, v)?,
            "iters" => self.vem.max_iters = parse(key, v)?,
            "skip_bands" => self.vem.skip_low_bands = parse(key, v)?,
            "delta_cap" => self.vem.delta_cap = parse(key, v)?,
            "jitter" => self.vem.jitter = parse(key, v)?,
            "power_floor" => self.vem.power_floor = parse(key, v)?,
            "prior_floor" => self.prior_floor = parse(key, v)?,
            "crop_margin" => self.rir.crop_margin = parse(key, v)?,
            "rir_zero_bands" => self.rir.zero_low_bands = parse(key, v)?,
            "sweep_f1" => self.rir.sweep.f1 = parse(key, v)?,
            "sweep_f2" => self.rir.sweep.f2 = parse(key, v)?,
            "sweep_duration" => self.rir.sweep.duration_s = parse(key, v)?,
            "sweep_fade_in" => self.rir.sweep.fade_in = parse(key, v)?,
            "sweep_fade_out" => self.rir.sweep.fade_out = parse(key, v)?,
            "rt60_start_drop_db" => self.rt60.start_drop_db = parse(key, v)?,
            "rt60_max_start_delay" => self.rt60.max_start_delay_s = parse(key, v)?,
            "rt60_fit_drop_db" => self.rt60.fit_drop_db = parse(key, v)?,
            "rt60_stride" => self.rt60.stride_s = parse(key, v)?,
            "drr_window" => self.drr.direct_window_s = parse(key, v)?,
            "drr_cap" => self.drr.cap_db = parse(key, v)?,
            "drr_floor" => self.drr.power_floor = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            _ => return Err(Error::InvalidConfig(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "win_length" => self.win_length.to_string(),
            "hop" => self.hop.to_string(),
            "ctf_len" => self.vem.ctf_len.to_string(),
            "lambda" => self.vem.lambda.to_string(),
            "iters" => self.vem.max_iters.to_string(),
            "skip_bands" => self.vem.skip_low_bands.to_string(),
            "delta_cap" => self.vem.delta_cap.to_string(),
            "jitter" => self.vem.jitter.to_string(),
            "power_floor" => self.vem.power_floor.to_string(),
            "prior_floor" => self.prior_floor.to_string(),
            "crop_margin" => self.rir.crop_margin.to_string(),
            "rir_zero_bands" => self.rir.zero_low_bands.to_string(),
            "sweep_f1" => self.rir.sweep.f1.to_string(),
            "sweep_f2" => self.rir.sweep.f2.to_string(),
            "sweep_duration" => self.rir.sweep.duration_s.to_string(),
            "sweep_fade_in" => self.rir.sweep.fade_in.to_string(),
            "sweep_fade_out" => self.rir.sweep.fade_out.to_string(),
            "rt60_start_drop_db" => self.rt60.start_drop_db.to_string(),
            "rt60_max_start_delay" => self.rt60.max_start_delay_s.to_string(),
            "rt60_fit_drop_db" => self.rt60.fit_drop_db.to_string(),
            "rt60_stride" => self.rt60.stride_s.to_string(),
            "drr_window" => self.drr.direct_window_s.to_string(),
            "drr_cap" => self.drr.cap_db.to_string(),
            "drr_floor" => self.drr.power_floor.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value, got {raw:?}", no + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }
}
