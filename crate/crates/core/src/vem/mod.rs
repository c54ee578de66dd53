//! Variational EM over the convolutive transfer function model.
//!
//! Each frequency band `f` is modeled independently as
//! `X(f,t) = Σ_l H_l(f)·S(f,t-l) + W(f,t)` with a zero-mean complex Gaussian
//! prior of precision `alpha(f,t)` on `S` and stationary noise of precision
//! `delta(f)`. The E-step updates a factored Gaussian posterior over `S`; the
//! M-step re-estimates the filter and noise precision. Bands never interact,
//! so [`run`] maps them in parallel with rayon and the result does not depend
//! on the number of worker threads.
//!
//! Frames outside `[0, T)` are zero: zero mean, zero variance and no
//! observation.

pub mod band;
mod cholesky;

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::prior::PriorPrecision;
use crate::stft::Spectrogram;
use crate::{Error, Result};

pub use band::BandState;

#[derive(Debug, Clone, PartialEq)]
pub struct VemConfig {
    /// CTF filter length L in frames.
    pub ctf_len: usize,
    /// Smoothing factor of the posterior moving average, in `[0, 1)`.
    pub lambda: f64,
    pub max_iters: usize,
    /// Lowest bands left out of inference; their output is zero.
    pub skip_low_bands: usize,
    /// Upper bound on the noise precision.
    pub delta_cap: f64,
    /// Gram-matrix regularization, relative to its mean diagonal.
    pub jitter: f64,
    /// Floor on powers before inversion.
    pub power_floor: f64,
}

impl Default for VemConfig {
    fn default() -> Self {
        Self {
            ctf_len: 30,
            lambda: 0.7,
            max_iters: 100,
            skip_low_bands: 3,
            delta_cap: 1e12,
            jitter: 1e-8,
            power_floor: crate::prior::DEFAULT_POWER_FLOOR,
        }
    }
}

impl VemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.ctf_len < 1 {
            return bad("ctf_len must be ≥ 1".into());
        }
        if !(0.0..1.0).contains(&self.lambda) {
            return bad(format!("lambda {} must lie in [0, 1)", self.lambda));
        }
        if self.max_iters < 1 {
            return bad("max_iters must be ≥ 1".into());
        }
        if !(self.delta_cap.is_finite() && self.delta_cap > 0.0) {
            return bad(format!("delta_cap {} must be positive", self.delta_cap));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return bad(format!("jitter {} must be nonnegative", self.jitter));
        }
        if !(self.power_floor.is_finite() && self.power_floor > 0.0) {
            return bad(format!("power_floor {} must be positive", self.power_floor));
        }
        Ok(())
    }
}

/// Band-to-band CTF filter, `taps[f*L + l] = H_l(f)`; `l = 0` is the direct tap.
#[derive(Debug, Clone, PartialEq)]
pub struct CtfFilter {
    n_bins: usize,
    len: usize,
    taps: Vec<Complex64>,
}

impl CtfFilter {
    /// Direct tap 1, all others 0.
    pub fn identity(n_bins: usize, len: usize) -> Self {
        let mut taps = vec![Complex64::default(); n_bins * len];
        for f in 0..n_bins {
            taps[f * len] = Complex64::new(1.0, 0.0);
        }
        Self { n_bins, len, taps }
    }

    pub fn from_taps(n_bins: usize, len: usize, taps: Vec<Complex64>) -> Result<Self> {
        if len < 1 || taps.len() != n_bins * len {
            return Err(Error::InvalidConfig(format!(
                "CTF filter needs {n_bins}x{len} taps, got {}",
                taps.len()
            )));
        }
        if taps.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("CTF filter"));
        }
        Ok(Self { n_bins, len, taps })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    pub fn tap(&self, bin: usize, lag: usize) -> Complex64 {
        self.taps[bin * self.len + lag]
    }

    pub fn row(&self, bin: usize) -> &[Complex64] {
        &self.taps[bin * self.len..(bin + 1) * self.len]
    }

    pub fn row_mut(&mut self, bin: usize) -> &mut [Complex64] {
        &mut self.taps[bin * self.len..(bin + 1) * self.len]
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self { taps: self.taps.iter().map(|c| c * gain).collect(), ..self.clone() }
    }

    /// Copy with every tap of bands `[0, count)` set to zero.
    pub fn zero_low_bands(&self, count: usize) -> Self {
        let mut out = self.clone();
        let end = count.min(self.n_bins) * self.len;
        out.taps[..end].fill(Complex64::default());
        out
    }

    /// CSV with columns `band,tap,re,im`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "band,tap,re,im")?;
        for f in 0..self.n_bins {
            for (l, c) in self.row(f).iter().enumerate() {
                writeln!(out, "{f},{l},{:e},{:e}", c.re, c.im)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisePrecision {
    pub delta: Vec<f64>,
}

/// Factored Gaussian posterior over the anechoic spectrum, frequency-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub n_bins: usize,
    pub n_frames: usize,
    pub mu: Vec<Complex64>,
    /// Posterior precisions (inverse variances).
    pub gamma: Vec<f64>,
}

impl Posterior {
    pub fn mu_row(&self, bin: usize) -> &[Complex64] {
        &self.mu[bin * self.n_frames..(bin + 1) * self.n_frames]
    }

    pub fn gamma_row(&self, bin: usize) -> &[f64] {
        &self.gamma[bin * self.n_frames..(bin + 1) * self.n_frames]
    }
}

/// Best iteration of one band so far.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSnapshot {
    pub iteration: usize,
    pub loglik: f64,
    pub mu: Vec<Complex64>,
    pub h: Vec<Complex64>,
}

/// Full engine state: one [`BandState`] per bin plus likelihood bookkeeping.
#[derive(Debug, Clone)]
pub struct VemState {
    pub bands: Vec<BandState>,
    /// Per band; entry 0 is the initial state, entry `i` follows iteration `i`.
    pub loglik_trace: Vec<Vec<f64>>,
    pub best: Vec<Option<BandSnapshot>>,
    pub singular_solves: usize,
}

impl VemState {
    pub fn n_bins(&self) -> usize {
        self.bands.len()
    }

    pub fn posterior(&self) -> Posterior {
        let n_frames = self.bands.first().map_or(0, |b| b.mu.len());
        Posterior {
            n_bins: self.bands.len(),
            n_frames,
            mu: self.bands.iter().flat_map(|b| b.mu.iter().copied()).collect(),
            gamma: self.bands.iter().flat_map(|b| b.var.iter().map(|v| 1.0 / v)).collect(),
        }
    }

    pub fn filter(&self) -> CtfFilter {
        let len = self.bands.first().map_or(1, |b| b.h.len());
        CtfFilter {
            n_bins: self.bands.len(),
            len,
            taps: self.bands.iter().flat_map(|b| b.h.iter().copied()).collect(),
        }
    }

    pub fn noise(&self) -> NoisePrecision {
        NoisePrecision { delta: self.bands.iter().map(|b| b.delta).collect() }
    }

    /// One full iteration (E-step, M-step, likelihood) on every processed
    /// band, updating the trace and best snapshots in place.
    pub fn iterate(
        &mut self,
        x: &Spectrogram,
        alpha: &PriorPrecision,
        cfg: &VemConfig,
    ) -> Result<()> {
        check_inputs(x, alpha, cfg)?;
        let iteration = self.loglik_trace.first().map_or(1, Vec::len);
        let singular: usize = self
            .bands
            .par_iter_mut()
            .zip(self.loglik_trace.par_iter_mut())
            .zip(self.best.par_iter_mut())
            .enumerate()
            .filter(|(f, _)| processed(*f, cfg))
            .map(|(f, ((b, trace), best))| {
                let (xr, ar) = (x.row(f), alpha.row(f));
                band::e_step(xr, ar, b, cfg.lambda);
                let u = band::m_step(xr, &b.mu, &b.var, &b.h, cfg);
                b.h = u.h;
                b.delta = u.delta;
                let ll = band::expected_loglik(xr, ar, b);
                trace.push(ll);
                if best.as_ref().is_none_or(|s| ll > s.loglik) {
                    *best = Some(BandSnapshot {
                        iteration,
                        loglik: ll,
                        mu: b.mu.clone(),
                        h: b.h.clone(),
                    });
                }
                u.singular as usize
            })
            .sum();
        self.singular_solves += singular;
        Ok(())
    }
}

fn check_inputs(x: &Spectrogram, alpha: &PriorPrecision, cfg: &VemConfig) -> Result<()> {
    cfg.validate()?;
    alpha.check_matches(x)
}

/// Initial state for every band.
pub fn init(x: &Spectrogram, alpha: &PriorPrecision, cfg: &VemConfig) -> Result<VemState> {
    check_inputs(x, alpha, cfg)?;
    let bands: Vec<BandState> = (0..x.n_bins())
        .map(|f| BandState::init(x.row(f), cfg.ctf_len, cfg.power_floor))
        .collect();
    let loglik_trace = bands
        .iter()
        .enumerate()
        .map(|(f, b)| vec![band::expected_loglik(x.row(f), alpha.row(f), b)])
        .collect();
    Ok(VemState { best: vec![None; bands.len()], bands, loglik_trace, singular_solves: 0 })
}

fn processed(f: usize, cfg: &VemConfig) -> bool {
    f >= cfg.skip_low_bands
}

/// One E-step on every processed band; skipped bands are returned unchanged.
pub fn e_step(
    state: &VemState,
    x: &Spectrogram,
    alpha: &PriorPrecision,
    cfg: &VemConfig,
) -> Result<Posterior> {
    check_inputs(x, alpha, cfg)?;
    let bands: Vec<BandState> = state
        .bands
        .par_iter()
        .enumerate()
        .map(|(f, b)| {
            let mut b = b.clone();
            if processed(f, cfg) {
                band::e_step(x.row(f), alpha.row(f), &mut b, cfg.lambda);
            }
            b
        })
        .collect();
    Ok(VemState { bands, ..state.clone() }.posterior())
}

/// One M-step from the current posterior of every processed band.
pub fn m_step(
    state: &VemState,
    x: &Spectrogram,
    cfg: &VemConfig,
) -> Result<(NoisePrecision, CtfFilter)> {
    cfg.validate()?;
    let updates: Vec<(f64, Vec<Complex64>)> = state
        .bands
        .par_iter()
        .enumerate()
        .map(|(f, b)| {
            if processed(f, cfg) {
                let u = band::m_step(x.row(f), &b.mu, &b.var, &b.h, cfg);
                (u.delta, u.h)
            } else {
                (b.delta, b.h.clone())
            }
        })
        .collect();
    let len = state.bands.first().map_or(cfg.ctf_len, |b| b.h.len());
    let (delta, taps): (Vec<f64>, Vec<Vec<Complex64>>) = updates.into_iter().unzip();
    Ok((
        NoisePrecision { delta },
        CtfFilter { n_bins: taps.len(), len, taps: taps.into_iter().flatten().collect() },
    ))
}

/// Per-band expected complete-data log-likelihood (constants omitted).
pub fn expected_loglik(state: &VemState, x: &Spectrogram, alpha: &PriorPrecision) -> Vec<f64> {
    state
        .bands
        .par_iter()
        .enumerate()
        .map(|(f, b)| band::expected_loglik(x.row(f), alpha.row(f), b))
        .collect()
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct VemOutput {
    /// MAP anechoic spectrum (posterior mean at each band's best iteration),
    /// carrying the observation's config and scale.
    pub spectrum: Spectrogram,
    pub filter: CtfFilter,
    pub noise: NoisePrecision,
    pub trace: LoglikTrace,
    pub singular_solves: usize,
}

/// Per-band likelihood after each iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct LoglikTrace {
    /// `values[f][i]`: band `f` after iteration `i` (0 = initialization).
    /// Skipped bands have no entries.
    pub values: Vec<Vec<f64>>,
    /// Iteration whose estimates were kept for each band (0 when skipped).
    pub best_iteration: Vec<usize>,
}

impl LoglikTrace {
    /// Likelihood summed over processed bands, per iteration.
    pub fn total(&self) -> Vec<f64> {
        let iters = self.values.iter().map(Vec::len).max().unwrap_or(0);
        (0..iters)
            .map(|i| self.values.iter().filter_map(|v| v.get(i)).sum())
            .collect()
    }

    /// Running maximum over iterations `1..` for band `f`.
    pub fn best_so_far(&self, f: usize) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.values[f]
            .iter()
            .skip(1)
            .map(|&v| {
                best = best.max(v);
                best
            })
            .collect()
    }

    /// CSV with columns `iter,band,loglik`, followed by the per-iteration sum
    /// under band `sum`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iter,band,loglik")?;
        for (f, vals) in self.values.iter().enumerate() {
            for (i, v) in vals.iter().enumerate() {
                writeln!(out, "{i},{f},{v:e}")?;
            }
        }
        for (i, v) in self.total().iter().enumerate() {
            writeln!(out, "{i},sum,{v:e}")?;
        }
        Ok(())
    }
}

struct BandRun {
    state: BandState,
    trace: Vec<f64>,
    best: Option<BandSnapshot>,
    singular: usize,
}

fn run_band(x: &[Complex64], alpha: &[f64], cfg: &VemConfig) -> BandRun {
    let mut state = BandState::init(x, cfg.ctf_len, cfg.power_floor);
    let mut trace = Vec::with_capacity(cfg.max_iters + 1);
    trace.push(band::expected_loglik(x, alpha, &state));
    let mut best: Option<BandSnapshot> = None;
    let mut singular = 0;
    for it in 1..=cfg.max_iters {
        band::e_step(x, alpha, &mut state, cfg.lambda);
        let u = band::m_step(x, &state.mu, &state.var, &state.h, cfg);
        singular += u.singular as usize;
        state.h = u.h;
        state.delta = u.delta;
        let ll = band::expected_loglik(x, alpha, &state);
        trace.push(ll);
        if best.as_ref().is_none_or(|b| ll > b.loglik) {
            best = Some(BandSnapshot {
                iteration: it,
                loglik: ll,
                mu: state.mu.clone(),
                h: state.h.clone(),
            });
        }
    }
    BandRun { state, trace, best, singular }
}

/// Runs the full VEM procedure and returns, per band, the posterior mean and
/// filter from the iteration with the highest expected log-likelihood.
///
/// Skipped low bands are zero in the spectrum and keep the identity filter.
pub fn run(x: &Spectrogram, alpha: &PriorPrecision, cfg: &VemConfig) -> Result<VemOutput> {
    check_inputs(x, alpha, cfg)?;
    let n_bins = x.n_bins();
    let runs: Vec<Option<BandRun>> = (0..n_bins)
        .into_par_iter()
        .map(|f| processed(f, cfg).then(|| run_band(x.row(f), alpha.row(f), cfg)))
        .collect();

    let mut spectrum = Spectrogram::zeros_like(x);
    let mut filter = CtfFilter::identity(n_bins, cfg.ctf_len);
    let mut delta = vec![0.0; n_bins];
    let mut values = Vec::with_capacity(n_bins);
    let mut best_iteration = vec![0; n_bins];
    let mut singular_solves = 0;
    for (f, run) in runs.into_iter().enumerate() {
        match run {
            Some(r) => {
                let best = r.best.expect("max_iters ≥ 1 yields a snapshot");
                spectrum.row_mut(f).copy_from_slice(&best.mu);
                filter.row_mut(f).copy_from_slice(&best.h);
                best_iteration[f] = best.iteration;
                delta[f] = r.state.delta;
                values.push(r.trace);
                singular_solves += r.singular;
            }
            None => {
                delta[f] = BandState::init(x.row(f), 1, cfg.power_floor).delta;
                values.push(Vec::new());
            }
        }
    }
    if singular_solves > 0 {
        log::warn!("{singular_solves} singular CTF solves; previous filter kept");
    }
    Ok(VemOutput {
        spectrum,
        filter,
        noise: NoisePrecision { delta },
        trace: LoglikTrace { values, best_iteration },
        singular_solves,
    })
}
