//! RT60 and DRR of an impulse response.
//!
//! RT60 comes from a straight-line fit to the Schroeder energy decay curve in
//! dB. Candidate fits start between the first sample 5 dB below the EDC level
//! at the direct-path peak and 50 ms after the peak, and each ends at the
//! first sample a further 5 dB down; the fit with the largest |Pearson r| wins.

use crate::dsp::argmax_abs;
use crate::{Error, Result, Waveform};

/// Lower bound on the EDC in dB relative to its first sample.
pub const EDC_FLOOR_DB: f64 = -120.0;

/// Schroeder energy decay curve.
#[derive(Debug, Clone, PartialEq)]
pub struct EdcCurve {
    /// `energy[n] = Σ_{m ≥ n} h[m]²`.
    pub energy: Vec<f64>,
    /// `10·log10(energy[n] / energy[0])`, floored at [`EDC_FLOOR_DB`].
    pub db: Vec<f64>,
}

pub fn edc(h: &[f64]) -> EdcCurve {
    let mut energy = vec![0.0; h.len()];
    let mut acc = 0.0;
    for (slot, v) in energy.iter_mut().zip(h).rev() {
        acc += v * v;
        *slot = acc;
    }
    let total = energy.first().copied().unwrap_or(0.0);
    let floor = 10f64.powf(EDC_FLOOR_DB / 10.0);
    let db = energy
        .iter()
        .map(|e| if total > 0.0 { 10.0 * (e / total).max(floor).log10() } else { EDC_FLOOR_DB })
        .collect();
    EdcCurve { energy, db }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rt60Config {
    /// EDC drop below the level at the peak where fit starts may begin.
    pub start_drop_db: f64,
    /// Latest fit start after the peak, in seconds.
    pub max_start_delay_s: f64,
    /// Decay covered by each fit.
    pub fit_drop_db: f64,
    /// Spacing of candidate start points, in seconds.
    pub stride_s: f64,
}

impl Default for Rt60Config {
    fn default() -> Self {
        Self { start_drop_db: 5.0, max_start_delay_s: 0.05, fit_drop_db: 5.0, stride_s: 0.001 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rt60Estimate {
    pub rt60: f64,
    /// Slope of the fitted line in dB/s.
    pub slope_db_per_s: f64,
    pub fit_start: usize,
    pub fit_end: usize,
    pub pearson_r: f64,
}

/// Least-squares line through `(n / fs, y[n])` for `n ∈ [start, end]`:
/// returns (slope per second, Pearson r).
pub fn line_fit(y: &[f64], start: usize, end: usize, fs: f64) -> (f64, f64) {
    let n = (end - start + 1) as f64;
    let xs = || (start..=end).map(|i| i as f64 / fs);
    let mx = xs().sum::<f64>() / n;
    let my = y[start..=end].iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, &v) in xs().zip(&y[start..=end]) {
        let (dx, dy) = (x - mx, v - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let r = if syy > 0.0 { sxy / (sxx * syy).sqrt() } else { 0.0 };
    (slope, r.clamp(-1.0, 1.0))
}

/// Admissible fit-start range `[lo, hi]` for a dB EDC with its peak at `peak`.
pub fn start_range(db: &[f64], peak: usize, fs: f64, cfg: &Rt60Config) -> Option<(usize, usize)> {
    let level = db[peak] - cfg.start_drop_db;
    let first_drop = (peak..db.len()).find(|&n| db[n] <= level)?;
    let latest = (peak + (cfg.max_start_delay_s * fs).round() as usize).min(db.len() - 1);
    Some((first_drop.min(latest), first_drop.max(latest)))
}

/// Fits every admissible interval of a dB EDC and keeps the straightest.
pub fn fit_rt60_from_edc(
    db: &[f64],
    peak: usize,
    fs: f64,
    cfg: &Rt60Config,
) -> Result<Rt60Estimate> {
    if db.is_empty() || peak >= db.len() {
        return Err(Error::InsufficientDecay);
    }
    let (lo, hi) = start_range(db, peak, fs, cfg).ok_or(Error::InsufficientDecay)?;
    let stride = ((cfg.stride_s * fs).round() as usize).max(1);
    let mut best: Option<Rt60Estimate> = None;
    for start in (lo..=hi).step_by(stride) {
        let target = db[start] - cfg.fit_drop_db;
        let Some(end) = (start + 1..db.len()).find(|&n| db[n] <= target) else {
            continue;
        };
        let (slope, r) = line_fit(db, start, end, fs);
        if !(slope < 0.0 && slope.is_finite()) {
            continue;
        }
        if best.as_ref().is_none_or(|b| r.abs() > b.pearson_r.abs()) {
            best = Some(Rt60Estimate {
                rt60: -60.0 / slope,
                slope_db_per_s: slope,
                fit_start: start,
                fit_end: end,
                pearson_r: r,
            });
        }
    }
    best.ok_or(Error::InsufficientDecay)
}

/// RT60 of `h`, taking the global |h| maximum as the direct path.
pub fn estimate_rt60(h: &Waveform, cfg: &Rt60Config) -> Result<Rt60Estimate> {
    if h.max_abs() == 0.0 {
        return Err(Error::NoDirectPath);
    }
    let peak = argmax_abs(h.samples());
    let curve = edc(h.samples());
    fit_rt60_from_edc(&curve.db, peak, h.sample_rate() as f64, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrrConfig {
    /// Half-width of the direct-path window, in seconds.
    pub direct_window_s: f64,
    /// Value reported when the reverberant energy is negligible.
    pub cap_db: f64,
    /// Reverberant energy below `power_floor` times the direct energy counts
    /// as zero.
    pub power_floor: f64,
}

impl Default for DrrConfig {
    fn default() -> Self {
        Self { direct_window_s: 0.0025, cap_db: 80.0, power_floor: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrrEstimate {
    pub drr_db: f64,
    pub direct_index: usize,
    pub capped: bool,
}

pub fn estimate_drr(h: &Waveform, cfg: &DrrConfig) -> Result<DrrEstimate> {
    let x = h.samples();
    if h.max_abs() == 0.0 {
        return Err(Error::NoDirectPath);
    }
    let peak = argmax_abs(x);
    let spread = (cfg.direct_window_s * h.sample_rate() as f64).round() as usize;
    let lo = peak.saturating_sub(spread);
    let hi = (peak + spread).min(x.len() - 1);
    let sq = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>();
    let direct = sq(&x[lo..=hi]);
    let rest = sq(&x[..lo]) + sq(&x[hi + 1..]);
    if rest <= cfg.power_floor * direct {
        return Ok(DrrEstimate { drr_db: cfg.cap_db, direct_index: peak, capped: true });
    }
    let drr = 10.0 * (direct / rest).log10();
    Ok(DrrEstimate { drr_db: drr.min(cfg.cap_db), direct_index: peak, capped: drr > cfg.cap_db })
}

/// RT60 (absent when the decay is too short to fit) and DRR together.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticParams {
    pub rt60: Option<Rt60Estimate>,
    pub drr: DrrEstimate,
}

pub fn analyze(h: &Waveform, rt60_cfg: &Rt60Config, drr_cfg: &DrrConfig) -> Result<AcousticParams> {
    let drr = estimate_drr(h, drr_cfg)?;
    let rt60 = match estimate_rt60(h, rt60_cfg) {
        Ok(r) => Some(r),
        Err(Error::InsufficientDecay) => None,
        Err(e) => return Err(e),
    };
    Ok(AcousticParams { rt60, drr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FS: u32 = 16000;

    fn wave(v: Vec<f64>) -> Waveform {
        Waveform::new(v, FS).unwrap()
    }

    #[test]
    fn impulse_edc_is_step() {
        let c = edc(&[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(c.energy, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(c.db[0], 0.0);
        assert!(c.db[1..].iter().all(|d| *d == EDC_FLOOR_DB));
    }

    #[test]
    fn edc_starts_at_total_energy() {
        let h = [0.3, -1.2, 0.5, 0.25];
        let c = edc(&h);
        assert!((c.energy[0] - h.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-15);
    }

    #[test]
    fn exponential_envelope_edc_closed_form() {
        let r: f64 = 0.999;
        let len = 20000;
        let h: Vec<f64> = (0..len).map(|n| r.powi(n as i32)).collect();
        let c = edc(&h);
        // Finite-length geometric sum r^{2n}(1 - r^{2(len-n)}) / (1 - r²).
        for n in (0..len).step_by(997) {
            let want = r.powi(2 * n as i32) * (1.0 - r.powi(2 * (len - n) as i32)) / (1.0 - r * r);
            assert!((c.energy[n] - want).abs() < 1e-9 * want);
        }
        let slope = c.db[1000] - c.db[999];
        assert!((slope - 20.0 * r.log10()).abs() < 1e-9);
    }

    #[test]
    fn straight_line_edc_gives_exact_rt60() {
        let fs = FS as f64;
        let db: Vec<f64> = (0..16000).map(|n| -120.0 * n as f64 / fs).collect();
        let est = fit_rt60_from_edc(&db, 0, fs, &Rt60Config::default()).unwrap();
        assert!((est.rt60 - 0.5).abs() < 1e-9, "{}", est.rt60);
        assert!((est.pearson_r + 1.0).abs() < 1e-12);
    }

    /// Every admissible start, fitted independently by normal equations.
    fn exhaustive_best(db: &[f64], peak: usize, fs: f64, cfg: &Rt60Config) -> (usize, usize, f64) {
        let level = db[peak] - cfg.start_drop_db;
        let a = (peak..db.len()).find(|&n| db[n] <= level).unwrap();
        let b = peak + (cfg.max_start_delay_s * fs).round() as usize;
        let (lo, hi) = (a.min(b), a.max(b));
        let stride = (cfg.stride_s * fs).round() as usize;
        let mut best = (0, 0, 0.0f64, 0.0f64);
        let mut s = lo;
        while s <= hi {
            if let Some(e) = (s + 1..db.len()).find(|&n| db[n] <= db[s] - cfg.fit_drop_db) {
                let pts: Vec<(f64, f64)> = (s..=e).map(|i| (i as f64 / fs, db[i])).collect();
                let n = pts.len() as f64;
                let sx: f64 = pts.iter().map(|p| p.0).sum();
                let sy: f64 = pts.iter().map(|p| p.1).sum();
                let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
                let syy: f64 = pts.iter().map(|p| p.1 * p.1).sum();
                let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
                let cov = n * sxy - sx * sy;
                let r = cov / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
                let k = cov / (n * sxx - sx * sx);
                if r.abs() > best.2.abs() {
                    best = (s, e, r, k);
                }
            }
            s += stride;
        }
        (best.0, best.1, -60.0 / best.3)
    }

    #[test]
    fn two_slope_decay_matches_exhaustive_search() {
        let fs = FS as f64;
        // Fast 200 dB/s for 30 ms, then a bent slow tail.
        let db: Vec<f64> = (0..12000)
            .map(|n| {
                let t = n as f64 / fs;
                if t < 0.03 {
                    -200.0 * t
                } else {
                    -6.0 - 40.0 * (t - 0.03) - 80.0 * (t - 0.03).powi(2)
                }
            })
            .collect();
        let cfg = Rt60Config::default();
        let est = fit_rt60_from_edc(&db, 0, fs, &cfg).unwrap();
        let (s, e, rt60) = exhaustive_best(&db, 0, fs, &cfg);
        assert_eq!((est.fit_start, est.fit_end), (s, e));
        assert!((est.rt60 - rt60).abs() < 1e-9 * rt60);
    }

    #[test]
    fn no_decay_is_an_error() {
        let flat = vec![0.0; 100];
        let err = fit_rt60_from_edc(&flat, 0, 16000.0, &Rt60Config::default()).unwrap_err();
        assert_eq!(err.to_string(), "insufficient decay range");
        assert!(matches!(estimate_rt60(&wave(vec![0.0; 50]), &Rt60Config::default()), Err(Error::NoDirectPath)));
    }

    #[test]
    fn single_impulse_drr_is_capped() {
        let mut h = vec![0.0; 1000];
        h[100] = 1.0;
        let d = estimate_drr(&wave(h), &DrrConfig::default()).unwrap();
        assert_eq!(d.drr_db, 80.0);
        assert!(d.capped);
        assert_eq!(d.direct_index, 100);
    }

    #[test]
    fn impulse_plus_reflection() {
        let mut h = vec![0.0; 2000];
        h[100] = 1.0;
        h[100 + 160] = 0.5;
        let d = estimate_drr(&wave(h), &DrrConfig::default()).unwrap();
        assert!((d.drr_db - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert!((d.drr_db - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn equal_energy_is_zero_db() {
        let mut h = vec![0.0; 2000];
        h[10] = 1.0;
        h[500] = 0.6;
        h[900] = 0.8;
        let d = estimate_drr(&wave(h), &DrrConfig::default()).unwrap();
        assert!(d.drr_db.abs() < 1e-12);
    }

    #[test]
    fn zero_response_has_no_direct_path() {
        assert!(matches!(
            estimate_drr(&wave(vec![0.0; 10]), &DrrConfig::default()),
            Err(Error::NoDirectPath)
        ));
    }

    fn decaying(seed: u64, len: usize) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut h: Vec<f64> =
            (0..len).map(|n| rng.random_range(-1.0..1.0) * (-(n as f64) / 1500.0).exp()).collect();
        h[20] = 3.0;
        h
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn edc_nonincreasing(h in prop::collection::vec(-1.0f64..1.0, 1..300)) {
            let c = edc(&h);
            for w in c.energy.windows(2) {
                prop_assert!(w[1] <= w[0]);
            }
            prop_assert!(*c.energy.last().unwrap() >= 0.0);
        }

        #[test]
        fn scale_invariance(seed in any::<u64>(), gain in 0.01f64..100.0) {
            let h = decaying(seed, 8000);
            let scaled: Vec<f64> = h.iter().map(|v| v * gain).collect();
            let (a, b) = (wave(h), wave(scaled));
            let (ra, rb) = (estimate_rt60(&a, &Rt60Config::default()), estimate_rt60(&b, &Rt60Config::default()));
            if let (Ok(ra), Ok(rb)) = (ra, rb) {
                prop_assert!((ra.rt60 - rb.rt60).abs() < 1e-6 * ra.rt60);
            }
            let da = estimate_drr(&a, &DrrConfig::default()).unwrap();
            let db = estimate_drr(&b, &DrrConfig::default()).unwrap();
            prop_assert!((da.drr_db - db.drr_db).abs() < 1e-9);
        }

        #[test]
        fn drr_delay_invariance(seed in any::<u64>(), delay in 0usize..500) {
            let h = decaying(seed, 4000);
            let mut shifted = vec![0.0; delay];
            shifted.extend_from_slice(&h);
            let da = estimate_drr(&wave(h), &DrrConfig::default()).unwrap();
            let db = estimate_drr(&wave(shifted), &DrrConfig::default()).unwrap();
            prop_assert!((da.drr_db - db.drr_db).abs() < 1e-9);
            prop_assert_eq!(da.direct_index + delay, db.direct_index);
        }
    }
}
