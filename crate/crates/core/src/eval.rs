//! Scoring of RT60/DRR estimates and log-spectral distortion.

use crate::stft::Spectrogram;
use crate::{Error, Result};

/// LSD magnitude floor.
pub const LSD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub mae: f64,
    pub rmse: f64,
}

impl ErrorStats {
    pub fn from_errors(errors: &[f64]) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let n = errors.len() as f64;
        Ok(Self {
            mae: errors.iter().map(|e| e.abs()).sum::<f64>() / n,
            rmse: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        })
    }
}

/// RT60 (s) and DRR (dB) of one impulse response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RirParams {
    pub rt60: f64,
    pub drr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    /// Signed errors `estimate - truth` per item.
    pub rt60_errors: Vec<f64>,
    pub drr_errors: Vec<f64>,
    pub rt60: ErrorStats,
    pub drr: ErrorStats,
}

pub fn score_rir_batch(estimates: &[RirParams], truths: &[RirParams]) -> Result<ScoreReport> {
    if estimates.len() != truths.len() {
        return Err(Error::LengthMismatch(format!(
            "{} estimates for {} references",
            estimates.len(),
            truths.len()
        )));
    }
    let rt60_errors: Vec<f64> = estimates.iter().zip(truths).map(|(e, t)| e.rt60 - t.rt60).collect();
    let drr_errors: Vec<f64> = estimates.iter().zip(truths).map(|(e, t)| e.drr - t.drr).collect();
    Ok(ScoreReport {
        rt60: ErrorStats::from_errors(&rt60_errors)?,
        drr: ErrorStats::from_errors(&drr_errors)?,
        rt60_errors,
        drr_errors,
    })
}

/// Log-spectral distortion in dB:
/// mean over frames of `sqrt(mean over bins of (20·log10(|Ŝ|+ε) − 20·log10(|S|+ε))²)`.
///
/// With `power_match`, `enhanced` is first scaled to the reference's total
/// power.
pub fn lsd(enhanced: &Spectrogram, reference: &Spectrogram, power_match: bool) -> Result<f64> {
    if enhanced.n_bins() != reference.n_bins() || enhanced.n_frames() != reference.n_frames() {
        return Err(Error::ShapeMismatch {
            what: "enhanced spectrogram",
            got_bins: enhanced.n_bins(),
            got_frames: enhanced.n_frames(),
            want_bins: reference.n_bins(),
            want_frames: reference.n_frames(),
        });
    }
    let gain = if power_match {
        let pe: f64 = enhanced.data().iter().map(|c| c.norm_sqr()).sum();
        let pr: f64 = reference.data().iter().map(|c| c.norm_sqr()).sum();
        if pe > 0.0 {
            (pr / pe).sqrt()
        } else {
            1.0
        }
    } else {
        1.0
    };
    let (bins, frames) = (reference.n_bins(), reference.n_frames());
    let mut per_frame = vec![0.0; frames];
    for f in 0..bins {
        for (t, (e, r)) in enhanced.row(f).iter().zip(reference.row(f)).enumerate() {
            let d = 20.0 * (gain * e.norm() + LSD_EPS).log10() - 20.0 * (r.norm() + LSD_EPS).log10();
            per_frame[t] += d * d;
        }
    }
    Ok(per_frame.iter().map(|s| (s / bins as f64).sqrt()).sum::<f64>() / frames as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftConfig;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(rt60: f64, drr: f64) -> RirParams {
        RirParams { rt60, drr }
    }

    #[test]
    fn perfect_estimates_score_zero() {
        let xs = [p(0.3, 1.0), p(0.7, -2.0)];
        let r = score_rir_batch(&xs, &xs).unwrap();
        assert_eq!((r.rt60.mae, r.rt60.rmse, r.drr.mae, r.drr.rmse), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn symmetric_errors() {
        let r = score_rir_batch(&[p(0.6, 0.0), p(0.4, 0.0)], &[p(0.5, 0.0), p(0.5, 0.0)]).unwrap();
        assert!((r.rt60.mae - 0.1).abs() < 1e-12);
        assert!((r.rt60.rmse - 0.1).abs() < 1e-12);
    }

    #[test]
    fn uneven_errors() {
        let r = score_rir_batch(&[p(0.5, 0.0), p(0.7, 0.0)], &[p(0.5, 0.0), p(0.5, 0.0)]).unwrap();
        assert!((r.rt60.mae - 0.1).abs() < 1e-12);
        assert!((r.rt60.rmse - 0.02f64.sqrt()).abs() < 1e-12);
        assert!((r.rt60.rmse - 0.1414).abs() < 1e-4);
    }

    #[test]
    fn empty_and_mismatched_batches_rejected() {
        assert!(matches!(score_rir_batch(&[], &[]), Err(Error::EmptyBatch)));
        assert!(score_rir_batch(&[p(0.1, 0.0)], &[]).is_err());
    }

    fn random_spec(seed: u64, frames: usize) -> Spectrogram {
        let cfg = StftConfig::new(16, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..cfg.n_bins() * frames)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        Spectrogram::from_data(cfg, frames, data, 1.0, 16000).unwrap()
    }

    #[test]
    fn lsd_of_identical_is_zero() {
        let s = random_spec(1, 10);
        assert_eq!(lsd(&s, &s, true).unwrap(), 0.0);
    }

    #[test]
    fn lsd_of_tenfold_magnitude_is_20db() {
        let s = random_spec(2, 10);
        let big = s.with_data(s.data().iter().map(|c| c * 10.0).collect()).unwrap();
        // ε shifts the offset by a negligible amount for O(1) magnitudes.
        assert!((lsd(&big, &s, false).unwrap() - 20.0).abs() < 1e-6);
        assert!(lsd(&big, &s, true).unwrap() < 1e-9);
    }

    #[test]
    fn lsd_matches_double_loop() {
        let a = random_spec(3, 12);
        let b = random_spec(4, 12);
        let mut total = 0.0;
        for t in 0..12 {
            let mut acc = 0.0;
            for f in 0..a.n_bins() {
                let d = 20.0 * (a.at(f, t).norm() + 1e-8).log10() - 20.0 * (b.at(f, t).norm() + 1e-8).log10();
                acc += d * d;
            }
            total += (acc / a.n_bins() as f64).sqrt();
        }
        assert!((lsd(&a, &b, false).unwrap() - total / 12.0).abs() < 1e-9);
    }

    #[test]
    fn lsd_shape_mismatch() {
        assert!(lsd(&random_spec(1, 10), &random_spec(1, 11), false).is_err());
    }

    proptest! {
        #[test]
        fn lsd_symmetric_nonnegative_phase_invariant(s1 in any::<u64>(), s2 in any::<u64>(), phase in 0.0..std::f64::consts::TAU) {
            let a = random_spec(s1, 6);
            let b = random_spec(s2, 6);
            let ab = lsd(&a, &b, false).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - lsd(&b, &a, false).unwrap()).abs() < 1e-12);
            let rot = Complex64::from_polar(1.0, phase);
            let ar = a.with_data(a.data().iter().map(|c| c * rot).collect()).unwrap();
            let br = b.with_data(b.data().iter().map(|c| c * rot).collect()).unwrap();
            prop_assert!((lsd(&ar, &br, false).unwrap() - ab).abs() < 1e-9);
        }

        #[test]
        fn aggregation_order_independent(errs in prop::collection::vec(-1.0f64..1.0, 1..20)) {
            let est: Vec<_> = errs.iter().map(|e| p(0.5 + e, *e)).collect();
            let truth = vec![p(0.5, 0.0); errs.len()];
            let a = score_rir_batch(&est, &truth).unwrap();
            let mut er: Vec<_> = est.clone();
            er.reverse();
            let b = score_rir_batch(&er, &truth).unwrap();
            prop_assert!((a.rt60.mae - b.rt60.mae).abs() < 1e-12);
            prop_assert!((a.drr.rmse - b.drr.rmse).abs() < 1e-12);
            prop_assert!(a.rt60.rmse >= a.rt60.mae - 1e-15);
        }
    }
}
