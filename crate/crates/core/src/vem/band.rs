//! Variational EM updates for a single frequency band.
//!
//! Within a band the observation follows
//! `x[t] = Σ_l h[l]·s[t-l] + w[t]` over frames `t ∈ [0, T)`, with
//! `s[τ] = 0` for `τ < 0`. The posterior of each `s[t]` is a complex Gaussian
//! with mean `mu[t]` and variance `var[t]` (the inverse posterior precision).
//! Observations only exist for `t < T`, so in the E-step a coefficient `s[t]`
//! is informed by the taps `l` with `t + l < T`.

use num_complex::Complex64;

use super::cholesky::solve_hermitian;
use super::VemConfig;

/// Mutable per-band unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct BandState {
    pub mu: Vec<Complex64>,
    pub var: Vec<f64>,
    pub h: Vec<Complex64>,
    pub delta: f64,
}

impl BandState {
    /// Uninformative start: `mu = 0`, `var = |x|²`, direct tap only, and noise
    /// power at the band's minimum frame power (all powers floored).
    pub fn init(x: &[Complex64], ctf_len: usize, power_floor: f64) -> Self {
        let var: Vec<f64> = x.iter().map(|c| c.norm_sqr().max(power_floor)).collect();
        let min_power = x.iter().map(|c| c.norm_sqr()).fold(f64::INFINITY, f64::min);
        let mut h = vec![Complex64::default(); ctf_len];
        h[0] = Complex64::new(1.0, 0.0);
        Self {
            mu: vec![Complex64::default(); x.len()],
            var,
            h,
            delta: 1.0 / min_power.max(power_floor),
        }
    }
}

/// `Σ_l h[l]·mu[t-l]` for every frame.
pub fn predict(h: &[Complex64], mu: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::default(); mu.len()];
    for (t, slot) in out.iter_mut().enumerate() {
        let mut acc = Complex64::default();
        for (l, hl) in h.iter().enumerate().take(t + 1) {
            acc += hl * mu[t - l];
        }
        *slot = acc;
    }
    out
}

/// Raw closed-form posterior (precision, mean) for every frame given the
/// previous means, before smoothing.
pub fn raw_posterior(
    x: &[Complex64],
    alpha: &[f64],
    h: &[Complex64],
    delta: f64,
    mu_pre: &[Complex64],
) -> (Vec<f64>, Vec<Complex64>) {
    let n = x.len();
    let taps = h.len();
    let resid: Vec<Complex64> =
        predict(h, mu_pre).iter().zip(x).map(|(p, xv)| xv - p).collect();
    let h_pow: Vec<f64> = h.iter().map(|c| c.norm_sqr()).collect();
    let h_pow_total: f64 = h_pow.iter().sum();

    let mut gamma = Vec::with_capacity(n);
    let mut mean = Vec::with_capacity(n);
    for t in 0..n {
        let reach = taps.min(n - t);
        let h_pow_t = if reach == taps { h_pow_total } else { h_pow[..reach].iter().sum() };
        let mut acc = Complex64::default();
        for l in 0..reach {
            acc += h[l].conj() * resid[t + l];
        }
        // Adding back h_l·mu_pre[t] removes tap l from the interference.
        acc += mu_pre[t] * h_pow_t;
        let g = alpha[t] + delta * h_pow_t;
        gamma.push(g);
        mean.push(acc * (delta / g));
    }
    (gamma, mean)
}

/// E-step: raw update followed by exponential smoothing of the variance and
/// mean with factor `lambda` against the current values.
pub fn e_step(x: &[Complex64], alpha: &[f64], state: &mut BandState, lambda: f64) {
    let (gamma, mean) = raw_posterior(x, alpha, &state.h, state.delta, &state.mu);
    for t in 0..x.len() {
        state.var[t] = lambda * state.var[t] + (1.0 - lambda) / gamma[t];
        state.mu[t] = state.mu[t] * lambda + mean[t] * (1.0 - lambda);
    }
}

/// Sufficient statistics of the M-step.
#[derive(Debug, Clone)]
pub struct Moments {
    /// `r[l] = Σ_t x[t]·conj(mu[t-l])`.
    pub cross: Vec<Complex64>,
    /// `R[l][l'] = Σ_t ⟨s[t-l]·conj(s[t-l'])⟩`, row-major, Hermitian.
    pub gram: Vec<Complex64>,
    /// `Σ_t |x[t]|²`.
    pub x_energy: f64,
}

pub fn moments(x: &[Complex64], mu: &[Complex64], var: &[f64], taps: usize) -> Moments {
    let n = x.len();
    let mut cross = vec![Complex64::default(); taps];
    for (l, slot) in cross.iter_mut().enumerate() {
        let mut acc = Complex64::default();
        for u in 0..n.saturating_sub(l) {
            acc += x[u + l] * mu[u].conj();
        }
        *slot = acc;
    }

    // For lag d = l - l' ≥ 0, R[l][l'] is a prefix sum over u ≤ T-1-l of
    // mu[u]·conj(mu[u+d]); walking l downward only extends the prefix.
    let mut gram = vec![Complex64::default(); taps * taps];
    for d in 0..taps {
        let mut acc = Complex64::default();
        let mut var_acc = 0.0;
        let mut next_u = 0;
        for l in (d..taps).rev() {
            let upper = n as isize - 1 - l as isize;
            while (next_u as isize) <= upper {
                acc += mu[next_u] * mu[next_u + d].conj();
                if d == 0 {
                    var_acc += var[next_u];
                }
                next_u += 1;
            }
            let lp = l - d;
            let value = if d == 0 { acc + var_acc } else { acc };
            gram[l * taps + lp] = value;
            gram[lp * taps + l] = value.conj();
        }
    }
    Moments { cross, gram, x_energy: x.iter().map(|c| c.norm_sqr()).sum() }
}

/// Expected squared residual `Σ_t ⟨|x[t] - Σ_l h[l]·s[t-l]|²⟩`.
pub fn expected_residual(m: &Moments, h: &[Complex64]) -> f64 {
    let taps = h.len();
    let mut quad = 0.0;
    for l in 0..taps {
        let mut row = Complex64::default();
        for lp in 0..taps {
            row += m.gram[l * taps + lp] * h[lp].conj();
        }
        quad += (h[l] * row).re;
    }
    let lin: f64 = h.iter().zip(&m.cross).map(|(hl, rl)| (hl * rl.conj()).re).sum();
    m.x_energy - 2.0 * lin + quad
}

/// Outcome of an M-step for one band.
#[derive(Debug, Clone)]
pub struct MUpdate {
    pub h: Vec<Complex64>,
    pub delta: f64,
    /// The regularized Gram matrix could not be factored; `h` was kept.
    pub singular: bool,
}

/// M-step: least-squares CTF filter from the posterior moments, then the
/// noise precision for that filter, clamped to `(0, delta_cap]`.
pub fn m_step(
    x: &[Complex64],
    mu: &[Complex64],
    var: &[f64],
    h_prev: &[Complex64],
    cfg: &VemConfig,
) -> MUpdate {
    let taps = h_prev.len();
    let m = moments(x, mu, var, taps);
    // Σ_l h[l]·R[l][l'] = r[l'] is conj(R)·h = r.
    let trace: f64 = (0..taps).map(|l| m.gram[l * taps + l].re).sum();
    let jitter = cfg.jitter * trace / taps as f64;
    let mut system: Vec<Complex64> = m.gram.iter().map(|c| c.conj()).collect();
    for l in 0..taps {
        system[l * taps + l] += jitter;
    }
    let (h, singular) = match solve_hermitian(&system, &m.cross) {
        Some(h) => (h, false),
        None => (h_prev.to_vec(), true),
    };
    let delta = noise_precision(&m, &h, x.len(), cfg.delta_cap);
    MUpdate { h, delta, singular }
}

pub fn noise_precision(m: &Moments, h: &[Complex64], frames: usize, cap: f64) -> f64 {
    let resid = expected_residual(m, h);
    let frames = frames as f64;
    if resid > frames / cap {
        frames / resid
    } else {
        cap
    }
}

/// Expected complete-data log-likelihood of the band, constants omitted.
pub fn expected_loglik(x: &[Complex64], alpha: &[f64], state: &BandState) -> f64 {
    let BandState { mu, var, h, delta } = state;
    let pred = predict(h, mu);
    let h_pow: Vec<f64> = h.iter().map(|c| c.norm_sqr()).collect();
    let ln_delta = delta.ln();
    let mut total = 0.0;
    for t in 0..x.len() {
        let mut spread = 0.0;
        for (l, p) in h_pow.iter().enumerate().take(t + 1) {
            spread += p * var[t - l];
        }
        total += ln_delta - delta * ((x[t] - pred[t]).norm_sqr() + spread);
        total += alpha[t].ln() - alpha[t] * (mu[t].norm_sqr() + var[t]);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_c(rng: &mut ChaCha8Rng) -> Complex64 {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    /// Direct triple-loop Gram matrix and cross vector.
    fn naive_moments(x: &[Complex64], mu: &[Complex64], var: &[f64], taps: usize) -> Moments {
        let n = x.len();
        let get = |v: &[Complex64], i: isize| if i >= 0 { v[i as usize] } else { Complex64::default() };
        let mut gram = vec![Complex64::default(); taps * taps];
        let mut cross = vec![Complex64::default(); taps];
        for t in 0..n as isize {
            for l in 0..taps {
                cross[l] += x[t as usize] * get(mu, t - l as isize).conj();
                for lp in 0..taps {
                    gram[l * taps + lp] += get(mu, t - l as isize) * get(mu, t - lp as isize).conj();
                }
                if t - l as isize >= 0 {
                    gram[l * taps + l] += var[(t - l as isize) as usize];
                }
            }
        }
        Moments { cross, gram, x_energy: x.iter().map(|c| c.norm_sqr()).sum() }
    }

    #[test]
    fn prefix_moments_match_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(n, taps) in &[(50, 4), (7, 9), (1, 1), (30, 30)] {
            let x: Vec<_> = (0..n).map(|_| rand_c(&mut rng)).collect();
            let mu: Vec<_> = (0..n).map(|_| rand_c(&mut rng)).collect();
            let var: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let fast = moments(&x, &mu, &var, taps);
            let slow = naive_moments(&x, &mu, &var, taps);
            for (a, b) in fast.gram.iter().zip(&slow.gram) {
                assert!((a - b).norm() < 1e-10, "n={n} taps={taps}");
            }
            for (a, b) in fast.cross.iter().zip(&slow.cross) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn expected_residual_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (n, taps) = (40, 5);
        let x: Vec<_> = (0..n).map(|_| rand_c(&mut rng)).collect();
        let mu: Vec<_> = (0..n).map(|_| rand_c(&mut rng)).collect();
        let var: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let h: Vec<_> = (0..taps).map(|_| rand_c(&mut rng)).collect();
        let pred = predict(&h, &mu);
        let mut direct = 0.0;
        for t in 0..n {
            direct += (x[t] - pred[t]).norm_sqr();
            for l in 0..taps.min(t + 1) {
                direct += h[l].norm_sqr() * var[t - l];
            }
        }
        let m = moments(&x, &mu, &var, taps);
        assert!((expected_residual(&m, &h) - direct).abs() < 1e-9 * direct);
    }

    #[test]
    fn raw_posterior_matches_exclusion_form() {
        // Each observation term written literally as x[t+l] minus every other tap.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n, taps) = (25, 4);
        let x: Vec<_> = (0..n).map(|_| rand_c(&mut rng)).collect();
        let mu: Vec<_> = (0..n).map(|_| rand_c(&mut rng)).collect();
        let alpha: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..3.0)).collect();
        let h: Vec<_> = (0..taps).map(|_| rand_c(&mut rng)).collect();
        let delta = 2.5;
        let (gamma, mean) = raw_posterior(&x, &alpha, &h, delta, &mu);
        for t in 0..n {
            let mut acc = Complex64::default();
            let mut hp = 0.0;
            for l in 0..taps {
                let tau = t + l;
                if tau >= n {
                    continue;
                }
                hp += h[l].norm_sqr();
                let mut others = Complex64::default();
                for lp in 0..taps {
                    if lp != l && tau >= lp {
                        others += h[lp] * mu[tau - lp];
                    }
                }
                acc += h[l].conj() * (x[tau] - others);
            }
            let g = alpha[t] + delta * hp;
            assert!((gamma[t] - g).abs() < 1e-12 * g);
            assert!((mean[t] - acc * delta / g).norm() < 1e-12);
        }
    }
}
