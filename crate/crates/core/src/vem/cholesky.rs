use num_complex::Complex64;

/// Solves `A x = b` for Hermitian positive-definite `A` (row-major, n×n).
///
/// Returns `None` when a pivot is not strictly positive, i.e. `A` is not
/// numerically positive definite.
pub(crate) fn solve_hermitian(a: &[Complex64], b: &[Complex64]) -> Option<Vec<Complex64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    // Lower factor G with A = G Gᴴ.
    let mut g = vec![Complex64::default(); n * n];
    for j in 0..n {
        let mut d = a[j * n + j].re;
        for k in 0..j {
            d -= g[j * n + k].norm_sqr();
        }
        if !(d > 0.0 && d.is_finite()) {
            return None;
        }
        let djj = d.sqrt();
        g[j * n + j] = Complex64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= g[i * n + k] * g[j * n + k].conj();
            }
            g[i * n + j] = s / djj;
        }
    }
    // G y = b
    let mut y = vec![Complex64::default(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= g[i * n + k] * y[k];
        }
        y[i] = s / g[i * n + i].re;
    }
    // Gᴴ x = y
    let mut x = vec![Complex64::default(); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= g[k * n + i].conj() * x[k];
        }
        x[i] = s / g[i * n + i].re;
    }
    if x.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Some(x)
    } else {
        None
    }
}
