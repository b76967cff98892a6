//! Thin wrapper around rustfft with a shared plan cache.

use num_complex::Complex64;
use once_cell::sync::Lazy;
use rustfft::FftPlanner;
use std::sync::Mutex;

static PLANNER: Lazy<Mutex<FftPlanner<f64>>> = Lazy::new(|| Mutex::new(FftPlanner::new()));

/// Unnormalized in-place FFT (`inverse = false`) or IFFT (`inverse = true`).
/// Forward followed by inverse scales by `data.len()`.
pub(crate) fn fft_inplace(data: &mut [Complex64], inverse: bool) {
    let fft = {
        let mut planner = PLANNER.lock().unwrap();
        if inverse {
            planner.plan_fft_inverse(data.len())
        } else {
            planner.plan_fft_forward(data.len())
        }
    };
    fft.process(data);
}

pub(crate) fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Cross-correlation peak between `a` and a delayed `b`.
///
/// Finds the integer lag `d` maximizing `|sum_n a(n) * conj(b(n - d))|` and
/// returns `(d, peak / (||a|| * ||b||))`. The normalized peak is 1.0 when
/// `a` is an exact shifted copy of `b`.
pub(crate) fn correlation_lag(a: &[Complex64], b: &[Complex64]) -> (i64, f64) {
    assert!(!a.is_empty() && !b.is_empty());
    let size = next_pow2(a.len() + b.len());
    let mut fa = vec![Complex64::default(); size];
    fa[..a.len()].copy_from_slice(a);
    let mut fb = vec![Complex64::default(); size];
    fb[..b.len()].copy_from_slice(b);
    fft_inplace(&mut fa, false);
    fft_inplace(&mut fb, false);
    for (x, y) in fa.iter_mut().zip(fb.iter()) {
        *x *= y.conj();
    }
    fft_inplace(&mut fa, true);

    // index k holds the correlation at lag k; negative lags wrap to size + k
    let mut best_idx = 0usize;
    let mut best = 0.0f64;
    for (k, v) in fa.iter().enumerate() {
        let mag = v.norm_sqr();
        if mag > best {
            best = mag;
            best_idx = k;
        }
    }
    let lag = if best_idx < a.len() {
        best_idx as i64
    } else {
        best_idx as i64 - size as i64
    };
    let ea: f64 = a.iter().map(|v| v.norm_sqr()).sum();
    let eb: f64 = b.iter().map(|v| v.norm_sqr()).sum();
    let denom = (ea * eb).sqrt().max(f64::MIN_POSITIVE);
    (lag, best.sqrt() / (size as f64) / denom)
}
