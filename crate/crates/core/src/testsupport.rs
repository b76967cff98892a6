//! Slow reference implementations used as independent oracles by the test
//! suites and the CLI selftest. Nothing here is called from the production
//! paths; the point is that these stay naive and obviously correct.

use crate::pa::{GmpModel, GmpStructure};
use crate::signal::ComplexSignal;
use crate::waveform::NrCarrierConfig;
use num_complex::Complex64;

/// Envelope factor `|x(idx)|^(p-1)` with out-of-range samples read as zero.
/// For `p = 1` the exponent is zero and the factor is one by convention.
fn envelope_factor(x: &[Complex64], idx: i64, p: usize) -> f64 {
    if p == 1 {
        return 1.0;
    }
    let v = if idx >= 0 && (idx as usize) < x.len() {
        x[idx as usize].norm()
    } else {
        0.0
    };
    v.powi(p as i32 - 1)
}

fn sample_or_zero(x: &[Complex64], idx: i64) -> Complex64 {
    if idx >= 0 && (idx as usize) < x.len() {
        x[idx as usize]
    } else {
        Complex64::default()
    }
}

/// Direct per-sample triple-loop evaluation of a GMP model.
pub fn naive_gmp_evaluate(model: &GmpModel, x: &[Complex64]) -> Vec<Complex64> {
    let s = model.structure();
    let mut out = vec![Complex64::default(); x.len()];
    for n in 0..x.len() as i64 {
        let mut acc = Complex64::default();
        for (p, g, m) in s.terms() {
            let c = model.coeff(p, g, m);
            acc += c * envelope_factor(x, n - g - m as i64, p) * sample_or_zero(x, n - m as i64);
        }
        out[n as usize] = acc;
    }
    out
}

/// One GMP basis entry computed directly from the defining formula.
pub fn naive_basis_entry(z: &[Complex64], n: usize, p: usize, g: i64, m: usize) -> Complex64 {
    let n = n as i64;
    envelope_factor(z, n - g - m as i64, p) * sample_or_zero(z, n - m as i64)
}

/// Basis row/column layout check helper: canonical term order of a structure.
pub fn canonical_terms(s: &GmpStructure) -> Vec<(usize, i64, usize)> {
    s.terms().collect()
}

/// Adds white noise scaled so the noise power falling inside the occupied
/// bandwidth sits `snr_db` below the signal power. With this construction
/// the textbook relation `EVM = 100 * 10^(-snr/20)` holds for an OFDM
/// carrier measured over its active cells.
pub fn add_inband_awgn(
    sig: &ComplexSignal,
    snr_db: f64,
    occupied_bw_hz: f64,
    seed: u64,
) -> ComplexSignal {
    let full_band_snr = snr_db + 10.0 * (occupied_bw_hz / sig.sample_rate_hz()).log10();
    sig.with_awgn(full_band_snr, seed)
}

/// Scaled-down numerology used by fast tests: same structure as the default
/// carrier, two orders of magnitude fewer samples.
pub fn small_carrier_config() -> NrCarrierConfig {
    NrCarrierConfig {
        subcarrier_spacing_hz: 60e3,
        fft_size: 256,
        active_subcarriers: 192,
        cp_fraction: 18.0 / 256.0,
        qam_order: 64,
        num_symbols: 6,
        oversampling: 4,
    }
}
