//! Indirect-learning DPD: GMP basis matrices, block least-squares
//! postdistorter estimation, and the ILA loop that copies the postdistorter
//! into the predistorter position.

use crate::error::{Error, Result};
use crate::fft::correlation_lag;
use crate::lsq::{solve_least_squares, CMatrix, LsSolution};
use crate::pa::{GmpModel, GmpStructure};
use crate::signal::ComplexSignal;
use num_complex::Complex64;
use rayon::prelude::*;

/// Anything that can play the transmit-and-observe role during learning:
/// the simulated array feedback path, or a test stand-in.
pub trait Chain {
    fn run(&self, x: &ComplexSignal) -> Result<ComplexSignal>;
}

impl<F> Chain for F
where
    F: Fn(&ComplexSignal) -> Result<ComplexSignal>,
{
    fn run(&self, x: &ComplexSignal) -> Result<ComplexSignal> {
        self(x)
    }
}

/// DPD learning parameters.
#[derive(Debug, Clone, Copy)]
pub struct DpdConfig {
    pub structure: GmpStructure,
    pub ila_iterations: usize,
    /// Samples per least-squares block (rows of the basis matrix).
    pub block_samples: usize,
    /// Ridge weight lambda; 0 = plain least squares.
    pub regularization: f64,
}

impl Default for DpdConfig {
    fn default() -> Self {
        Self {
            structure: GmpStructure::new(7, 3, 4).expect("default structure"),
            ila_iterations: 3,
            block_samples: 40_000,
            regularization: 0.0,
        }
    }
}

impl DpdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ila_iterations == 0 {
            return Err(Error::InvalidConfig(
                "need at least one ILA iteration".into(),
            ));
        }
        if self.block_samples <= self.structure.term_count() {
            return Err(Error::InvalidConfig(format!(
                "block_samples {} must exceed term count {}",
                self.block_samples,
                self.structure.term_count()
            )));
        }
        if !(self.regularization.is_finite() && self.regularization >= 0.0) {
            return Err(Error::InvalidConfig(
                "regularization must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// The memory-polynomial variant: same orders and memory, `G = 0`.
    pub fn mp_variant(&self) -> DpdConfig {
        let mut cfg = *self;
        cfg.structure =
            GmpStructure::new(self.structure.max_order(), 0, self.structure.memory_depth())
                .expect("MP variant of a valid structure");
        cfg
    }

    /// Training samples consumed by the full ILA run (fresh block per
    /// iteration plus the basis edge margin).
    pub fn training_samples_needed(&self) -> usize {
        let (lo, hi) = self.structure.interior_margin();
        self.ila_iterations * self.block_samples + lo + hi
    }
}

/// GMP basis matrix over the valid interior window of a signal.
pub struct GmpBasis {
    /// Rows = interior times, columns = terms in canonical (p, g, m) order.
    pub matrix: CMatrix,
    /// Time index of the first row.
    pub first_row_time: usize,
}

/// Builds the basis matrix with entries `|z(n-g-m)|^(p-1) * z(n-m)`.
///
/// Rows cover every time index whose references all fall inside the signal;
/// edge rows are dropped. Columns follow the canonical term order of the
/// structure, so column count equals `structure.term_count()`.
pub fn basis_matrix(z: &ComplexSignal, s: &GmpStructure) -> Result<GmpBasis> {
    let (lo, hi) = s.interior_margin();
    let len = z.len();
    if len <= lo + hi {
        return Err(Error::SignalTooShort(format!(
            "basis needs more than {} samples, got {len}",
            lo + hi
        )));
    }
    let rows = len - lo - hi;
    let cols = s.term_count();
    let x = z.samples();

    // |z|^(2q) tables shared by all columns
    let num_orders = s.max_order().div_ceil(2);
    let mut env_pows: Vec<Vec<f64>> = Vec::with_capacity(num_orders);
    let env2: Vec<f64> = x.iter().map(|v| v.norm_sqr()).collect();
    for q in 0..num_orders {
        if q == 0 {
            env_pows.push(vec![1.0; len]);
        } else if q == 1 {
            env_pows.push(env2.clone());
        } else {
            let prev = &env_pows[q - 1];
            env_pows.push(prev.iter().zip(env2.iter()).map(|(a, b)| a * b).collect());
        }
    }

    let terms: Vec<(usize, i64, usize)> = s.terms().collect();
    let mut matrix = CMatrix::zeros(rows, cols);
    matrix
        .data_mut()
        .par_chunks_mut(rows)
        .zip(terms.par_iter())
        .for_each(|(col, &(p, g, m))| {
            let q = (p - 1) / 2;
            let env = &env_pows[q];
            for (row, slot) in col.iter_mut().enumerate() {
                let n = (lo + row) as i64;
                let js = (n - m as i64) as usize;
                let je = (n - g - m as i64) as usize;
                *slot = env[je] * x[js];
            }
        });

    Ok(GmpBasis {
        matrix,
        first_row_time: lo,
    })
}

/// Solves `min ||Z b - target||^2 + lambda ||b||^2` by pivoted Householder
/// QR (see [`crate::lsq`]); a rank-deficient unregularized system is
/// reported and resolved with the minimum-norm solution.
pub fn ls_solve(basis: &CMatrix, target: &[Complex64], lambda: f64) -> Result<LsSolution> {
    solve_least_squares(basis, target, lambda)
}

/// Applies the learned predistorter; same contract as PA model evaluation.
pub fn apply_dpd(x: &ComplexSignal, predistorter: &GmpModel) -> Result<ComplexSignal> {
    predistorter.evaluate(x)
}

/// Per-iteration learning record.
#[derive(Debug, Clone)]
pub struct IlaIteration {
    /// Normalized mean-square error between the postdistorted feedback and
    /// the reference block, in dB.
    pub nmse_db: f64,
    /// Condition estimate of the (effective-rank) normal-equations matrix.
    pub condition_estimate: f64,
    /// Detected basis rank. With G > 0 the p = 1 envelope-lag columns are
    /// exact duplicates, so rank < term count by construction.
    pub rank: usize,
    pub used_min_norm: bool,
    /// Integer feedback delay removed before learning.
    pub delay_samples: i64,
    /// Complex gain removed from the feedback before learning.
    pub gain: Complex64,
    /// Postdistorter coefficient snapshot (canonical order).
    pub coeffs: Vec<Complex64>,
}

/// Outcome of an ILA run.
#[derive(Debug, Clone)]
pub struct LearnReport {
    pub iterations: Vec<IlaIteration>,
    /// Set when a residual grew by more than 3 dB over the previous
    /// iteration.
    pub divergence_warning: bool,
}

impl LearnReport {
    pub fn residual_non_increasing(&self) -> bool {
        self.iterations
            .windows(2)
            .all(|w| w[1].nmse_db <= w[0].nmse_db + 1e-9)
    }

    pub fn final_nmse_db(&self) -> f64 {
        self.iterations
            .last()
            .map(|i| i.nmse_db)
            .unwrap_or(f64::NAN)
    }
}

/// Indirect learning: per iteration, predistort a fresh block, capture the
/// combined feedback, align and gain-normalize it, then fit a postdistorter
/// mapping feedback back to the PA input by block least squares. The final
/// postdistorter is returned as the predistorter.
pub fn ila_learn<C: Chain>(
    x: &ComplexSignal,
    chain: &C,
    cfg: &DpdConfig,
) -> Result<(GmpModel, LearnReport)> {
    cfg.validate()?;
    let s = cfg.structure;
    let (lo, hi) = s.interior_margin();
    let pad = lo + hi;
    let need = cfg.training_samples_needed();
    if x.len() < need {
        return Err(Error::SignalTooShort(format!(
            "{} ILA iterations on {}-sample blocks need {need} samples, got {}",
            cfg.ila_iterations,
            cfg.block_samples,
            x.len()
        )));
    }

    let mut predistorter = GmpModel::identity(s);
    let mut iterations: Vec<IlaIteration> = Vec::with_capacity(cfg.ila_iterations);

    for k in 0..cfg.ila_iterations {
        let block = x.slice(k * cfg.block_samples, cfg.block_samples + pad)?;
        let u = predistorter.evaluate(&block)?;
        let z = chain.run(&u)?;
        if z.len() != u.len() {
            return Err(Error::SizeMismatch(format!(
                "chain returned {} samples for a {}-sample block",
                z.len(),
                u.len()
            )));
        }

        // integer delay alignment; the simulated chain has zero delay, but
        // the contract tolerates delayed chains
        let (delay, _peak) = correlation_lag(z.samples(), u.samples());
        let (u, z) = align_and_trim(&u, &z, delay)?;

        // normalize the feedback to unit effective gain against the block
        let mut num = Complex64::default();
        let mut den = 0.0f64;
        for (us, zs) in u.samples().iter().zip(z.samples()) {
            num += us.conj() * zs;
            den += us.norm_sqr();
        }
        if den <= 0.0 {
            return Err(Error::NonFinite("predistorted block has zero power".into()));
        }
        let gain = num / den;
        if gain.norm() < 1e-12 || !gain.re.is_finite() || !gain.im.is_finite() {
            return Err(Error::NonFinite(format!(
                "feedback gain estimate {gain} is unusable"
            )));
        }
        let z_norm = z.scaled(gain.conj() / gain.norm_sqr()); // z / gain

        let basis = basis_matrix(&z_norm, &s)?;
        let target = &u.samples()[basis.first_row_time..basis.first_row_time + basis.matrix.rows()];
        let sol = ls_solve(&basis.matrix, target, cfg.regularization)?;

        let fitted = basis.matrix.mul_vec(&sol.coeffs);
        let err: f64 = fitted
            .iter()
            .zip(target.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        let ref_p: f64 = target.iter().map(|v| v.norm_sqr()).sum();
        let nmse_db = 10.0 * (err / ref_p).max(1e-300).log10();

        let coeffs = fold_linear_group(&s, &sol.coeffs);
        predistorter = GmpModel::new(s, coeffs.clone())?;
        iterations.push(IlaIteration {
            nmse_db,
            condition_estimate: sol.condition_estimate,
            rank: sol.rank,
            used_min_norm: sol.used_min_norm,
            delay_samples: delay,
            gain,
            coeffs,
        });
    }

    let divergence_warning = iterations
        .windows(2)
        .any(|w| w[1].nmse_db > w[0].nmse_db + 3.0);
    Ok((
        predistorter,
        LearnReport {
            iterations,
            divergence_warning,
        },
    ))
}

/// The p = 1 basis columns repeat identically for every envelope lag, so the
/// least-squares solution spreads the linear response across them. Folding
/// the group into the g = 0 taps leaves the model's output unchanged and
/// makes the learned coefficients canonical.
fn fold_linear_group(s: &GmpStructure, coeffs: &[Complex64]) -> Vec<Complex64> {
    let mut out = coeffs.to_vec();
    if s.envelope_lag() == 0 {
        return out;
    }
    for m in 0..s.memory_depth() {
        let mut acc = Complex64::default();
        for g in -(s.envelope_lag() as i64)..=(s.envelope_lag() as i64) {
            let idx = s.index_of(1, g, m).unwrap();
            acc += out[idx];
            out[idx] = Complex64::default();
        }
        out[s.index_of(1, 0, m).unwrap()] = acc;
    }
    out
}

/// Aligns `z` onto `u` by `lag` samples (`z(n) ~ f(u(n - lag))`) and trims
/// both to the overlapping window so no zero-filled samples enter the fit.
fn align_and_trim(
    u: &ComplexSignal,
    z: &ComplexSignal,
    lag: i64,
) -> Result<(ComplexSignal, ComplexSignal)> {
    if lag == 0 {
        return Ok((u.clone(), z.clone()));
    }
    let n = u.len() as i64;
    if lag.unsigned_abs() as usize >= u.len() {
        return Err(Error::SignalTooShort(format!(
            "feedback delay {lag} consumes the whole {}-sample block",
            u.len()
        )));
    }
    let (start, end) = if lag > 0 { (0, n - lag) } else { (-lag, n) };
    let len = (end - start) as usize;
    let u_trim = u.slice(start as usize, len)?;
    let z_trim = z.slice((start + lag) as usize, len)?;
    Ok((u_trim, z_trim))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testsupport::naive_basis_entry;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(n: usize, seed: u64) -> ComplexSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        ComplexSignal::new((0..n).map(|_| Complex64::new(u(), u())).collect(), 1.0).unwrap()
    }

    #[test]
    fn trivial_structure_basis_is_the_signal_itself() {
        let s = GmpStructure::new(1, 0, 1).unwrap();
        let z = random_signal(64, 1);
        let b = basis_matrix(&z, &s).unwrap();
        assert_eq!(b.matrix.rows(), 64);
        assert_eq!(b.matrix.cols(), 1);
        assert_eq!(b.first_row_time, 0);
        for (i, v) in b.matrix.col(0).iter().enumerate() {
            assert_eq!(*v, z.samples()[i]);
        }
    }

    #[test]
    fn constant_signal_cubic_basis_columns_are_ones() {
        let s = GmpStructure::new(3, 0, 1).unwrap();
        let z = ComplexSignal::new(vec![Complex64::new(1.0, 0.0); 16], 1.0).unwrap();
        let b = basis_matrix(&z, &s).unwrap();
        assert_eq!(b.matrix.cols(), 2);
        for j in 0..2 {
            for v in b.matrix.col(j) {
                assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn basis_entries_match_the_defining_formula() {
        let s = GmpStructure::new(7, 3, 4).unwrap();
        let z = random_signal(300, 2);
        let b = basis_matrix(&z, &s).unwrap();
        let (lo, hi) = s.interior_margin();
        assert_eq!(b.matrix.rows(), 300 - lo - hi);
        assert_eq!(b.matrix.cols(), 112);
        for (j, (p, g, m)) in s.terms().enumerate() {
            for row in [0usize, 7, b.matrix.rows() - 1] {
                let n = b.first_row_time + row;
                let want = naive_basis_entry(z.samples(), n, p, g, m);
                let got = b.matrix.get(row, j);
                let scale = want.norm().max(1e-30);
                assert!(
                    (got - want).norm() / scale < 1e-13,
                    "entry ({row},{j}) = {got} want {want}"
                );
            }
        }
    }

    #[test]
    fn basis_rejects_short_signals() {
        let s = GmpStructure::new(7, 3, 4).unwrap();
        assert!(basis_matrix(&random_signal(7, 1), &s).is_err());
        assert!(basis_matrix(&random_signal(10, 1), &s).is_ok());
    }

    #[test]
    fn apply_dpd_identity_is_passthrough_and_zero_maps_to_zero() {
        let s = GmpStructure::new(7, 3, 4).unwrap();
        let beta = GmpModel::identity(s);
        let x = random_signal(128, 3);
        let y = apply_dpd(&x, &beta).unwrap();
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).norm() < 1e-15);
        }
        let zeros = ComplexSignal::new(vec![Complex64::default(); 64], 1.0).unwrap();
        let y0 = apply_dpd(&zeros, &beta).unwrap();
        assert!(y0.samples().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn ila_identity_chain_learns_identity_in_one_iteration() {
        let cfg = DpdConfig {
            block_samples: 2000,
            ila_iterations: 1,
            ..DpdConfig::default()
        };
        let x = random_signal(2100, 4);
        let chain = |sig: &ComplexSignal| Ok(sig.clone());
        let (beta, report) = ila_learn(&x, &chain, &cfg).unwrap();
        let identity = GmpModel::identity(cfg.structure);
        for ((p, g, m), (a, b)) in cfg
            .structure
            .terms()
            .zip(beta.coeffs().iter().zip(identity.coeffs()))
        {
            assert!(
                (a - b).norm() < 1e-8,
                "coefficient (p={p},g={g},m={m}) = {a}, want {b}"
            );
        }
        assert!(report.iterations[0].nmse_db < -140.0);
        assert_eq!(report.iterations[0].delay_samples, 0);
    }

    #[test]
    fn ila_normalizes_away_complex_chain_gain() {
        let cfg = DpdConfig {
            block_samples: 1500,
            ila_iterations: 1,
            ..DpdConfig::default()
        };
        let x = random_signal(1600, 5);
        let c = Complex64::from_polar(3.7, -1.2);
        let chain = move |sig: &ComplexSignal| Ok(sig.scaled(c));
        let (beta, report) = ila_learn(&x, &chain, &cfg).unwrap();
        let identity = GmpModel::identity(cfg.structure);
        for (a, b) in beta.coeffs().iter().zip(identity.coeffs()) {
            assert!((a - b).norm() < 1e-8);
        }
        assert!((report.iterations[0].gain - c).norm() < 1e-6 * c.norm());
    }

    #[test]
    fn ila_tolerates_integer_chain_delay() {
        let cfg = DpdConfig {
            block_samples: 1500,
            ila_iterations: 1,
            ..DpdConfig::default()
        };
        let x = random_signal(1600, 6);
        let delay = 9usize;
        let chain = move |sig: &ComplexSignal| {
            let mut shifted = vec![Complex64::default(); sig.len()];
            shifted[delay..].copy_from_slice(&sig.samples()[..sig.len() - delay]);
            ComplexSignal::new(shifted, sig.sample_rate_hz())
        };
        let (beta, report) = ila_learn(&x, &chain, &cfg).unwrap();
        assert_eq!(report.iterations[0].delay_samples, delay as i64);
        let identity = GmpModel::identity(cfg.structure);
        for (a, b) in beta.coeffs().iter().zip(identity.coeffs()) {
            assert!((a - b).norm() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn ila_inverts_a_mild_cubic_to_better_than_minus_45_db() {
        let pa_structure = GmpStructure::new(3, 0, 1).unwrap();
        let mut pa = GmpModel::zeros(pa_structure);
        pa.set_coeff(1, 0, 0, Complex64::new(1.0, 0.0)).unwrap();
        pa.set_coeff(3, 0, 0, Complex64::new(-0.05, 0.0)).unwrap();
        let chain = move |sig: &ComplexSignal| pa.evaluate(sig);
        let cfg = DpdConfig {
            block_samples: 4000,
            ila_iterations: 3,
            ..DpdConfig::default()
        };
        // unit-ish drive so the cubic actually bites
        let x = random_signal(12_100, 7).scaled(Complex64::new(1.4, 0.0));
        let (_, report) = ila_learn(&x, &chain, &cfg).unwrap();
        assert!(
            report.final_nmse_db() <= -45.0,
            "final NMSE {:.2} dB",
            report.final_nmse_db()
        );
        assert!(!report.divergence_warning);
    }

    #[test]
    fn ila_flags_divergence_when_residual_grows() {
        // chain turns from identity into a mostly-noise channel after the
        // first capture, so the iteration-2 residual jumps by far over 3 dB
        let calls = std::cell::Cell::new(0u64);
        let chain = move |sig: &ComplexSignal| {
            let call = calls.get();
            calls.set(call + 1);
            if call == 0 {
                Ok(sig.clone())
            } else {
                let rms = sig.mean_power().sqrt();
                let noise = random_signal(sig.len(), 999);
                let samples = sig
                    .samples()
                    .iter()
                    .zip(noise.samples())
                    .map(|(s, n)| 0.5 * s + 3.0 * rms * n)
                    .collect();
                ComplexSignal::new(samples, sig.sample_rate_hz())
            }
        };
        let cfg = DpdConfig {
            block_samples: 1500,
            ila_iterations: 2,
            ..DpdConfig::default()
        };
        let x = random_signal(3200, 9);
        let (_, report) = ila_learn(&x, &chain, &cfg).unwrap();
        assert!(report.divergence_warning, "{:?}", report.iterations);
        assert!(!report.residual_non_increasing());
        assert_eq!(report.iterations.len(), 2);
    }

    #[test]
    fn ila_requires_enough_training_samples() {
        let cfg = DpdConfig {
            block_samples: 1000,
            ila_iterations: 3,
            ..DpdConfig::default()
        };
        let chain = |sig: &ComplexSignal| Ok(sig.clone());
        assert!(ila_learn(&random_signal(2000, 8), &chain, &cfg).is_err());
        assert!(ila_learn(&random_signal(3010, 8), &chain, &cfg).is_ok());
    }

    #[test]
    fn mp_variant_shrinks_term_count() {
        let cfg = DpdConfig::default();
        assert_eq!(cfg.structure.term_count(), 112);
        assert_eq!(cfg.mp_variant().structure.term_count(), 16);
    }
}
