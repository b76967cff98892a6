//! Beamformed transmission through a PA bank and the phase-aligned combined
//! observation that a single DPD learns from.
//!
//! With unit-modulus weights applied at the PA inputs and conjugated in the
//! combiner, the combined signal equals the response of a single equivalent
//! GMP whose coefficients are the element-wise sum over the bank.

use crate::dpd::Chain;
use crate::error::{Error, Result};
use crate::pa::{GmpModel, PaBank};
use crate::signal::{derive_seed, ComplexSignal};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::cell::Cell;

/// Unit-modulus beamforming coefficients, one per array element.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamWeights {
    weights: Vec<Complex64>,
}

impl BeamWeights {
    /// Builds weights from explicit complex values, enforcing unit modulus
    /// to within 1e-12.
    pub fn from_weights(weights: Vec<Complex64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidConfig("need at least one weight".into()));
        }
        for (l, w) in weights.iter().enumerate() {
            if (w.norm() - 1.0).abs() >= 1e-12 {
                return Err(Error::InvalidConfig(format!(
                    "weight {l} has modulus {} (must be 1)",
                    w.norm()
                )));
            }
        }
        Ok(Self { weights })
    }

    /// Builds exactly unit-modulus weights from phases in radians.
    pub fn from_phases_rad(phases: &[f64]) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::InvalidConfig("need at least one phase".into()));
        }
        Ok(Self {
            weights: phases
                .iter()
                .map(|&p| Complex64::from_polar(1.0, p))
                .collect(),
        })
    }

    /// All-ones broadside weights.
    pub fn uniform(count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidConfig("need at least one element".into()));
        }
        Ok(Self {
            weights: vec![Complex64::new(1.0, 0.0); count],
        })
    }

    /// Seeded uniformly random phases. Stands in for weights matched to the
    /// dominant per-element channel phases.
    pub fn random_phases(count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidConfig("need at least one element".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::RngCore;
        let phases: Vec<f64> = (0..count)
            .map(|_| std::f64::consts::TAU * ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64))
            .collect();
        Self::from_phases_rad(&phases)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }
}

/// Noise model of the combined observation path.
#[derive(Debug, Clone, Copy)]
pub struct ObservationConfig {
    /// Full-band SNR of the combined observation relative to its own power;
    /// `f64::INFINITY` disables noise.
    pub noise_snr_db: f64,
    pub seed: u64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            noise_snr_db: f64::INFINITY,
            seed: 0,
        }
    }
}

/// Runs the beamformed input through every PA of the bank:
/// element `l` produces `model_l(w_l * x)`.
pub fn transmit(x: &ComplexSignal, w: &BeamWeights, bank: &PaBank) -> Result<Vec<ComplexSignal>> {
    if w.len() != bank.len() {
        return Err(Error::SizeMismatch(format!(
            "{} weights vs {} PAs",
            w.len(),
            bank.len()
        )));
    }
    bank.models()
        .par_iter()
        .zip(w.weights().par_iter())
        .map(|(model, &wl)| model.evaluate(&x.scaled(wl)))
        .collect()
}

/// Phase-aligned combining: `r(n) = sum_l conj(w_l) y_l(n)`, plus observation
/// noise when configured. The sum runs in element order so results are
/// bit-reproducible.
pub fn combine(
    outputs: &[ComplexSignal],
    w: &BeamWeights,
    obs: &ObservationConfig,
) -> Result<ComplexSignal> {
    if outputs.is_empty() {
        return Err(Error::SizeMismatch("no PA outputs".into()));
    }
    if outputs.len() != w.len() {
        return Err(Error::SizeMismatch(format!(
            "{} outputs vs {} weights",
            outputs.len(),
            w.len()
        )));
    }
    let len = outputs[0].len();
    let rate = outputs[0].sample_rate_hz();
    if !outputs
        .iter()
        .all(|o| o.len() == len && o.sample_rate_hz() == rate)
    {
        return Err(Error::SizeMismatch(
            "PA outputs differ in length or sample rate".into(),
        ));
    }
    let mut acc = vec![Complex64::default(); len];
    for (out, &wl) in outputs.iter().zip(w.weights()) {
        let wc = wl.conj();
        for (a, s) in acc.iter_mut().zip(out.samples()) {
            *a += wc * s;
        }
    }
    let combined = ComplexSignal::from_parts(acc, rate);
    Ok(combined.with_awgn(obs.noise_snr_db, obs.seed))
}

/// Element-wise coefficient sum over the bank: the single GMP equivalent to
/// the whole phase-aligned array.
pub fn equivalent_model(bank: &PaBank) -> GmpModel {
    let structure = *bank.structure();
    let mut acc = vec![Complex64::default(); structure.term_count()];
    for model in bank.models() {
        for (a, c) in acc.iter_mut().zip(model.coeffs()) {
            *a += c;
        }
    }
    GmpModel::new(structure, acc).expect("summed coefficients stay finite")
}

/// Transmit-and-combine feedback path used for DPD learning and metrology.
///
/// Each observation derives a fresh noise seed from the call index, so
/// repeated captures see independent noise while the whole sequence stays
/// deterministic. Memory use is bounded by evaluating the bank in chunks.
#[derive(Debug, Clone)]
pub struct ArrayChain {
    bank: PaBank,
    weights: BeamWeights,
    observation: ObservationConfig,
    calls: Cell<u64>,
}

impl ArrayChain {
    pub fn new(bank: PaBank, weights: BeamWeights, observation: ObservationConfig) -> Result<Self> {
        if bank.len() != weights.len() {
            return Err(Error::SizeMismatch(format!(
                "{} PAs vs {} weights",
                bank.len(),
                weights.len()
            )));
        }
        Ok(Self {
            bank,
            weights,
            observation,
            calls: Cell::new(0),
        })
    }

    pub fn bank(&self) -> &PaBank {
        &self.bank
    }

    pub fn weights(&self) -> &BeamWeights {
        &self.weights
    }

    /// One combined observation of the array driven by `x`.
    pub fn observe(&self, x: &ComplexSignal) -> Result<ComplexSignal> {
        let call = self.calls.get();
        self.calls.set(call + 1);
        let mut acc = vec![Complex64::default(); x.len()];
        const CHUNK: usize = 8;
        let models = self.bank.models();
        let weights = self.weights.weights();
        for start in (0..models.len()).step_by(CHUNK) {
            let end = (start + CHUNK).min(models.len());
            let outputs: Vec<ComplexSignal> = models[start..end]
                .par_iter()
                .zip(weights[start..end].par_iter())
                .map(|(model, &wl)| model.evaluate(&x.scaled(wl)))
                .collect::<Result<_>>()?;
            for (out, &wl) in outputs.iter().zip(&weights[start..end]) {
                let wc = wl.conj();
                for (a, s) in acc.iter_mut().zip(out.samples()) {
                    *a += wc * s;
                }
            }
        }
        let combined = ComplexSignal::new(acc, x.sample_rate_hz()).map_err(|_| {
            Error::NonFinite("combined observation diverged (non-finite samples)".into())
        })?;
        let obs = ObservationConfig {
            noise_snr_db: self.observation.noise_snr_db,
            seed: derive_seed(self.observation.seed, call),
        };
        Ok(combined.with_awgn(obs.noise_snr_db, obs.seed))
    }
}

impl Chain for ArrayChain {
    fn run(&self, x: &ComplexSignal) -> Result<ComplexSignal> {
        self.observe(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pa::{default_nominal_pa, synthesize_bank, DispersionSpec, GmpStructure};
    use rand::{RngCore, SeedableRng};

    fn random_signal(n: usize, seed: u64) -> ComplexSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        ComplexSignal::new((0..n).map(|_| Complex64::new(u(), u())).collect(), 1.0).unwrap()
    }

    fn random_bank(l: usize, seed: u64) -> PaBank {
        let s = GmpStructure::new(7, 3, 4).unwrap();
        let nominal = default_nominal_pa(s, 0.0).unwrap();
        let disp = DispersionSpec {
            gain_std_db: 1.0,
            phase_std_deg: 20.0,
            nonlinear_coeff_rel_std: 0.3,
            seed,
        };
        synthesize_bank(&nominal, &disp, l).unwrap()
    }

    fn rel_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|v| v.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn weights_must_be_unit_modulus() {
        assert!(BeamWeights::from_weights(vec![Complex64::new(0.9, 0.0)]).is_err());
        let w = BeamWeights::from_phases_rad(&[0.3, -1.2]).unwrap();
        for v in w.weights() {
            assert!((v.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_identity_element_passes_through() {
        let s = GmpStructure::new(1, 0, 1).unwrap();
        let bank = PaBank::new(vec![GmpModel::identity(s)]).unwrap();
        let w = BeamWeights::uniform(1).unwrap();
        let x = random_signal(64, 1);
        let y = transmit(&x, &w, &bank).unwrap();
        assert_eq!(y.len(), 1);
        assert!(rel_l2(y[0].samples(), x.samples()) < 1e-15);
        let r = combine(&y, &w, &ObservationConfig::default()).unwrap();
        assert!(rel_l2(r.samples(), x.samples()) < 1e-15);
    }

    #[test]
    fn phase_weight_passes_through_linear_pa() {
        let s = GmpStructure::new(1, 0, 1).unwrap();
        let bank = PaBank::new(vec![GmpModel::identity(s)]).unwrap();
        let w = BeamWeights::from_phases_rad(&[1.1]).unwrap();
        let x = random_signal(64, 2);
        let y = transmit(&x, &w, &bank).unwrap();
        let expected: Vec<Complex64> = x
            .samples()
            .iter()
            .map(|&v| v * Complex64::from_polar(1.0, 1.1))
            .collect();
        assert!(rel_l2(y[0].samples(), &expected) < 1e-14);
    }

    #[test]
    fn unit_modulus_weight_leaves_cubic_envelope_unchanged() {
        // cubic-only PA: output_l = e^{j phi} |x|^2 x
        let s = GmpStructure::new(3, 0, 1).unwrap();
        let mut model = GmpModel::zeros(s);
        model.set_coeff(3, 0, 0, Complex64::new(1.0, 0.0)).unwrap();
        let bank = PaBank::new(vec![model]).unwrap();
        let phi = 0.77;
        let w = BeamWeights::from_phases_rad(&[phi]).unwrap();
        let x = random_signal(64, 3);
        let y = transmit(&x, &w, &bank).unwrap();
        let rot = Complex64::from_polar(1.0, phi);
        let expected: Vec<Complex64> = x
            .samples()
            .iter()
            .map(|&v| rot * v.norm_sqr() * v)
            .collect();
        assert!(rel_l2(y[0].samples(), &expected) < 1e-13);
    }

    #[test]
    fn identical_elements_scale_gain_by_bank_size() {
        let l = 6;
        let s = GmpStructure::new(7, 3, 4).unwrap();
        let nominal = default_nominal_pa(s, 0.0).unwrap();
        let models = vec![nominal.clone(); l];
        let bank = PaBank::new(models).unwrap();
        let w = BeamWeights::random_phases(l, 5).unwrap();
        let x = random_signal(256, 4).scaled(Complex64::new(0.3, 0.0));
        let y = transmit(&x, &w, &bank).unwrap();
        let r = combine(&y, &w, &ObservationConfig::default()).unwrap();
        let single = nominal.evaluate(&x).unwrap();
        let expected: Vec<Complex64> = single.samples().iter().map(|&v| v * l as f64).collect();
        assert!(rel_l2(r.samples(), &expected) < 1e-10);
    }

    #[test]
    fn equivalent_model_of_single_element_is_that_model() {
        let bank = random_bank(1, 19);
        let eq = equivalent_model(&bank);
        assert_eq!(&eq, &bank.models()[0]);
    }

    #[test]
    fn opposite_models_cancel_in_equivalent_model() {
        let s = GmpStructure::new(3, 1, 2).unwrap();
        let mut a = GmpModel::zeros(s);
        a.set_coeff(3, 1, 1, Complex64::new(0.4, -0.2)).unwrap();
        let b = GmpModel::new(s, a.coeffs().iter().map(|c| -c).collect()).unwrap();
        let bank = PaBank::new(vec![a, b]).unwrap();
        let eq = equivalent_model(&bank);
        assert!(eq.coeffs().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn combined_observation_equals_equivalent_model_response() {
        for (l, seed) in [(1usize, 7u64), (8, 8), (64, 9)] {
            let bank = random_bank(l, seed);
            let w = BeamWeights::random_phases(l, seed + 100).unwrap();
            let x = random_signal(2048, seed + 200).scaled(Complex64::new(0.5, 0.0));
            let y = transmit(&x, &w, &bank).unwrap();
            let r = combine(&y, &w, &ObservationConfig::default()).unwrap();
            let eq = equivalent_model(&bank).evaluate(&x).unwrap();
            let err = rel_l2(r.samples(), eq.samples());
            assert!(err < 1e-10, "L={l}: relative error {err}");
        }
    }

    #[test]
    fn chain_observe_matches_transmit_combine() {
        let l = 12;
        let bank = random_bank(l, 31);
        let w = BeamWeights::random_phases(l, 32).unwrap();
        let obs = ObservationConfig::default();
        let x = random_signal(512, 33).scaled(Complex64::new(0.4, 0.0));
        let chain = ArrayChain::new(bank.clone(), w.clone(), obs).unwrap();
        let fused = chain.observe(&x).unwrap();
        let two_step = combine(&transmit(&x, &w, &bank).unwrap(), &w, &obs).unwrap();
        assert_eq!(fused, two_step);
    }

    #[test]
    fn observation_noise_hits_requested_snr() {
        let l = 4;
        let bank = random_bank(l, 41);
        let w = BeamWeights::random_phases(l, 42).unwrap();
        let x = random_signal(40_000, 43).scaled(Complex64::new(0.4, 0.0));
        let y = transmit(&x, &w, &bank).unwrap();
        let clean = combine(&y, &w, &ObservationConfig::default()).unwrap();
        let snr_db = 30.0;
        let noisy = combine(
            &y,
            &w,
            &ObservationConfig {
                noise_snr_db: snr_db,
                seed: 44,
            },
        )
        .unwrap();
        let noise_power: f64 = noisy
            .samples()
            .iter()
            .zip(clean.samples())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            / clean.len() as f64;
        let measured = 10.0 * (clean.mean_power() / noise_power).log10();
        assert!((measured - snr_db).abs() < 0.2, "measured {measured}");
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let bank = random_bank(4, 1);
        let w = BeamWeights::uniform(3).unwrap();
        let x = random_signal(64, 2);
        assert!(transmit(&x, &w, &bank).is_err());
        assert!(ArrayChain::new(bank, w, ObservationConfig::default()).is_err());
    }
}
