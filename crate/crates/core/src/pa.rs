//! Generalized memory polynomial PA models and synthetic PA banks.
//!
//! A model output is
//!
//! ```text
//! y(n) = sum_{p odd <= P} sum_{g=-G..G} sum_{m=0..M-1}
//!        c[p,g,m] * |x(n-g-m)|^(p-1) * x(n-m)
//! ```
//!
//! with out-of-range samples treated as zero. For `p = 1` the envelope
//! exponent is zero and the factor is one by convention, so linear terms are
//! pure delay taps regardless of `g`.

use crate::error::{Error, Result};
use crate::signal::{standard_normal, ComplexSignal};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

/// Structure parameters of a GMP: odd nonlinearity order `P`, envelope
/// lead/lag depth `G` and memory depth `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GmpStructure {
    max_order: usize,
    envelope_lag: usize,
    memory_depth: usize,
}

impl GmpStructure {
    pub fn new(max_order: usize, envelope_lag: usize, memory_depth: usize) -> Result<Self> {
        if max_order == 0 || max_order.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "max_order must be odd and positive, got {max_order}"
            )));
        }
        if memory_depth == 0 {
            return Err(Error::InvalidConfig("memory_depth must be positive".into()));
        }
        Ok(Self {
            max_order,
            envelope_lag,
            memory_depth,
        })
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn envelope_lag(&self) -> usize {
        self.envelope_lag
    }

    pub fn memory_depth(&self) -> usize {
        self.memory_depth
    }

    /// Number of coefficients: `ceil(P/2) * (2G+1) * M`.
    pub fn term_count(&self) -> usize {
        self.max_order.div_ceil(2) * (2 * self.envelope_lag + 1) * self.memory_depth
    }

    /// Flat index of term `(p, g, m)` in the canonical order: `p` outer
    /// (1, 3, ..., P), `g` middle (-G..=G), `m` inner (0..M-1).
    pub fn index_of(&self, p: usize, g: i64, m: usize) -> Option<usize> {
        if p.is_multiple_of(2) || p == 0 || p > self.max_order {
            return None;
        }
        if g.unsigned_abs() as usize > self.envelope_lag || m >= self.memory_depth {
            return None;
        }
        let p_idx = (p - 1) / 2;
        let g_idx = (g + self.envelope_lag as i64) as usize;
        Some((p_idx * (2 * self.envelope_lag + 1) + g_idx) * self.memory_depth + m)
    }

    /// Iterates `(p, g, m)` in the canonical order.
    pub fn terms(&self) -> impl Iterator<Item = (usize, i64, usize)> + '_ {
        let g_max = self.envelope_lag as i64;
        (1..=self.max_order).step_by(2).flat_map(move |p| {
            (-g_max..=g_max).flat_map(move |g| (0..self.memory_depth).map(move |m| (p, g, m)))
        })
    }

    /// Samples lost to edge effects on each interior basis row: the row for
    /// time `n` touches indices `n - g - m` down to `n - G - (M-1)` and up to
    /// `n + G`.
    pub fn interior_margin(&self) -> (usize, usize) {
        (self.envelope_lag + self.memory_depth - 1, self.envelope_lag)
    }
}

/// One amplifier's (or predistorter's) coefficient set.
#[derive(Debug, Clone, PartialEq)]
pub struct GmpModel {
    structure: GmpStructure,
    coeffs: Vec<Complex64>,
}

impl GmpModel {
    pub fn new(structure: GmpStructure, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != structure.term_count() {
            return Err(Error::SizeMismatch(format!(
                "expected {} coefficients, got {}",
                structure.term_count(),
                coeffs.len()
            )));
        }
        if !coeffs.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(Error::NonFinite("model coefficients".into()));
        }
        Ok(Self { structure, coeffs })
    }

    pub fn zeros(structure: GmpStructure) -> Self {
        Self {
            coeffs: vec![Complex64::default(); structure.term_count()],
            structure,
        }
    }

    /// The identity model: coefficient 1 at `(p=1, g=0, m=0)`, zero elsewhere.
    pub fn identity(structure: GmpStructure) -> Self {
        let mut model = Self::zeros(structure);
        let idx = structure.index_of(1, 0, 0).unwrap();
        model.coeffs[idx] = Complex64::new(1.0, 0.0);
        model
    }

    pub fn structure(&self) -> &GmpStructure {
        &self.structure
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeff(&self, p: usize, g: i64, m: usize) -> Complex64 {
        self.structure
            .index_of(p, g, m)
            .map(|i| self.coeffs[i])
            .unwrap_or_default()
    }

    pub fn set_coeff(&mut self, p: usize, g: i64, m: usize, value: Complex64) -> Result<()> {
        let idx = self.structure.index_of(p, g, m).ok_or_else(|| {
            Error::InvalidConfig(format!("term (p={p}, g={g}, m={m}) outside structure"))
        })?;
        self.coeffs[idx] = value;
        Ok(())
    }

    /// Complex gain seen by a slowly varying small signal: the sum of all
    /// linear (`p = 1`) taps.
    pub fn small_signal_gain(&self) -> Complex64 {
        let g_max = self.structure.envelope_lag as i64;
        let mut acc = Complex64::default();
        for g in -g_max..=g_max {
            for m in 0..self.structure.memory_depth {
                acc += self.coeff(1, g, m);
            }
        }
        acc
    }

    /// Evaluates the model on a signal. Output length equals input length;
    /// samples outside the observation window are treated as zero.
    pub fn evaluate(&self, input: &ComplexSignal) -> Result<ComplexSignal> {
        let s = &self.structure;
        let n = input.len();
        if n <= s.memory_depth + s.envelope_lag {
            return Err(Error::SignalTooShort(format!(
                "need more than M + G = {} samples, got {n}",
                s.memory_depth + s.envelope_lag
            )));
        }
        let x = input.samples();
        let mut out = vec![Complex64::default(); n];

        // Linear group: the envelope factor is 1 for every g, so the g taps
        // collapse into effective delay taps.
        for m in 0..s.memory_depth {
            let mut eff = Complex64::default();
            for g in -(s.envelope_lag as i64)..=(s.envelope_lag as i64) {
                eff += self.coeff(1, g, m);
            }
            if eff != Complex64::default() {
                for i in m..n {
                    out[i] += eff * x[i - m];
                }
            }
        }

        // Nonlinear branches: per (p, g) build w(j) = |x(j-g)|^(p-1) x(j),
        // then accumulate the M-tap convolution with the branch coefficients.
        let env2: Vec<f64> = x.iter().map(|v| v.norm_sqr()).collect();
        let mut envq = env2.clone();
        let mut w = vec![Complex64::default(); n];
        for p in (3..=s.max_order).step_by(2) {
            if p > 3 {
                for (e, base) in envq.iter_mut().zip(env2.iter()) {
                    *e *= base;
                }
            }
            for g in -(s.envelope_lag as i64)..=(s.envelope_lag as i64) {
                let branch_live =
                    (0..s.memory_depth).any(|m| self.coeff(p, g, m) != Complex64::default());
                if !branch_live {
                    continue;
                }
                for (j, wj) in w.iter_mut().enumerate() {
                    let je = j as i64 - g;
                    *wj = if je >= 0 && (je as usize) < n {
                        envq[je as usize] * x[j]
                    } else {
                        Complex64::default()
                    };
                }
                for m in 0..s.memory_depth {
                    let c = self.coeff(p, g, m);
                    if c == Complex64::default() {
                        continue;
                    }
                    for i in m..n {
                        out[i] += c * w[i - m];
                    }
                }
            }
        }
        Ok(ComplexSignal::from_parts(out, input.sample_rate_hz()))
    }

    /// Serializes to the text model format: header lines with the structure
    /// followed by one `p g m re im` row per coefficient in canonical order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("gmp-model v1\n");
        s.push_str(&format!("max_order {}\n", self.structure.max_order));
        s.push_str(&format!("envelope_lag {}\n", self.structure.envelope_lag));
        s.push_str(&format!("memory_depth {}\n", self.structure.memory_depth));
        s.push_str("# p g m re im\n");
        for (p, g, m) in self.structure.terms() {
            let c = self.coeff(p, g, m);
            s.push_str(&format!("{} {} {} {} {}\n", p, g, m, c.re, c.im));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty model file".into()))?;
        if header != "gmp-model v1" {
            return Err(Error::Parse(format!("unexpected header '{header}'")));
        }
        let mut max_order = None;
        let mut envelope_lag = None;
        let mut memory_depth = None;
        let mut rows = Vec::new();
        for line in lines {
            if line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["max_order", v] => max_order = Some(parse_usize(v)?),
                ["envelope_lag", v] => envelope_lag = Some(parse_usize(v)?),
                ["memory_depth", v] => memory_depth = Some(parse_usize(v)?),
                [p, g, m, re, im] => rows.push((
                    parse_usize(p)?,
                    parse_i64(g)?,
                    parse_usize(m)?,
                    parse_f64(re)?,
                    parse_f64(im)?,
                )),
                _ => return Err(Error::Parse(format!("bad model line '{line}'"))),
            }
        }
        let structure = GmpStructure::new(
            max_order.ok_or_else(|| Error::Parse("missing max_order".into()))?,
            envelope_lag.ok_or_else(|| Error::Parse("missing envelope_lag".into()))?,
            memory_depth.ok_or_else(|| Error::Parse("missing memory_depth".into()))?,
        )?;
        let mut model = GmpModel::zeros(structure);
        for (p, g, m, re, im) in rows {
            model.set_coeff(p, g, m, Complex64::new(re, im))?;
        }
        Ok(model)
    }

    pub fn write_file<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let mut text = String::new();
        std::io::BufReader::new(f).read_to_string(&mut text)?;
        Self::from_text(&text)
    }
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Parse(format!("bad integer '{s}'")))
}

fn parse_i64(s: &str) -> Result<i64> {
    s.parse()
        .map_err(|_| Error::Parse(format!("bad integer '{s}'")))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Parse(format!("bad float '{s}'")))
}

/// Ordered collection of per-element PA models sharing one structure.
#[derive(Debug, Clone)]
pub struct PaBank {
    models: Vec<GmpModel>,
}

impl PaBank {
    pub fn new(models: Vec<GmpModel>) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::InvalidConfig("bank must contain at least one PA".into()))?;
        if !models.iter().all(|m| m.structure() == first.structure()) {
            return Err(Error::InvalidConfig(
                "all bank elements must share one structure".into(),
            ));
        }
        Ok(Self { models })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[GmpModel] {
        &self.models
    }

    pub fn structure(&self) -> &GmpStructure {
        self.models[0].structure()
    }

    /// Per-element small-signal gains.
    pub fn small_signal_gains(&self) -> Vec<Complex64> {
        self.models.iter().map(|m| m.small_signal_gain()).collect()
    }
}

/// Random per-element spread applied when synthesizing a bank.
#[derive(Debug, Clone, Copy)]
pub struct DispersionSpec {
    /// Std of the per-element linear gain in dB.
    pub gain_std_db: f64,
    /// Std of the per-element linear phase in degrees.
    pub phase_std_deg: f64,
    /// Relative std applied to each nonlinear (p >= 3) coefficient.
    pub nonlinear_coeff_rel_std: f64,
    pub seed: u64,
}

impl Default for DispersionSpec {
    fn default() -> Self {
        Self {
            gain_std_db: 0.5,
            phase_std_deg: 5.0,
            nonlinear_coeff_rel_std: 0.1,
            seed: 0,
        }
    }
}

impl DispersionSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gain_std_db", self.gain_std_db),
            ("phase_std_deg", self.phase_std_deg),
            ("nonlinear_coeff_rel_std", self.nonlinear_coeff_rel_std),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Synthesizes `count` mutually different PAs around a nominal model.
///
/// Element `l` gets its linear taps scaled by a random complex gain
/// (log-normal magnitude, Gaussian phase) and every nonlinear coefficient
/// multiplied by an independent `1 + N(0, rel_std)` factor. Deterministic
/// for a fixed seed.
pub fn synthesize_bank(nominal: &GmpModel, disp: &DispersionSpec, count: usize) -> Result<PaBank> {
    if count == 0 {
        return Err(Error::InvalidConfig("bank size must be >= 1".into()));
    }
    disp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(disp.seed);
    let structure = *nominal.structure();
    let mut models = Vec::with_capacity(count);
    for _ in 0..count {
        let gain_db = standard_normal(&mut rng) * disp.gain_std_db;
        let phase = standard_normal(&mut rng) * disp.phase_std_deg.to_radians();
        let lin_gain = Complex64::from_polar(10f64.powf(gain_db / 20.0), phase);
        let mut coeffs = nominal.coeffs().to_vec();
        for (p, g, m) in structure.terms() {
            let idx = structure.index_of(p, g, m).unwrap();
            if p == 1 {
                coeffs[idx] *= lin_gain;
            } else {
                // draw for every slot so the stream layout does not depend
                // on which coefficients happen to be zero
                let rel = 1.0 + standard_normal(&mut rng) * disp.nonlinear_coeff_rel_std;
                coeffs[idx] *= rel;
            }
        }
        models.push(GmpModel::new(structure, coeffs)?);
    }
    PaBank::new(models)
}

/// Saturation input amplitude of the nominal PA at the given backoff:
/// a unit-RMS drive at `backoff_db = 0` sits at the calibrated compression
/// point that produces roughly 30 dBc combined ACLR on the NR carrier.
pub fn nominal_saturation_amplitude(backoff_db: f64) -> f64 {
    NOMINAL_SAT_SCALE * 10f64.powf(backoff_db / 20.0)
}

/// Calibration constant: saturation amplitude that puts a unit-RMS OFDM
/// drive at the intended compression when `backoff_db = 0`.
const NOMINAL_SAT_SCALE: f64 = 3.2;

/// Memoryless odd-order backbone: weighted least-squares fit (Rayleigh
/// envelope weighting, unit-RMS drive) of the soft limiter
/// `f(u) = u / (1 + u^4)^(1/4)` with quadratic-onset AM/PM
/// `0.7 u^2 / (1 + 0.3 u^2)` radians, fitted over u in [0, 9/3.2] so the
/// polynomial keeps behaving like a saturator well past the operating
/// envelope range.
const NOMINAL_BACKBONE: [(usize, f64, f64); 4] = [
    (1, 1.0488448288478942, 0.05297007887673737),
    (3, -0.3928485698327178, 0.3886921498190199),
    (5, 0.05109411130965421, -0.09504505178135826),
    (7, -0.002345733027003276, 0.006536725203549626),
];

/// Small memory and envelope cross taps relative to the backbone. The
/// `g != 0` entries make the nominal PA a true GMP: a memory polynomial
/// (G = 0) predistorter cannot invert them completely.
const NOMINAL_MEMORY_TAPS: [(usize, i64, usize, f64, f64); 9] = [
    (1, 0, 1, 0.028, -0.012),
    (1, 0, 2, -0.0065, 0.0042),
    (1, 0, 3, 0.0018, -0.0009),
    (3, 2, 0, -0.027, 0.019),
    (3, -2, 0, 0.021, 0.014),
    (3, 3, 1, -0.013, -0.009),
    (3, -3, 0, 0.009, -0.011),
    (5, 2, 0, -0.006, 0.004),
    (5, -2, 1, 0.0035, 0.0028),
];

/// Builds the fixed nominal PA for a given structure and backoff.
///
/// Coefficients are a frozen, documented set; terms outside the requested
/// structure are dropped. The backoff scales order-`p` coefficients by
/// `a^(1-p)` with `a = nominal_saturation_amplitude(backoff_db)`, which is
/// exactly the amplitude-scaled limiter.
pub fn default_nominal_pa(structure: GmpStructure, backoff_db: f64) -> Result<GmpModel> {
    if !backoff_db.is_finite() {
        return Err(Error::InvalidConfig("backoff must be finite".into()));
    }
    let a = nominal_saturation_amplitude(backoff_db);
    let mut model = GmpModel::zeros(structure);
    let mut place = |p: usize, g: i64, m: usize, re: f64, im: f64| {
        if let Some(idx) = structure.index_of(p, g, m) {
            let scale = a.powi(1 - p as i32);
            model.coeffs[idx] = Complex64::new(re, im) * scale;
        }
    };
    for (p, re, im) in NOMINAL_BACKBONE {
        place(p, 0, 0, re, im);
    }
    for (p, g, m, re, im) in NOMINAL_MEMORY_TAPS {
        place(p, g, m, re, im);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testsupport::naive_gmp_evaluate;
    use rand::{RngCore, SeedableRng};

    fn sig(samples: Vec<Complex64>) -> ComplexSignal {
        ComplexSignal::new(samples, 1.0).unwrap()
    }

    fn random_signal(n: usize, seed: u64) -> ComplexSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        sig((0..n).map(|_| Complex64::new(u(), u())).collect())
    }

    fn random_model(structure: GmpStructure, seed: u64, scale: f64) -> GmpModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        let coeffs = (0..structure.term_count())
            .map(|_| Complex64::new(u() * scale, u() * scale))
            .collect();
        GmpModel::new(structure, coeffs).unwrap()
    }

    #[test]
    fn term_count_matches_structure_arithmetic() {
        let s = GmpStructure::new(7, 3, 4).unwrap();
        assert_eq!(s.term_count(), 112);
        let mp = GmpStructure::new(7, 0, 4).unwrap();
        assert_eq!(mp.term_count(), 16);
        assert_eq!(GmpStructure::new(1, 0, 1).unwrap().term_count(), 1);
    }

    #[test]
    fn rejects_even_order_and_zero_memory() {
        assert!(GmpStructure::new(4, 1, 2).is_err());
        assert!(GmpStructure::new(0, 1, 2).is_err());
        assert!(GmpStructure::new(3, 1, 0).is_err());
    }

    #[test]
    fn canonical_index_round_trips() {
        let s = GmpStructure::new(7, 3, 4).unwrap();
        for (i, (p, g, m)) in s.terms().enumerate() {
            assert_eq!(s.index_of(p, g, m), Some(i));
        }
        assert_eq!(s.index_of(2, 0, 0), None);
        assert_eq!(s.index_of(7, 4, 0), None);
        assert_eq!(s.index_of(7, 0, 4), None);
    }

    #[test]
    fn identity_model_passes_signal_through() {
        let s = GmpStructure::new(7, 3, 4).unwrap();
        let model = GmpModel::identity(s);
        let x = random_signal(64, 1);
        let y = model.evaluate(&x).unwrap();
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn single_delay_tap_shifts_signal() {
        let s = GmpStructure::new(1, 0, 2).unwrap();
        let mut model = GmpModel::zeros(s);
        let c = Complex64::new(0.3, -0.7);
        model.set_coeff(1, 0, 1, c).unwrap();
        let x = random_signal(32, 2);
        let y = model.evaluate(&x).unwrap();
        assert!(y.samples()[0].norm() < 1e-15);
        for i in 1..32 {
            assert!((y.samples()[i] - c * x.samples()[i - 1]).norm() < 1e-15);
        }
    }

    #[test]
    fn memoryless_cubic_on_unit_input_compresses_to_expected_value() {
        let s = GmpStructure::new(3, 0, 1).unwrap();
        let mut model = GmpModel::zeros(s);
        model.set_coeff(1, 0, 0, Complex64::new(1.0, 0.0)).unwrap();
        model
            .set_coeff(3, 0, 0, Complex64::new(-0.05, 0.0))
            .unwrap();
        let x = sig(vec![Complex64::new(1.0, 0.0); 16]);
        let y = model.evaluate(&x).unwrap();
        for v in y.samples() {
            assert!((v - Complex64::new(0.95, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn matches_naive_triple_loop_oracle() {
        let s = GmpStructure::new(7, 3, 4).unwrap();
        let model = random_model(s, 3, 0.2);
        let x = random_signal(1000, 4);
        let fast = model.evaluate(&x).unwrap();
        let slow = naive_gmp_evaluate(&model, x.samples());
        let num: f64 = fast
            .samples()
            .iter()
            .zip(&slow)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        let den: f64 = slow.iter().map(|v| v.norm_sqr()).sum();
        assert!(
            (num / den).sqrt() < 1e-12,
            "relative error {}",
            (num / den).sqrt()
        );
    }

    #[test]
    fn evaluate_rejects_too_short_input() {
        let s = GmpStructure::new(3, 2, 3).unwrap();
        let model = GmpModel::identity(s);
        let x = random_signal(5, 1); // need > M + G = 5
        assert!(model.evaluate(&x).is_err());
        assert!(model.evaluate(&random_signal(6, 1)).is_ok());
    }

    #[test]
    fn zero_dispersion_replicates_nominal() {
        let s = GmpStructure::new(7, 3, 4).unwrap();
        let nominal = default_nominal_pa(s, 0.0).unwrap();
        let disp = DispersionSpec {
            gain_std_db: 0.0,
            phase_std_deg: 0.0,
            nonlinear_coeff_rel_std: 0.0,
            seed: 9,
        };
        let bank = synthesize_bank(&nominal, &disp, 8).unwrap();
        for m in bank.models() {
            assert_eq!(m, &nominal);
        }
    }

    #[test]
    fn bank_synthesis_is_deterministic() {
        let s = GmpStructure::new(7, 3, 4).unwrap();
        let nominal = default_nominal_pa(s, 0.0).unwrap();
        let disp = DispersionSpec::default();
        let a = synthesize_bank(&nominal, &disp, 16).unwrap();
        let b = synthesize_bank(&nominal, &disp, 16).unwrap();
        for (x, y) in a.models().iter().zip(b.models()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn gain_spread_matches_requested_std() {
        let s = GmpStructure::new(7, 3, 4).unwrap();
        let nominal = default_nominal_pa(s, 0.0).unwrap();
        let disp = DispersionSpec {
            gain_std_db: 0.5,
            phase_std_deg: 0.0,
            nonlinear_coeff_rel_std: 0.0,
            seed: 11,
        };
        let bank = synthesize_bank(&nominal, &disp, 64).unwrap();
        let nominal_gain = nominal.small_signal_gain().norm();
        let gains_db: Vec<f64> = bank
            .small_signal_gains()
            .iter()
            .map(|g| 20.0 * (g.norm() / nominal_gain).log10())
            .collect();
        let mean = gains_db.iter().sum::<f64>() / 64.0;
        let var = gains_db.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / 63.0;
        let std = var.sqrt();
        assert!((0.35..=0.65).contains(&std), "sample std {std}");
    }

    #[test]
    fn nominal_pa_small_signal_gain_is_flat() {
        let s = GmpStructure::new(7, 3, 4).unwrap();
        let model = default_nominal_pa(s, 0.0).unwrap();
        let mut gains_db = Vec::new();
        for amp in [0.001, 0.005, 0.01] {
            let x = sig(vec![Complex64::new(amp, 0.0); 32]);
            let y = model.evaluate(&x).unwrap();
            gains_db.push(20.0 * (y.samples()[16].norm() / amp).log10());
        }
        let spread = gains_db.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - gains_db.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(spread < 0.01, "gain spread {spread} dB");
    }

    #[test]
    fn nominal_pa_am_am_is_monotone_up_to_saturation() {
        let s = GmpStructure::new(7, 3, 4).unwrap();
        let model = default_nominal_pa(s, 0.0).unwrap();
        let a_sat = nominal_saturation_amplitude(0.0);
        let mut last = 0.0;
        for k in 1..=300 {
            let amp = a_sat * k as f64 / 300.0;
            let x = sig(vec![Complex64::new(amp, 0.0); 32]);
            let y = model.evaluate(&x).unwrap();
            let out = y.samples()[16].norm();
            assert!(
                out >= last - 1e-12,
                "AM/AM not monotone at amp {amp}: {out} < {last}"
            );
            last = out;
        }
    }

    #[test]
    fn nominal_pa_compresses_large_signals() {
        let s = GmpStructure::new(7, 3, 4).unwrap();
        let model = default_nominal_pa(s, 0.0).unwrap();
        let a_sat = nominal_saturation_amplitude(0.0);
        let x = sig(vec![Complex64::new(a_sat, 0.0); 32]);
        let y = model.evaluate(&x).unwrap();
        let gain_at_sat = y.samples()[16].norm() / a_sat;
        let small = model.small_signal_gain().norm();
        assert!(
            gain_at_sat < 0.9 * small,
            "expected >= 1 dB compression at saturation, gain ratio {}",
            gain_at_sat / small
        );
    }

    #[test]
    fn backoff_rescales_the_limiter_exactly() {
        // y_a(x) = a * y_1(x / a): evaluate at matching points
        let s = GmpStructure::new(7, 3, 4).unwrap();
        let m0 = default_nominal_pa(s, 0.0).unwrap();
        let m6 = default_nominal_pa(s, 6.0).unwrap();
        let ratio = 10f64.powf(6.0 / 20.0);
        let x = random_signal(64, 5);
        let y0 = m0.evaluate(&x).unwrap();
        let y6 = m6.evaluate(&x.scaled(Complex64::new(ratio, 0.0))).unwrap();
        for (a, b) in y0.samples().iter().zip(y6.samples()) {
            assert!((b - a * ratio).norm() < 1e-12 * ratio.max(1.0));
        }
    }

    #[test]
    fn model_text_round_trip_is_exact() {
        let s = GmpStructure::new(5, 2, 3).unwrap();
        let model = random_model(s, 17, 1.0);
        let text = model.to_text();
        let back = GmpModel::from_text(&text).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn model_text_rejects_malformed_input() {
        assert!(GmpModel::from_text("not a model").is_err());
        assert!(GmpModel::from_text("gmp-model v1\nmax_order 3\n").is_err());
        let bad_term = "gmp-model v1\nmax_order 3\nenvelope_lag 0\nmemory_depth 1\n9 0 0 1 0\n";
        assert!(GmpModel::from_text(bad_term).is_err());
    }

    #[test]
    fn bank_rejects_mixed_structures() {
        let a = GmpModel::identity(GmpStructure::new(3, 1, 2).unwrap());
        let b = GmpModel::identity(GmpStructure::new(3, 0, 2).unwrap());
        assert!(PaBank::new(vec![a.clone(), b]).is_err());
        assert!(PaBank::new(vec![]).is_err());
        assert!(PaBank::new(vec![a]).is_ok());
    }
}
