//! Complex baseband signal container and the CSIG binary file format.
//!
//! `ComplexSignal` is the currency every module trades in: a uniformly
//! sampled complex sequence plus its sample rate. Signals are immutable
//! after construction; operations return new values.

use crate::error::{Error, Result};
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

const CSIG_MAGIC: &[u8; 4] = b"CSIG";
const CSIG_VERSION: u32 = 1;

/// Uniformly sampled complex baseband sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    samples: Vec<Complex64>,
    sample_rate_hz: f64,
}

impl ComplexSignal {
    /// Builds a signal, validating that it is nonempty, finite and has a
    /// positive sample rate.
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidConfig("signal must contain samples".into()));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if !samples.iter().all(|s| s.re.is_finite() && s.im.is_finite()) {
            return Err(Error::NonFinite(
                "signal contains non-finite samples".into(),
            ));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Internal constructor for samples already known to be finite.
    pub(crate) fn from_parts(samples: Vec<Complex64>, sample_rate_hz: f64) -> Self {
        debug_assert!(!samples.is_empty());
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean sample power `E|x|^2`.
    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// Returns a copy scaled by a complex factor.
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self::from_parts(
            self.samples.iter().map(|s| s * factor).collect(),
            self.sample_rate_hz,
        )
    }

    /// Returns a copy scaled by `10^(db/20)`.
    pub fn scaled_db(&self, db: f64) -> Self {
        self.scaled(Complex64::new(10f64.powf(db / 20.0), 0.0))
    }

    /// Extracts a contiguous sample range as a new signal.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        let end = start
            .checked_add(len)
            .filter(|&e| e <= self.samples.len())
            .ok_or_else(|| {
                Error::SignalTooShort(format!(
                    "slice [{start}, {start}+{len}) out of range for length {}",
                    self.samples.len()
                ))
            })?;
        if len == 0 {
            return Err(Error::InvalidConfig("empty slice".into()));
        }
        Ok(Self::from_parts(
            self.samples[start..end].to_vec(),
            self.sample_rate_hz,
        ))
    }

    /// Adds complex white Gaussian noise at the given full-band SNR.
    ///
    /// `snr_db` is the ratio of the signal's own mean power to the total
    /// injected noise power across the whole sample rate. An infinite SNR
    /// returns the signal unchanged. Deterministic for a fixed seed.
    pub fn with_awgn(&self, snr_db: f64, seed: u64) -> Self {
        if snr_db.is_infinite() {
            return self.clone();
        }
        let noise_power = self.mean_power() * 10f64.powf(-snr_db / 10.0);
        let sigma = noise_power.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = self
            .samples
            .iter()
            .map(|s| s + sigma * complex_standard_normal(&mut rng))
            .collect();
        Self::from_parts(samples, self.sample_rate_hz)
    }

    /// Writes the CSIG binary format: magic "CSIG", version u32, sample rate
    /// f64, count u64, then interleaved little-endian f64 I/Q pairs.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CSIG_MAGIC)?;
        w.write_all(&CSIG_VERSION.to_le_bytes())?;
        w.write_all(&self.sample_rate_hz.to_le_bytes())?;
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.samples.len() * 16);
        for s in &self.samples {
            buf.extend_from_slice(&s.re.to_le_bytes());
            buf.extend_from_slice(&s.im.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads the CSIG binary format written by [`ComplexSignal::write_to`].
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CSIG_MAGIC {
            return Err(Error::Parse("bad CSIG magic".into()));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != CSIG_VERSION {
            return Err(Error::Parse(format!("unsupported CSIG version {version}")));
        }
        let mut f64buf = [0u8; 8];
        r.read_exact(&mut f64buf)?;
        let rate = f64::from_le_bytes(f64buf);
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let count = u64::from_le_bytes(u64buf) as usize;
        let mut raw = vec![
            0u8;
            count
                .checked_mul(16)
                .ok_or_else(|| { Error::Parse("sample count overflow".into()) })?
        ];
        r.read_exact(&mut raw)?;
        let samples = raw
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[0..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..16].try_into().unwrap()),
                )
            })
            .collect();
        ComplexSignal::new(samples, rate)
    }

    pub fn write_file<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn read_file<P: AsRef<Path>>(path: P) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

/// Circularly symmetric complex normal with unit variance (`E|z|^2 = 1`),
/// generated by Box-Muller from the raw ChaCha stream so the draw sequence
/// is identical on every platform.
pub(crate) fn complex_standard_normal(rng: &mut ChaCha8Rng) -> Complex64 {
    let u1 = 1.0 - uniform01(rng); // (0, 1]
    let u2 = uniform01(rng);
    let r = (-u1.ln()).sqrt();
    Complex64::from_polar(r, std::f64::consts::TAU * u2)
}

/// Real standard normal draw, also Box-Muller based.
pub(crate) fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = 1.0 - uniform01(rng);
    let u2 = uniform01(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn uniform01(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Derives an independent stream seed from a master seed and a label
/// (splitmix64 finalizer), so submodules never share RNG streams.
pub fn derive_seed(master: u64, label: u64) -> u64 {
    let mut z = master ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
