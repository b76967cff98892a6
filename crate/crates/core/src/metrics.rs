//! Spectrum metrology (Welch PSD, ACLR) and the drive-level sweep experiment
//! comparing no-DPD, MP-DPD and GMP-DPD operation.

use crate::array::{ArrayChain, BeamWeights, ObservationConfig};
use crate::dpd::{apply_dpd, ila_learn, DpdConfig, LearnReport};
use crate::error::{Error, Result};
use crate::fft::fft_inplace;
use crate::pa::{GmpModel, PaBank};
use crate::signal::{derive_seed, ComplexSignal};
use crate::waveform::{demodulate_evm, generate_carrier, NrCarrierConfig};
use num_complex::Complex64;
use rayon::prelude::*;

/// Welch periodogram estimate over `[-fs/2, fs/2)`.
#[derive(Debug, Clone)]
pub struct PsdEstimate {
    /// Ascending bin center frequencies in Hz.
    pub freq_hz: Vec<f64>,
    /// Power density per bin, in power/Hz.
    pub density: Vec<f64>,
    /// Bin spacing in Hz.
    pub resolution_hz: f64,
}

impl PsdEstimate {
    /// Integrated power in `[center - width/2, center + width/2)`.
    pub fn band_power(&self, center_hz: f64, width_hz: f64) -> f64 {
        let lo = center_hz - width_hz / 2.0;
        let hi = center_hz + width_hz / 2.0;
        self.freq_hz
            .iter()
            .zip(self.density.iter())
            .filter(|(f, _)| **f >= lo && **f < hi)
            .map(|(_, d)| d * self.resolution_hz)
            .sum()
    }

    pub fn total_power(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.resolution_hz
    }
}

/// Welch averaged periodogram with a periodic Hann window. The density is
/// normalized so its integral over the band equals the signal power.
pub fn psd(sig: &ComplexSignal, segment_len: usize, overlap: f64) -> Result<PsdEstimate> {
    if segment_len < 8 {
        return Err(Error::InvalidConfig(
            "segment_len must be at least 8".into(),
        ));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidConfig(format!(
            "overlap must lie in [0, 1), got {overlap}"
        )));
    }
    if sig.len() < 2 * segment_len {
        return Err(Error::SignalTooShort(format!(
            "need at least {} samples for {segment_len}-point segments, got {}",
            2 * segment_len,
            sig.len()
        )));
    }
    let n = segment_len;
    let hop = ((n as f64) * (1.0 - overlap)).round().max(1.0) as usize;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / n as f64).cos()))
        .collect();
    let u: f64 = window.iter().map(|w| w * w).sum();
    let fs = sig.sample_rate_hz();

    let x = sig.samples();
    let mut acc = vec![0.0f64; n];
    let mut buf = vec![Complex64::default(); n];
    let mut segments = 0usize;
    let mut start = 0usize;
    while start + n <= x.len() {
        for ((b, s), w) in buf.iter_mut().zip(&x[start..start + n]).zip(&window) {
            *b = s * w;
        }
        fft_inplace(&mut buf, false);
        for (a, v) in acc.iter_mut().zip(buf.iter()) {
            *a += v.norm_sqr();
        }
        segments += 1;
        start += hop;
    }

    let scale = 1.0 / (segments as f64 * fs * u);
    let resolution_hz = fs / n as f64;
    let mut freq_hz = Vec::with_capacity(n);
    let mut density = Vec::with_capacity(n);
    // fftshift so frequencies ascend from -fs/2
    for i in 0..n {
        let bin = (i + n / 2) % n;
        let k = if bin < n / 2 {
            bin as i64
        } else {
            bin as i64 - n as i64
        };
        freq_hz.push(k as f64 * resolution_hz);
        density.push(acc[bin] * scale);
    }
    Ok(PsdEstimate {
        freq_hz,
        density,
        resolution_hz,
    })
}

/// Which adjacent channel enters the ACLR ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AclrSide {
    Lower,
    Upper,
    /// The stronger adjacent channel (smaller ratio).
    Worst,
}

/// Adjacent-channel leakage measurement bands.
#[derive(Debug, Clone, Copy)]
pub struct AclrSpec {
    pub channel_bw_hz: f64,
    /// Integration bandwidth around each channel center.
    pub measurement_bw_hz: f64,
    /// Offset of the adjacent channel centers from the carrier.
    pub adjacent_offset_hz: f64,
    pub side: AclrSide,
}

impl Default for AclrSpec {
    fn default() -> Self {
        Self {
            channel_bw_hz: 200e6,
            measurement_bw_hz: 190.08e6,
            adjacent_offset_hz: 200e6,
            side: AclrSide::Worst,
        }
    }
}

impl AclrSpec {
    /// Bands matched to a carrier: integrate over the occupied bandwidth,
    /// adjacent channels one channel bandwidth away.
    pub fn for_carrier(cfg: &NrCarrierConfig, channel_bw_hz: f64) -> Self {
        Self {
            channel_bw_hz,
            measurement_bw_hz: cfg.occupied_bandwidth_hz(),
            adjacent_offset_hz: channel_bw_hz,
            side: AclrSide::Worst,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.channel_bw_hz > 0.0
            && self.measurement_bw_hz > 0.0
            && self.adjacent_offset_hz > 0.0)
        {
            return Err(Error::InvalidConfig(
                "ACLR bandwidths must be positive".into(),
            ));
        }
        if self.adjacent_offset_hz < self.measurement_bw_hz {
            return Err(Error::InvalidConfig(format!(
                "adjacent offset {} must be >= measurement bandwidth {}",
                self.adjacent_offset_hz, self.measurement_bw_hz
            )));
        }
        Ok(())
    }
}

/// Welch defaults used by the metric paths: 4096-point segments (shrunk for
/// short signals), 50% overlap.
pub fn default_psd(sig: &ComplexSignal) -> Result<PsdEstimate> {
    let mut segment = 4096usize;
    while segment > 64 && sig.len() < 2 * segment {
        segment /= 2;
    }
    psd(sig, segment, 0.5)
}

/// Adjacent channel leakage ratio in dBc: main-band over adjacent-band power
/// integrated from the Welch PSD.
pub fn aclr(sig: &ComplexSignal, spec: &AclrSpec) -> Result<f64> {
    spec.validate()?;
    let fs = sig.sample_rate_hz();
    if spec.adjacent_offset_hz + spec.measurement_bw_hz / 2.0 > fs / 2.0 {
        return Err(Error::BandwidthExceedsNyquist(format!(
            "adjacent band edge {} Hz beyond Nyquist {} Hz",
            spec.adjacent_offset_hz + spec.measurement_bw_hz / 2.0,
            fs / 2.0
        )));
    }
    let est = default_psd(sig)?;
    let main = est.band_power(0.0, spec.measurement_bw_hz);
    let lower = est.band_power(-spec.adjacent_offset_hz, spec.measurement_bw_hz);
    let upper = est.band_power(spec.adjacent_offset_hz, spec.measurement_bw_hz);
    let adj = match spec.side {
        AclrSide::Lower => lower,
        AclrSide::Upper => upper,
        AclrSide::Worst => lower.max(upper),
    };
    Ok(10.0 * (main / adj.max(1e-300)).log10())
}

/// DPD operating mode of a measurement point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpdMode {
    Off,
    Mp,
    Gmp,
}

impl DpdMode {
    pub const ALL: [DpdMode; 3] = [DpdMode::Off, DpdMode::Mp, DpdMode::Gmp];

    pub fn as_str(&self) -> &'static str {
        match self {
            DpdMode::Off => "off",
            DpdMode::Mp => "mp",
            DpdMode::Gmp => "gmp",
        }
    }
}

impl std::fmt::Display for DpdMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DpdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(DpdMode::Off),
            "mp" => Ok(DpdMode::Mp),
            "gmp" => Ok(DpdMode::Gmp),
            other => Err(Error::Parse(format!("unknown DPD mode '{other}'"))),
        }
    }
}

/// One linearization experiment: waveform, array, observation path and DPD
/// settings, with seeded deterministic data generation.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub carrier: NrCarrierConfig,
    pub bank: PaBank,
    pub weights: BeamWeights,
    pub observation: ObservationConfig,
    /// GMP learning configuration; the MP variant is derived from it.
    pub dpd: DpdConfig,
    pub aclr: AclrSpec,
    pub seed: u64,
}

/// Metrics of one (drive level, mode) measurement.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub drive_level_db: f64,
    pub mode: DpdMode,
    pub aclr_db: f64,
    pub evm_percent: f64,
    /// Combined output power in dB (relative units): the sweep's EIRP proxy.
    pub eirp_proxy_db: f64,
    /// Combined observation the metrics were computed on.
    pub output: ComplexSignal,
    pub predistorter: Option<GmpModel>,
    pub learn_report: Option<LearnReport>,
}

const SEED_MEAS_CARRIER: u64 = 0x4d45_4153;
const SEED_TRAIN_CARRIER: u64 = 0x5452_4149;
const SEED_MEAS_NOISE: u64 = 0x4e4f_4953;

impl Scenario {
    fn dpd_for(&self, mode: DpdMode) -> DpdConfig {
        match mode {
            DpdMode::Gmp => self.dpd,
            DpdMode::Mp => self.dpd.mp_variant(),
            DpdMode::Off => self.dpd,
        }
    }

    /// Training carrier sized for the full ILA run at this mode.
    fn training_carrier(&self, mode: DpdMode) -> Result<ComplexSignal> {
        let cfg_mode = self.dpd_for(mode);
        let mut cfg = self.carrier;
        cfg.num_symbols = cfg.symbols_for_samples(cfg_mode.training_samples_needed());
        let (sig, _) = generate_carrier(&cfg, derive_seed(self.seed, SEED_TRAIN_CARRIER))?;
        Ok(sig)
    }

    /// Runs one measurement: optionally train DPD at this drive level on the
    /// training carrier, then measure ACLR and EVM on the held-out
    /// measurement carrier through the observation path.
    pub fn evaluate_point(&self, drive_level_db: f64, mode: DpdMode) -> Result<PointResult> {
        self.carrier.validate()?;
        self.dpd.validate()?;
        self.aclr.validate()?;
        if self.bank.len() != self.weights.len() {
            return Err(Error::SizeMismatch(format!(
                "{} PAs vs {} weights",
                self.bank.len(),
                self.weights.len()
            )));
        }

        let (meas, grid) =
            generate_carrier(&self.carrier, derive_seed(self.seed, SEED_MEAS_CARRIER))?;
        let meas = meas.scaled_db(drive_level_db);

        let (predistorter, learn_report) = if mode == DpdMode::Off {
            (None, None)
        } else {
            let cfg_mode = self.dpd_for(mode);
            let train = self.training_carrier(mode)?.scaled_db(drive_level_db);
            let chain = ArrayChain::new(self.bank.clone(), self.weights.clone(), self.observation)?;
            let (beta, report) = ila_learn(&train, &chain, &cfg_mode)?;
            (Some(beta), Some(report))
        };

        let driven = match &predistorter {
            Some(beta) => apply_dpd(&meas, beta)?,
            None => meas,
        };
        let obs = ObservationConfig {
            noise_snr_db: self.observation.noise_snr_db,
            seed: derive_seed(self.observation.seed, SEED_MEAS_NOISE),
        };
        let chain = ArrayChain::new(self.bank.clone(), self.weights.clone(), obs)?;
        let output = chain.observe(&driven)?;

        let aclr_db = aclr(&output, &self.aclr)?;
        let evm_percent = demodulate_evm(&output, &grid, &self.carrier)?;
        let eirp_proxy_db = 10.0 * output.mean_power().log10();

        Ok(PointResult {
            drive_level_db,
            mode,
            aclr_db,
            evm_percent,
            eirp_proxy_db,
            output,
            predistorter,
            learn_report,
        })
    }
}

/// One row of a drive sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub drive_level_db: f64,
    pub eirp_proxy_db: f64,
    pub aclr_db: f64,
    pub evm_percent: f64,
    pub dpd_mode: DpdMode,
}

/// Sweep rows ordered by drive level, then mode (off, mp, gmp).
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Highest drive level satisfying both limits for a mode, if any.
    pub fn max_drive_meeting(
        &self,
        mode: DpdMode,
        aclr_limit_db: f64,
        evm_limit_percent: f64,
    ) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| {
                r.dpd_mode == mode
                    && r.aclr_db >= aclr_limit_db
                    && r.evm_percent <= evm_limit_percent
            })
            .map(|r| r.drive_level_db)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }
}

/// Sweeps drive levels; every level retrains the DPD modes from scratch and
/// measures on held-out data. Levels run in parallel, rows come out sorted.
///
/// Deep into saturation a DPD mode can break down to the point where the
/// observation no longer demodulates (or the learning loop diverges to
/// non-finite values). Such points report NaN metrics instead of aborting
/// the sweep; limit checks treat them as failing the limits.
pub fn run_sweep(scenario: &Scenario, drive_levels_db: &[f64]) -> Result<SweepResult> {
    if drive_levels_db.is_empty() {
        return Err(Error::InvalidConfig(
            "sweep needs at least one drive level".into(),
        ));
    }
    if !drive_levels_db.iter().all(|d| d.is_finite()) {
        return Err(Error::InvalidConfig("drive levels must be finite".into()));
    }
    let mut levels = drive_levels_db.to_vec();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let per_level: Vec<Result<Vec<SweepRow>>> = levels
        .par_iter()
        .map(|&level| {
            DpdMode::ALL
                .iter()
                .map(|&mode| match scenario.evaluate_point(level, mode) {
                    Ok(point) => Ok(SweepRow {
                        drive_level_db: level,
                        eirp_proxy_db: point.eirp_proxy_db,
                        aclr_db: point.aclr_db,
                        evm_percent: point.evm_percent,
                        dpd_mode: mode,
                    }),
                    Err(Error::SyncFailure { .. }) | Err(Error::NonFinite(_)) => Ok(SweepRow {
                        drive_level_db: level,
                        eirp_proxy_db: f64::NAN,
                        aclr_db: f64::NAN,
                        evm_percent: f64::NAN,
                        dpd_mode: mode,
                    }),
                    Err(e) => Err(e),
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::with_capacity(levels.len() * 3);
    for level_rows in per_level {
        rows.extend(level_rows?);
    }
    Ok(SweepResult { rows })
}
