//! Experiment harness: TOML configuration with full defaulting, the
//! `single` / `sweep` / `selftest` commands, and CSV/text artifact
//! persistence. Everything a run produces is reproducible from the resolved
//! config echoed next to the outputs.

use arraydpd::array::{BeamWeights, ObservationConfig};
use arraydpd::dpd::DpdConfig;
use arraydpd::metrics::{
    default_psd, run_sweep, AclrSide, AclrSpec, DpdMode, PointResult, Scenario, SweepResult,
};
use arraydpd::pa::{default_nominal_pa, synthesize_bank, DispersionSpec, GmpStructure};
use arraydpd::signal::derive_seed;
use arraydpd::waveform::NrCarrierConfig;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub mod selftest;

/// FR2 conformance limits quoted in sweep outputs.
pub const ACLR_LIMIT_DB: f64 = 28.0;
pub const EVM_LIMIT_PCT: f64 = 8.0;

const SEED_DISPERSION: u64 = 0x4449_5350;
const SEED_WEIGHTS: u64 = 0x5745_4947;
const SEED_OBSERVATION: u64 = 0x4f42_5345;

/// Harness errors with a machine-readable category and exit code.
#[derive(Debug)]
pub enum CliError {
    /// Config file could not be read or parsed.
    ConfigParse(String),
    Core(arraydpd::Error),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::ConfigParse(_) => "config-parse",
            CliError::Core(e) => match e {
                arraydpd::Error::Io(_) => "io",
                arraydpd::Error::Parse(_) => "config-parse",
                arraydpd::Error::InvalidConfig(_) | arraydpd::Error::SizeMismatch(_) => {
                    "invalid-config"
                }
                _ => "numeric",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config-parse" => 2,
            "io" => 3,
            "invalid-config" => 4,
            _ => 5,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::ConfigParse(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<arraydpd::Error> for CliError {
    fn from(e: arraydpd::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(arraydpd::Error::Io(e))
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Top-level experiment configuration. Every field has a default, so an
/// empty file (or no file) runs the paper-scale reference experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub waveform: WaveformSection,
    pub bank: BankSection,
    pub weights: WeightsSection,
    pub observation: ObservationSection,
    pub dpd: DpdSection,
    pub aclr: AclrSection,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("out"),
            waveform: WaveformSection::default(),
            bank: BankSection::default(),
            weights: WeightsSection::default(),
            observation: ObservationSection::default(),
            dpd: DpdSection::default(),
            aclr: AclrSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformSection {
    pub subcarrier_spacing_hz: f64,
    pub fft_size: usize,
    pub active_subcarriers: usize,
    pub cp_fraction: f64,
    pub qam_order: usize,
    pub num_symbols: usize,
    pub oversampling: usize,
}

impl Default for WaveformSection {
    fn default() -> Self {
        let cfg = NrCarrierConfig::default();
        Self {
            subcarrier_spacing_hz: cfg.subcarrier_spacing_hz,
            fft_size: cfg.fft_size,
            active_subcarriers: cfg.active_subcarriers,
            cp_fraction: cfg.cp_fraction,
            qam_order: cfg.qam_order,
            num_symbols: cfg.num_symbols,
            oversampling: cfg.oversampling,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankSection {
    /// Number of array elements / PAs.
    pub count: usize,
    /// Input backoff of the nominal PA in dB; 0 dB is the calibrated
    /// compression point.
    pub backoff_db: f64,
    pub structure: StructureSection,
    pub dispersion: DispersionSection,
}

impl Default for BankSection {
    fn default() -> Self {
        Self {
            count: 64,
            backoff_db: 0.0,
            structure: StructureSection::default(),
            dispersion: DispersionSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureSection {
    pub max_order: usize,
    pub envelope_lag: usize,
    pub memory_depth: usize,
}

impl Default for StructureSection {
    fn default() -> Self {
        Self {
            max_order: 7,
            envelope_lag: 3,
            memory_depth: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DispersionSection {
    pub gain_std_db: f64,
    pub phase_std_deg: f64,
    pub nonlinear_coeff_rel_std: f64,
    /// Derived from the master seed when absent.
    pub seed: Option<u64>,
}

impl Default for DispersionSection {
    fn default() -> Self {
        Self {
            gain_std_db: 0.5,
            phase_std_deg: 5.0,
            nonlinear_coeff_rel_std: 0.1,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSection {
    /// "matched" draws per-element channel phases from the seed and matches
    /// the weights to them; explicit phases override.
    pub mode: String,
    pub phases_deg: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

impl Default for WeightsSection {
    fn default() -> Self {
        Self {
            mode: "matched".into(),
            phases_deg: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationSection {
    /// Full-band SNR of the combined observation; `inf` disables noise.
    pub noise_snr_db: f64,
    pub seed: Option<u64>,
}

impl Default for ObservationSection {
    fn default() -> Self {
        Self {
            noise_snr_db: 45.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpdSection {
    pub max_order: usize,
    pub envelope_lag: usize,
    pub memory_depth: usize,
    pub ila_iterations: usize,
    pub block_samples: usize,
    pub regularization: f64,
}

impl Default for DpdSection {
    fn default() -> Self {
        Self {
            max_order: 7,
            envelope_lag: 3,
            memory_depth: 4,
            ila_iterations: 3,
            block_samples: 40_000,
            regularization: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AclrSection {
    pub channel_bw_hz: f64,
    /// Defaults to the occupied bandwidth of the configured carrier.
    pub measurement_bw_hz: Option<f64>,
    /// Defaults to one channel bandwidth.
    pub adjacent_offset_hz: Option<f64>,
    /// "lower", "upper" or "worst".
    pub side: String,
}

impl Default for AclrSection {
    fn default() -> Self {
        Self {
            channel_bw_hz: 200e6,
            measurement_bw_hz: None,
            adjacent_offset_hz: None,
            side: "worst".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub drive_levels_db: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            drive_levels_db: (-8..=0).map(|d| d as f64).collect(),
        }
    }
}

/// Loads a config file, or the all-defaults config when no path is given.
pub fn load_config(path: Option<&Path>) -> CliResult<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::ConfigParse(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::ConfigParse(format!("{}: {e}", p.display())))
        }
    }
}

/// A config with every derived value pinned, plus the core scenario built
/// from it.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub scenario: Scenario,
    pub drive_levels_db: Vec<f64>,
    pub output_dir: PathBuf,
}

/// Fills derived seeds, validates everything and builds the scenario.
pub fn resolve(mut config: ExperimentConfig) -> CliResult<Resolved> {
    // derived seeds are masked to 63 bits so the echoed config stays
    // representable as a TOML integer
    let derive = |label: u64| derive_seed(config.seed, label) & (i64::MAX as u64);
    let disp_seed = config
        .bank
        .dispersion
        .seed
        .unwrap_or_else(|| derive(SEED_DISPERSION));
    config.bank.dispersion.seed = Some(disp_seed);
    let weights_seed = config.weights.seed.unwrap_or_else(|| derive(SEED_WEIGHTS));
    config.weights.seed = Some(weights_seed);
    let obs_seed = config
        .observation
        .seed
        .unwrap_or_else(|| derive(SEED_OBSERVATION));
    config.observation.seed = Some(obs_seed);

    let carrier = NrCarrierConfig {
        subcarrier_spacing_hz: config.waveform.subcarrier_spacing_hz,
        fft_size: config.waveform.fft_size,
        active_subcarriers: config.waveform.active_subcarriers,
        cp_fraction: config.waveform.cp_fraction,
        qam_order: config.waveform.qam_order,
        num_symbols: config.waveform.num_symbols,
        oversampling: config.waveform.oversampling,
    };
    carrier.validate()?;

    let pa_structure = GmpStructure::new(
        config.bank.structure.max_order,
        config.bank.structure.envelope_lag,
        config.bank.structure.memory_depth,
    )?;
    let nominal = default_nominal_pa(pa_structure, config.bank.backoff_db)?;
    let bank = synthesize_bank(
        &nominal,
        &DispersionSpec {
            gain_std_db: config.bank.dispersion.gain_std_db,
            phase_std_deg: config.bank.dispersion.phase_std_deg,
            nonlinear_coeff_rel_std: config.bank.dispersion.nonlinear_coeff_rel_std,
            seed: disp_seed,
        },
        config.bank.count,
    )?;

    let weights = match (&config.weights.mode[..], &config.weights.phases_deg) {
        (_, Some(phases)) => {
            let rad: Vec<f64> = phases.iter().map(|d| d.to_radians()).collect();
            BeamWeights::from_phases_rad(&rad)?
        }
        ("matched", None) => BeamWeights::random_phases(config.bank.count, weights_seed)?,
        (other, None) => {
            return Err(CliError::ConfigParse(format!(
                "unknown weights mode '{other}' (expected \"matched\" or explicit phases_deg)"
            )))
        }
    };
    if weights.len() != config.bank.count {
        return Err(CliError::ConfigParse(format!(
            "{} weight phases for {} PAs",
            weights.len(),
            config.bank.count
        )));
    }

    let dpd = DpdConfig {
        structure: GmpStructure::new(
            config.dpd.max_order,
            config.dpd.envelope_lag,
            config.dpd.memory_depth,
        )?,
        ila_iterations: config.dpd.ila_iterations,
        block_samples: config.dpd.block_samples,
        regularization: config.dpd.regularization,
    };
    dpd.validate()?;

    let side = match config.aclr.side.as_str() {
        "lower" => AclrSide::Lower,
        "upper" => AclrSide::Upper,
        "worst" => AclrSide::Worst,
        other => {
            return Err(CliError::ConfigParse(format!(
                "unknown ACLR side '{other}' (expected lower/upper/worst)"
            )))
        }
    };
    let aclr = AclrSpec {
        channel_bw_hz: config.aclr.channel_bw_hz,
        measurement_bw_hz: config
            .aclr
            .measurement_bw_hz
            .unwrap_or_else(|| carrier.occupied_bandwidth_hz()),
        adjacent_offset_hz: config
            .aclr
            .adjacent_offset_hz
            .unwrap_or(config.aclr.channel_bw_hz),
        side,
    };
    aclr.validate()?;
    config.aclr.measurement_bw_hz = Some(aclr.measurement_bw_hz);
    config.aclr.adjacent_offset_hz = Some(aclr.adjacent_offset_hz);

    let scenario = Scenario {
        carrier,
        bank,
        weights,
        observation: ObservationConfig {
            noise_snr_db: config.observation.noise_snr_db,
            seed: obs_seed,
        },
        dpd,
        aclr,
        seed: config.seed,
    };

    Ok(Resolved {
        drive_levels_db: config.sweep.drive_levels_db.clone(),
        output_dir: config.output_dir.clone(),
        config,
        scenario,
    })
}

fn write_resolved_config(resolved: &Resolved, dir: &Path) -> CliResult<()> {
    let text = toml::to_string_pretty(&resolved.config)
        .map_err(|e| CliError::ConfigParse(format!("config serialization: {e}")))?;
    std::fs::write(dir.join("resolved_config.toml"), text)?;
    Ok(())
}

fn psd_csv(point: &PointResult) -> CliResult<String> {
    let est = default_psd(&point.output)?;
    let mut out = String::from("freq_hz,density_dbhz\n");
    for (f, d) in est.freq_hz.iter().zip(est.density.iter()) {
        let db = 10.0 * d.max(1e-300).log10();
        writeln!(out, "{f},{db}").unwrap();
    }
    Ok(out)
}

fn learn_report_csv(point: &PointResult) -> Option<String> {
    let report = point.learn_report.as_ref()?;
    let mut out = String::from("iteration,nmse_db,condition_estimate\n");
    for (k, it) in report.iterations.iter().enumerate() {
        writeln!(out, "{},{},{}", k + 1, it.nmse_db, it.condition_estimate).unwrap();
    }
    Some(out)
}

/// Artifacts of a `single` run.
pub struct SingleReport {
    pub points: Vec<PointResult>,
    pub metrics_path: PathBuf,
}

/// Runs the single-drive linearization experiment and persists PSDs,
/// Table-1-style metrics, learning reports, predistorter coefficients and
/// the resolved config.
pub fn run_single(resolved: &Resolved, only: Option<DpdMode>) -> CliResult<SingleReport> {
    let dir = &resolved.output_dir;
    std::fs::create_dir_all(dir)?;
    write_resolved_config(resolved, dir)?;

    let modes: Vec<DpdMode> = match only {
        Some(m) => vec![m],
        None => DpdMode::ALL.to_vec(),
    };

    let mut points = Vec::with_capacity(modes.len());
    let mut metrics = String::from("dpd_mode,evm_percent,aclr_db\n");
    for mode in modes {
        let point = resolved.scenario.evaluate_point(0.0, mode)?;
        writeln!(metrics, "{},{},{}", mode, point.evm_percent, point.aclr_db).unwrap();
        std::fs::write(dir.join(format!("psd_{mode}.csv")), psd_csv(&point)?)?;
        if let Some(csv) = learn_report_csv(&point) {
            std::fs::write(dir.join(format!("learn_report_{mode}.csv")), csv)?;
        }
        if let Some(beta) = &point.predistorter {
            beta.write_file(dir.join(format!("beta_{mode}.gmp")))?;
        }
        points.push(point);
    }
    let metrics_path = dir.join("metrics.csv");
    std::fs::write(&metrics_path, metrics)?;
    Ok(SingleReport {
        points,
        metrics_path,
    })
}

/// Runs the drive sweep and writes `sweep.csv` with the FR2 limits pinned in
/// the header comments.
pub fn run_sweep_cmd(resolved: &Resolved) -> CliResult<(SweepResult, PathBuf)> {
    let dir = &resolved.output_dir;
    std::fs::create_dir_all(dir)?;
    write_resolved_config(resolved, dir)?;

    let result = run_sweep(&resolved.scenario, &resolved.drive_levels_db)?;
    let mut out = String::new();
    writeln!(out, "# aclr_limit_db={ACLR_LIMIT_DB}").unwrap();
    writeln!(out, "# evm_limit_pct={EVM_LIMIT_PCT}").unwrap();
    writeln!(
        out,
        "drive_level_db,eirp_proxy_db,aclr_db,evm_percent,dpd_mode"
    )
    .unwrap();
    for row in &result.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            row.drive_level_db, row.eirp_proxy_db, row.aclr_db, row.evm_percent, row.dpd_mode
        )
        .unwrap();
    }
    let path = dir.join("sweep.csv");
    std::fs::write(&path, out)?;
    Ok((result, path))
}

/// Parses a metrics.csv produced by [`run_single`].
pub fn parse_metrics_csv(text: &str) -> CliResult<Vec<(DpdMode, f64, f64)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "dpd_mode,evm_percent,aclr_db" {
                return Err(CliError::ConfigParse(format!(
                    "unexpected metrics header '{line}'"
                )));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(CliError::ConfigParse(format!("bad metrics row '{line}'")));
        }
        let mode: DpdMode = fields[0].parse()?;
        let evm: f64 = fields[1]
            .parse()
            .map_err(|e| CliError::ConfigParse(format!("bad evm '{}': {e}", fields[1])))?;
        let aclr: f64 = fields[2]
            .parse()
            .map_err(|e| CliError::ConfigParse(format!("bad aclr '{}': {e}", fields[2])))?;
        rows.push((mode, evm, aclr));
    }
    Ok(rows)
}

/// Parses a sweep.csv produced by [`run_sweep_cmd`]; returns the limits from
/// the header and the rows.
#[allow(clippy::type_complexity)]
pub fn parse_sweep_csv(text: &str) -> CliResult<((f64, f64), Vec<(f64, f64, f64, f64, DpdMode)>)> {
    let mut aclr_limit = None;
    let mut evm_limit = None;
    let mut rows = Vec::new();
    let mut saw_header = false;
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# ") {
            if let Some(v) = rest.strip_prefix("aclr_limit_db=") {
                aclr_limit = v.parse().ok();
            } else if let Some(v) = rest.strip_prefix("evm_limit_pct=") {
                evm_limit = v.parse().ok();
            }
            continue;
        }
        if !saw_header {
            if line != "drive_level_db,eirp_proxy_db,aclr_db,evm_percent,dpd_mode" {
                return Err(CliError::ConfigParse(format!(
                    "unexpected sweep header '{line}'"
                )));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(CliError::ConfigParse(format!("bad sweep row '{line}'")));
        }
        let parse = |s: &str| -> CliResult<f64> {
            s.parse()
                .map_err(|e| CliError::ConfigParse(format!("bad number '{s}': {e}")))
        };
        rows.push((
            parse(fields[0])?,
            parse(fields[1])?,
            parse(fields[2])?,
            parse(fields[3])?,
            fields[4].parse()?,
        ));
    }
    let aclr_limit =
        aclr_limit.ok_or_else(|| CliError::ConfigParse("missing aclr_limit_db header".into()))?;
    let evm_limit =
        evm_limit.ok_or_else(|| CliError::ConfigParse("missing evm_limit_pct header".into()))?;
    Ok(((aclr_limit, evm_limit), rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_resolves_to_paper_scale_defaults() {
        let resolved = resolve(ExperimentConfig::default()).unwrap();
        assert_eq!(resolved.scenario.bank.len(), 64);
        assert_eq!(resolved.scenario.dpd.block_samples, 40_000);
        assert_eq!(resolved.scenario.dpd.structure.term_count(), 112);
        assert!((resolved.scenario.aclr.measurement_bw_hz - 190.08e6).abs() < 1e-3);
        assert!((resolved.scenario.aclr.adjacent_offset_hz - 200e6).abs() < 1e-3);
        assert_eq!(resolved.drive_levels_db.len(), 9);
        // derived seeds are pinned into the echoed config
        assert!(resolved.config.bank.dispersion.seed.is_some());
        assert!(resolved.config.observation.seed.is_some());
    }

    #[test]
    fn toml_round_trip_preserves_resolved_config() {
        let resolved = resolve(ExperimentConfig::default()).unwrap();
        let text = toml::to_string_pretty(&resolved.config).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        let re_resolved = resolve(back).unwrap();
        assert_eq!(
            re_resolved.config.bank.dispersion.seed,
            resolved.config.bank.dispersion.seed
        );
        assert_eq!(re_resolved.scenario.seed, resolved.scenario.seed);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = toml::from_str::<ExperimentConfig>("nonsense = 3\n");
        assert!(err.is_err());
    }

    #[test]
    fn explicit_phases_override_matched_mode() {
        let mut cfg = ExperimentConfig::default();
        cfg.bank.count = 3;
        cfg.weights.phases_deg = Some(vec![0.0, 90.0, 180.0]);
        let resolved = resolve(cfg).unwrap();
        let w = resolved.scenario.weights.weights();
        assert!((w[1].re).abs() < 1e-12 && (w[1].im - 1.0).abs() < 1e-12);
        assert!((w[2].re + 1.0).abs() < 1e-12);
    }

    #[test]
    fn phase_count_mismatch_is_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.bank.count = 4;
        cfg.weights.phases_deg = Some(vec![0.0, 10.0]);
        assert!(resolve(cfg).is_err());
    }

    #[test]
    fn metrics_csv_parser_round_trips() {
        let text = "dpd_mode,evm_percent,aclr_db\noff,5.75,30.66\nmp,0.38,50.71\ngmp,0.25,51.41\n";
        let rows = parse_metrics_csv(text).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].0, DpdMode::Off);
        assert_eq!(rows[2].0, DpdMode::Gmp);
        assert!((rows[1].1 - 0.38).abs() < 1e-12);
    }

    #[test]
    fn sweep_csv_parser_reads_limits_and_rows() {
        let text = "# aclr_limit_db=28\n# evm_limit_pct=8\n\
                    drive_level_db,eirp_proxy_db,aclr_db,evm_percent,dpd_mode\n\
                    -2,10.5,45.1,1.2,gmp\n";
        let ((a, e), rows) = parse_sweep_csv(text).unwrap();
        assert_eq!(a, 28.0);
        assert_eq!(e, 8.0);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].4, DpdMode::Gmp);
    }
}
