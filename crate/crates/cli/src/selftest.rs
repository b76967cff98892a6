//! Built-in invariant suite behind the `selftest` subcommand: quick,
//! deterministic checks of the core contracts, printing one line per check.

use arraydpd::array::{combine, equivalent_model, transmit, BeamWeights, ObservationConfig};
use arraydpd::dpd::{basis_matrix, ila_learn, ls_solve, DpdConfig};
use arraydpd::lsq::CMatrix;
use arraydpd::metrics::{psd, DpdMode, Scenario};
use arraydpd::pa::{default_nominal_pa, synthesize_bank, DispersionSpec, GmpModel, GmpStructure};
use arraydpd::signal::ComplexSignal;
use arraydpd::testsupport::{naive_basis_entry, naive_gmp_evaluate, small_carrier_config};
use arraydpd::waveform::{demodulate_evm, generate_carrier};
use num_complex::Complex64;

type Check = (&'static str, fn() -> Result<(), String>);

fn random_signal(n: usize, seed: u64) -> ComplexSignal {
    use rand::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut u = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
    ComplexSignal::new((0..n).map(|_| Complex64::new(u(), u())).collect(), 1.0).unwrap()
}

fn random_model(structure: GmpStructure, seed: u64, scale: f64) -> GmpModel {
    use rand::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut u = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
    let coeffs = (0..structure.term_count())
        .map(|_| Complex64::new(u() * scale, u() * scale))
        .collect();
    GmpModel::new(structure, coeffs).unwrap()
}

fn rel_l2(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|v| v.norm_sqr()).sum();
    (num / den).sqrt()
}

fn check(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn gmp_oracle_equivalence() -> Result<(), String> {
    let s = GmpStructure::new(7, 2, 3).map_err(|e| e.to_string())?;
    let model = random_model(s, 1, 0.3);
    let x = random_signal(400, 2);
    let fast = model.evaluate(&x).map_err(|e| e.to_string())?;
    let slow = naive_gmp_evaluate(&model, x.samples());
    let err = rel_l2(fast.samples(), &slow);
    check(err < 1e-12, format!("oracle mismatch {err:.2e}"))
}

fn basis_matches_formula() -> Result<(), String> {
    let s = GmpStructure::new(5, 2, 2).map_err(|e| e.to_string())?;
    let z = random_signal(200, 3);
    let basis = basis_matrix(&z, &s).map_err(|e| e.to_string())?;
    for (j, (p, g, m)) in s.terms().enumerate() {
        for row in [0usize, 50, basis.matrix.rows() - 1] {
            let n = basis.first_row_time + row;
            let want = naive_basis_entry(z.samples(), n, p, g, m);
            let got = basis.matrix.get(row, j);
            if (got - want).norm() > 1e-13 * want.norm().max(1e-30) {
                return Err(format!("entry ({row},{j}) = {got}, want {want}"));
            }
        }
    }
    Ok(())
}

fn array_equivalence() -> Result<(), String> {
    let s = GmpStructure::new(7, 3, 4).map_err(|e| e.to_string())?;
    let nominal = default_nominal_pa(s, 0.0).map_err(|e| e.to_string())?;
    let disp = DispersionSpec {
        gain_std_db: 1.0,
        phase_std_deg: 20.0,
        nonlinear_coeff_rel_std: 0.3,
        seed: 4,
    };
    let bank = synthesize_bank(&nominal, &disp, 8).map_err(|e| e.to_string())?;
    let w = BeamWeights::random_phases(8, 5).map_err(|e| e.to_string())?;
    let x = random_signal(1024, 6).scaled(Complex64::new(0.5, 0.0));
    let outputs = transmit(&x, &w, &bank).map_err(|e| e.to_string())?;
    let r = combine(&outputs, &w, &ObservationConfig::default()).map_err(|e| e.to_string())?;
    let eq = equivalent_model(&bank)
        .evaluate(&x)
        .map_err(|e| e.to_string())?;
    let err = rel_l2(r.samples(), eq.samples());
    check(err < 1e-10, format!("equivalence error {err:.2e}"))
}

fn ls_recovery_and_orthogonality() -> Result<(), String> {
    use rand::{RngCore, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut u = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
    let (m, n) = (150, 12);
    let a = CMatrix::from_fn(m, n, |_, _| Complex64::new(u(), u()));
    let truth: Vec<Complex64> = (0..n).map(|_| Complex64::new(u(), u())).collect();
    let y = a.mul_vec(&truth);
    let sol = ls_solve(&a, &y, 0.0).map_err(|e| e.to_string())?;
    let err = rel_l2(&sol.coeffs, &truth);
    check(err < 1e-10, format!("recovery error {err:.2e}"))?;

    let noisy: Vec<Complex64> = y.iter().map(|v| v + Complex64::new(u(), u())).collect();
    let sol = ls_solve(&a, &noisy, 0.0).map_err(|e| e.to_string())?;
    let fitted = a.mul_vec(&sol.coeffs);
    let resid: Vec<Complex64> = noisy.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let grad = a.herm_mul_vec(&resid);
    let gnorm: f64 = grad.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let scale: f64 = a
        .herm_mul_vec(&noisy)
        .iter()
        .map(|v| v.norm_sqr())
        .sum::<f64>()
        .sqrt();
    check(
        gnorm / scale < 1e-8,
        format!("orthogonality residual {:.2e}", gnorm / scale),
    )
}

fn ila_identity_fixed_point() -> Result<(), String> {
    let cfg = DpdConfig {
        structure: GmpStructure::new(7, 3, 4).unwrap(),
        ila_iterations: 1,
        block_samples: 1500,
        regularization: 0.0,
    };
    let x = random_signal(1600, 8);
    let chain = |sig: &ComplexSignal| Ok(sig.clone());
    let (beta, _) = ila_learn(&x, &chain, &cfg).map_err(|e| e.to_string())?;
    let identity = GmpModel::identity(cfg.structure);
    let err = rel_l2(beta.coeffs(), identity.coeffs());
    check(err < 1e-8, format!("distance from identity {err:.2e}"))
}

fn evm_self_demodulation() -> Result<(), String> {
    let cfg = small_carrier_config();
    let (sig, grid) = generate_carrier(&cfg, 9).map_err(|e| e.to_string())?;
    let evm = demodulate_evm(&sig, &grid, &cfg).map_err(|e| e.to_string())?;
    check(evm < 0.1, format!("self-demodulation EVM {evm:.4}%"))
}

fn psd_parseval() -> Result<(), String> {
    let sig = random_signal(32_768, 10);
    let sig = ComplexSignal::new(sig.samples().to_vec(), 250.0).unwrap();
    let est = psd(&sig, 1024, 0.5).map_err(|e| e.to_string())?;
    let err_db = 10.0 * (est.total_power() / sig.mean_power()).log10();
    check(err_db.abs() < 0.1, format!("Parseval error {err_db:.3} dB"))
}

fn serialization_round_trips() -> Result<(), String> {
    let sig = random_signal(257, 11);
    let mut buf = Vec::new();
    sig.write_to(&mut buf).map_err(|e| e.to_string())?;
    let back = ComplexSignal::read_from(&mut buf.as_slice()).map_err(|e| e.to_string())?;
    check(back == sig, "CSIG round trip mismatch".into())?;

    let s = GmpStructure::new(5, 1, 3).unwrap();
    let model = random_model(s, 12, 2.0);
    let back = GmpModel::from_text(&model.to_text()).map_err(|e| e.to_string())?;
    check(back == model, "model text round trip mismatch".into())
}

fn deterministic_metrics() -> Result<(), String> {
    let carrier = small_carrier_config();
    let structure = GmpStructure::new(7, 1, 2).unwrap();
    let nominal = default_nominal_pa(structure, 0.0).map_err(|e| e.to_string())?;
    let bank =
        synthesize_bank(&nominal, &DispersionSpec::default(), 2).map_err(|e| e.to_string())?;
    let scenario = Scenario {
        carrier,
        bank,
        weights: BeamWeights::random_phases(2, 13).unwrap(),
        observation: ObservationConfig {
            noise_snr_db: 45.0,
            seed: 14,
        },
        dpd: DpdConfig {
            structure,
            ila_iterations: 1,
            block_samples: 1200,
            regularization: 0.0,
        },
        aclr: arraydpd::metrics::AclrSpec::for_carrier(&small_carrier_config(), 13e6),
        seed: 15,
    };
    let a = scenario
        .evaluate_point(0.0, DpdMode::Gmp)
        .map_err(|e| e.to_string())?;
    let b = scenario
        .evaluate_point(0.0, DpdMode::Gmp)
        .map_err(|e| e.to_string())?;
    check(
        a.aclr_db.to_bits() == b.aclr_db.to_bits()
            && a.evm_percent.to_bits() == b.evm_percent.to_bits(),
        format!(
            "metrics differ across identical runs: {} vs {}",
            a.aclr_db, b.aclr_db
        ),
    )
}

const CHECKS: &[Check] = &[
    ("gmp-oracle-equivalence", gmp_oracle_equivalence),
    ("basis-matches-formula", basis_matches_formula),
    ("array-equivalence", array_equivalence),
    ("ls-recovery-orthogonality", ls_recovery_and_orthogonality),
    ("ila-identity-fixed-point", ila_identity_fixed_point),
    ("evm-self-demodulation", evm_self_demodulation),
    ("psd-parseval", psd_parseval),
    ("serialization-round-trips", serialization_round_trips),
    ("deterministic-metrics", deterministic_metrics),
];

/// Runs every check, printing one PASS/FAIL line each; returns whether all
/// passed.
pub fn run() -> bool {
    let mut all_ok = true;
    for (name, f) in CHECKS {
        match f() {
            Ok(()) => println!("PASS {name}"),
            Err(msg) => {
                all_ok = false;
                println!("FAIL {name}: {msg}");
            }
        }
    }
    all_ok
}
