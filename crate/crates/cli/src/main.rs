use arraydpd_cli::{
    load_config, parse_metrics_csv, resolve, run_single, run_sweep_cmd, selftest, CliError,
    CliResult,
};
use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "arraydpd",
    version,
    about = "Single-DPD linearization experiments for active antenna arrays"
)]
struct Args {
    /// Worker threads; the default of 1 keeps runs bit-reproducible by
    /// construction (results are thread-count invariant anyway)
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one linearization experiment and write metrics, PSDs, learning
    /// reports and predistorter coefficients
    Single {
        /// TOML experiment config; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the master seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// Restrict the run to one mode: off, mp or gmp
        #[arg(long)]
        dpd: Option<String>,
    },
    /// Sweep drive levels, retraining the DPD at each point
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in invariant suite
    Selftest,
}

fn run(args: Args) -> CliResult<i32> {
    match args.command {
        Command::Single {
            config,
            seed,
            out,
            dpd,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let only = match dpd {
                Some(s) => Some(s.parse().map_err(CliError::Core)?),
                None => None,
            };
            let resolved = resolve(cfg)?;
            let report = run_single(&resolved, only)?;
            let text = std::fs::read_to_string(&report.metrics_path)?;
            for (mode, evm, aclr) in parse_metrics_csv(&text)? {
                println!("{mode}: EVM = {evm:.3}%, ACLR = {aclr:.2} dBc");
            }
            println!("artifacts written to {}", resolved.output_dir.display());
            Ok(0)
        }
        Command::Sweep { config, seed, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let resolved = resolve(cfg)?;
            let (result, path) = run_sweep_cmd(&resolved)?;
            for row in &result.rows {
                println!(
                    "drive {:+.1} dB [{}]: EVM = {:.3}%, ACLR = {:.2} dBc",
                    row.drive_level_db, row.dpd_mode, row.evm_percent, row.aclr_db
                );
            }
            println!("sweep written to {}", path.display());
            Ok(0)
        }
        Command::Selftest => Ok(if selftest::run() { 0 } else { 1 }),
    }
}

fn main() {
    let args = Args::parse();
    rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build_global()
        .ok();
    match run(args) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            std::process::exit(e.exit_code());
        }
    }
}
