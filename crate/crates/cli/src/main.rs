//! `radioslam`: runs sensing and SLAM scenarios and writes CSV/JSON reports.

mod commands;
mod config;
mod output;
mod presets;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::Overrides;
use config::ScenarioConfig;
use output::Artifacts;

/// Environment variable holding the worker thread count.
const WORKERS_VAR: &str = "RADIOSLAM_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "radioslam", version, about = "mmWave OFDM sensing and radio SLAM scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Scenario file, or a built-in preset name.
    #[arg(long, global = true, default_value = "table2-prototype")]
    config: PathBuf,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default: the scenario's `out`, else `radioslam-out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Skip pose graph optimization.
    #[arg(long, global = true)]
    no_pgo: bool,

    #[arg(long, global = true, allow_hyphen_values = true)]
    snr_db: Option<f64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Single-plate ranging errors with and without bisection refinement.
    RangeTable,
    /// Matched-filter sidelobe study and the two-target margin.
    MfStudy,
    /// Hardware-delay calibration.
    Calibrate,
    /// Scan simulation along the trajectory followed by SLAM.
    Slam,
    /// Scan and heatmap of one pose.
    Scan,
}

fn init_workers() -> Result<()> {
    let Ok(v) = std::env::var(WORKERS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .with_context(|| format!("{WORKERS_VAR}={v:?} is not a thread count"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_workers()?;
    let mut cfg = ScenarioConfig::load(&cli.config)?;
    Overrides {
        seed: cli.seed,
        snr_db: cli.snr_db,
        no_pgo: cli.no_pgo,
    }
    .apply(&mut cfg);
    cfg.validate()?;
    let dir = cli
        .out
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from("radioslam-out"));
    let out = Artifacts::create(&dir)?;
    match cli.command {
        Command::RangeTable => commands::cmd_range_table(&cfg, &out),
        Command::MfStudy => commands::cmd_mf_study(&cfg, &out),
        Command::Calibrate => commands::cmd_calibrate(&cfg, &out),
        Command::Slam => commands::cmd_slam(&cfg, &out),
        Command::Scan => commands::cmd_scan(&cfg, &out),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
