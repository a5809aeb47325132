use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use cosrod::config::{ScenarioConfig, DEFAULT_CONFIG};
use cosrod::driver::{simulate, RunStatus};
use cosrod::export::export;
use cosrod::Error;

const EXIT_DEGRADED: u8 = 2;
const EXIT_INTEGRATION: u8 = 3;
const EXIT_CONFIG: u8 = 64;

/// Run a closed-loop rod tracking scenario and export its time series.
#[derive(Debug, Parser)]
#[command(name = "cosrod", version)]
struct Cli {
    /// Scenario file (flat dotted TOML keys). Defaults to the built-in reference scenario.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Directory for timeseries.csv, plot.csv and snapshots/.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,

    /// Simulated time in seconds; overrides run.duration.
    #[arg(long)]
    duration: Option<f64>,

    /// KEY=VALUE override, applied after the config file. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Only report errors.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { tracing::Level::ERROR } else { tracing::Level::INFO };
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();

    let mut overrides = cli.overrides.clone();
    if let Some(d) = cli.duration {
        overrides.push(format!("run.duration={d}"));
    }
    let cfg = match &cli.config {
        Some(path) => ScenarioConfig::load(path, &overrides),
        None => ScenarioConfig::parse(DEFAULT_CONFIG, &overrides),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };

    let outcome = match simulate(&cfg) {
        Ok(o) => o,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INTEGRATION);
        }
    };
    if let Err(e) = export(&outcome.record, &cli.out_dir, cfg.export.plot_bundle) {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }

    let rec = &outcome.record;
    if let Some(last) = rec.rows.last() {
        tracing::info!(
            t = last.norms.t,
            p_err = last.norms.p_err_l2,
            p_err_t = last.norms.p_err_t_l2,
            theta_err = last.norms.theta_err_linf,
            degraded_steps = rec.degraded_steps,
            "finished"
        );
    }
    match outcome.status {
        RunStatus::Clean => ExitCode::SUCCESS,
        RunStatus::Degraded => {
            tracing::warn!(steps = rec.degraded_steps, "outer solve did not converge on some steps");
            ExitCode::from(EXIT_DEGRADED)
        }
        RunStatus::IntegrationFailure => {
            eprintln!("error: {}", rec.failure.as_deref().unwrap_or("integration failure"));
            ExitCode::from(EXIT_INTEGRATION)
        }
    }
}
