use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use gsa_core::driver::{self, RunConfig};
use gsa_core::suites;
use gsa_core::viable::NetMode;

#[derive(Parser)]
#[command(name = "gsa", version, about = "Degenerate ground-space approximation for gapped spin chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    oracle: Option<Toggle>,
    #[arg(long, global = true, value_enum)]
    net_mode: Option<NetModeArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the algorithm and write the report.
    Run {
        config: PathBuf,
        /// Per-stage table; defaults to `<out>.stages.csv` when `--out` is set.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the randomized property suites.
    Verify {
        config: PathBuf,
        #[arg(long, default_value_t = 1000)]
        instances: usize,
    },
    /// Export the oracle spectrum.
    Spectrum { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum NetModeArg {
    Exhaustive,
    Candidates,
}

fn load(cli: &Cli, path: &Path) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(t) = cli.oracle {
        cfg.oracle = matches!(t, Toggle::On);
    }
    if let Some(m) = cli.net_mode {
        cfg.viable.net_mode = match m {
            NetModeArg::Exhaustive => NetMode::Exhaustive,
            NetModeArg::Candidates => NetMode::Candidates,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(ok) => {
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: &Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::Run { config, csv } => {
            let cfg = load(cli, config)?;
            let report = driver::run(&cfg)?;
            for w in &report.warnings {
                log::warn!("{w}");
            }
            emit(cli.out.as_deref(), &report.to_json()?)?;
            let csv = csv.clone().or_else(|| cli.out.as_ref().map(|p| p.with_extension("stages.csv")));
            if let Some(p) = csv {
                std::fs::write(p, report.stage_csv())?;
            }
            Ok(true)
        }
        Command::Verify { config, instances } => {
            let cfg = load(cli, config)?;
            let reports = suites::property_suite(*instances, cfg.seed)?;
            for r in &reports {
                log::info!(
                    "{}: {} ({} checks, {} violations, worst slack {:e})",
                    r.name,
                    if r.passed { "pass" } else { "FAIL" },
                    r.checks,
                    r.violations,
                    r.worst_slack
                );
            }
            emit(cli.out.as_deref(), &(serde_json::to_string_pretty(&reports)? + "\n"))?;
            Ok(reports.iter().all(|r| r.passed))
        }
        Command::Spectrum { config } => {
            let cfg = load(cli, config)?;
            let summary = driver::spectrum_report(&cfg)?;
            emit(cli.out.as_deref(), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
            Ok(true)
        }
    }
}
