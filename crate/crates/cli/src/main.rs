//! `isac`: runs the figure reproductions and the end-to-end simulation from
//! TOML configs.
//!
//! Exit codes: 0 on success, 1 for invalid configs or arguments, 2 when a
//! run fails after its config was accepted. Outputs are staged next to the
//! destination and moved into place only after a run succeeds.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use isac_core::scenario::{self, ConfigError, CrlbSweepConfig, RangingCdfConfig, SimConfig};
use isac_core::sim::{self, SimError};
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "isac", version, about = "RAN-edge ISAC experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Range and velocity bounds against I/Q export overhead, as CSV.
    CrlbSweep(Io),
    /// Monte Carlo range-error CDFs of peak detection and MUSIC, as CSV.
    RangingCdf {
        #[command(flatten)]
        io: Io,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config trial count.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Multi-site simulation; writes logs and CSVs into the --out directory.
    RunSim {
        #[command(flatten)]
        io: Io,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Args)]
struct Io {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => CliError::Config(c),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("cannot write output: {e}"))
    }
}

fn staging_parent(out: &Path) -> &Path {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Writes `out` atomically: nothing appears at `out` unless `write` succeeds.
fn write_file(out: &Path, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
    let tmp = tempfile::NamedTempFile::new_in(staging_parent(out))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        write(&mut w)?;
        w.flush()?;
    }
    tmp.persist(out).map_err(|e| CliError::from(e.error))?;
    Ok(())
}

fn csv_io(e: impl Into<std::io::Error>) -> std::io::Error {
    e.into()
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::CrlbSweep(io) => {
            let cfg: CrlbSweepConfig = scenario::load(&io.config)?;
            let points = sim::crlb_sweep(&cfg)?;
            write_file(&io.out, |w| isac_core::crlb::write_sweep_csv(&points, w).map_err(csv_io))?;
            Ok(format!("wrote {} sweep points to {}", points.len(), io.out.display()))
        }
        Command::RangingCdf { io, seed, trials } => {
            let mut cfg: RangingCdfConfig = scenario::load(&io.config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = trials {
                cfg.trials = t;
            }
            let table = sim::ranging_cdf(&cfg)?;
            write_file(&io.out, |w| table.write_csv(w).map_err(csv_io))?;
            let summary: Vec<String> = table
                .columns
                .iter()
                .map(|(name, cdf)| format!("{name} F(1 m)={:.3}", cdf.at(1.0)))
                .collect();
            Ok(format!("{} trials; {}", cfg.trials, summary.join(", ")))
        }
        Command::RunSim { io, seed } => {
            let mut cfg: SimConfig = scenario::load(&io.config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = sim::run_sim(&cfg)?;
            let staging = tempfile::TempDir::new_in(staging_parent(&io.out))?;
            outcome.write_dir(staging.path())?;
            publish_dir(staging, &io.out)?;
            let errors = outcome.position_errors_m();
            let last = errors.last().map_or("n/a".to_string(), |e| format!("{e:.3} m"));
            Ok(format!(
                "{} dApps, {} reports, {} track updates, orchestrator actions: {}; final position error {last}",
                outcome.deployment.running(),
                outcome.reports.len(),
                errors.len(),
                outcome.actions.len(),
            ))
        }
    }
}

/// Moves a finished staging directory to `out`. An existing directory at
/// `out` receives the files one by one.
fn publish_dir(staging: tempfile::TempDir, out: &Path) -> std::io::Result<()> {
    if !out.exists() {
        let path = staging.keep();
        return std::fs::rename(&path, out).map_err(|e| {
            let _ = std::fs::remove_dir_all(&path);
            e
        });
    }
    for entry in std::fs::read_dir(staging.path())? {
        let entry = entry?;
        std::fs::rename(entry.path(), out.join(entry.file_name()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
