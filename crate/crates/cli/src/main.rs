mod config;
mod error;
mod report;
mod run;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use error::CliError;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Environment variable that overrides the output directory of the config file.
const OUT_ENV: &str = "CONTOUR_SPECTRA_OUT";

#[derive(Parser)]
#[command(name = "contour-spectra", version, about = "Eigenvalues of operator pencils inside a contour")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues and eigenfunctions inside the contour.
    Solve(Common),
    /// Interval, quadrature or rank sweep on the FitzHugh-Nagumo pulse.
    Sweep(Common),
    /// Evans function along the contour and its winding number.
    Evans(Common),
    /// Traveling pulse of the FitzHugh-Nagumo system.
    Pulse(Common),
}

#[derive(Args)]
struct Common {
    /// Config file, or the name of a bundled config (fhn-default, poschl-teller).
    #[arg(long)]
    config: String,
    /// Seed for the random right-hand sides.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; overrides the environment and the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn out_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir))
}

fn write_all(dir: &Path, artifacts: &run::Artifacts) -> Result<(), CliError> {
    let io = |e: std::io::Error, p: &Path| CliError::Io(format!("{}: {e}", p.display()));
    std::fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    for (name, bytes) in &artifacts.files {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| io(e, &p))?;
    }
    let p = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&artifacts.report).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(&p, text).map_err(|e| io(e, &p))
}

fn execute(cli: Cli) -> Result<PathBuf, CliError> {
    let (common, f): (Common, fn(&RunConfig) -> Result<run::Artifacts, CliError>) = match cli.command {
        Command::Solve(c) => (c, run::solve),
        Command::Sweep(c) => (c, run::sweep),
        Command::Evans(c) => (c, run::evans),
        Command::Pulse(c) => (c, run::pulse_cmd),
    };
    let cfg = RunConfig::load(&common.config)?.with_seed(common.seed);
    if let Some(n) = common.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let dir = out_dir(common.out, &cfg);
    let artifacts = f(&cfg)?;
    for w in &artifacts.report.warnings {
        eprintln!("warning: {w}");
    }
    write_all(&dir, &artifacts)?;
    Ok(dir)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(dir) => {
            println!("{}", dir.join("report.json").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("{}", serde_json::json!({ "error": e.class(), "message": e.to_string() }));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
