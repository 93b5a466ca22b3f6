use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sobolev_lab::cli::{self, Overrides, EXIT_USAGE};
use sobolev_lab::config::{Command, Format};

#[derive(Parser)]
#[command(
    name = "lab",
    version,
    about = "Distortion, capacity and verification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand)]
enum Sub {
    /// Distortion functionals and Ball-class verdict of a mapping.
    Distortion,
    /// Variational p-capacity of a condenser.
    Capacity,
    /// Identities and inequalities for a mapping.
    Verify,
    /// Every config listed in a manifest.
    Suite {
        /// Manifest file; `--config` works as well.
        manifest: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Args)]
struct Flags {
    /// Experiment config (JSON) or suite manifest.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Report path; overrides the config's `output`.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    /// Grid resolution for every domain.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Tolerance for every verdict.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Concurrent experiments in a suite.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Also solve with plates dilated and eroded by one cell width.
    #[arg(long, global = true)]
    bracket: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LAB_LOG", "warn")).init();
    let args = match Cli::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let f = &args.flags;
    if let Some(t) = f.tol {
        if !(t.is_finite() && t >= 0.0) {
            eprintln!("error: invalid `--tol`: must be a non-negative number");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    }
    if matches!(f.grid, Some(0)) || matches!(f.jobs, Some(0)) {
        eprintln!("error: `--grid` and `--jobs` must be positive");
        return ExitCode::from(EXIT_USAGE as u8);
    }
    let ov = Overrides {
        output: f.output.clone(),
        format: f.format.map(|f| match f {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        }),
        grid: f.grid,
        tol: f.tol,
        bracket: f.bracket,
        ..Overrides::default()
    };
    let command = match &args.command {
        Sub::Distortion => Command::Distortion,
        Sub::Capacity => Command::Capacity,
        Sub::Verify => Command::Verify,
        Sub::Suite { manifest } => {
            let Some(path) = manifest.clone().or_else(|| f.config.clone()) else {
                eprintln!("error: invalid `manifest`: a manifest path is required");
                return ExitCode::from(EXIT_USAGE as u8);
            };
            return ExitCode::from(cli::run_suite(&path, &ov, f.jobs) as u8);
        }
    };
    let Some(path) = f.config.clone() else {
        eprintln!("error: invalid `--config`: a config path is required");
        return ExitCode::from(EXIT_USAGE as u8);
    };
    ExitCode::from(cli::run(&path, command, &ov) as u8)
}
