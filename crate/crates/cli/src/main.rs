//! `kerr-coupler`: steady states, linearised spectra, entanglement measures and
//! positive-P ensembles for a pair of evanescently coupled Kerr cavities.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{resolve, Extra, GridArgs, Measure, OutputArgs, ParamArgs, SdeArgs, Sweep};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("steady-state solver did not converge: {0}")]
    NoConvergence(String),
    #[error("{0}")]
    Linearization(String),
    #[error("stochastic integration diverged: {0}")]
    Divergence(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::NoConvergence(_) => 3,
            CliError::Linearization(_) => 4,
            CliError::Divergence(_) => 5,
            CliError::Io(_) | CliError::Failed(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "kerr-coupler",
    version,
    about,
    after_help = "Environment:\n  KERR_COUPLER_THREADS  worker threads (results do not depend on it)\n\n\
Exit status:\n  0 ok, 1 i/o or internal failure, 2 invalid input, 3 steady solver did not converge,\n  \
4 linearisation invalid (use `sde`), 5 too many diverged SDE trajectories"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classical steady states, their stability and the bistable window
    Steady {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Sweep |eps|^2 as START:END:POINTS and tabulate the roots
        #[arg(long)]
        sweep_eps2: Option<Sweep>,
    },
    /// Drift-matrix eigenvalues about one classical root
    Stability {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Linearised output spectra and entanglement measures
    Spectrum {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Quadrature angle in degrees
        #[arg(long, allow_hyphen_values = true)]
        theta: Option<f64>,
        /// Choose the angle minimising the Duan sum over the grid
        #[arg(long)]
        optimize_theta: bool,
        /// Duan weight b
        #[arg(long, allow_hyphen_values = true)]
        b: Option<f64>,
        #[arg(long, value_enum)]
        measure: Option<Measure>,
    },
    /// Minimum Duan sum over frequency for each integer angle
    ScanTheta {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Positive-P stochastic ensemble (means, or spectra with --theta)
    Sde {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        sde: SdeArgs,
        #[command(flatten)]
        grid: GridArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Quadrature angle in degrees; enables the spectrum estimate
        #[arg(long, allow_hyphen_values = true)]
        theta: Option<f64>,
        /// Analysis frequencies (comma separated); overrides the grid
        #[arg(long, value_delimiter = ',')]
        omega: Option<Vec<f64>>,
        #[arg(long, allow_hyphen_values = true)]
        b: Option<f64>,
        /// Also write one trajectory's samples to this CSV
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        dump_index: usize,
    },
    /// Re-run the operation recorded in a manifest
    Replay {
        manifest: PathBuf,
        /// Where to write the new results (default: print a table)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Steady {
            params,
            output,
            sweep_eps2,
        } => {
            let s = resolve(
                &params,
                Extra {
                    output: Some(&output),
                    sweep_eps2,
                    ..Default::default()
                },
            )?;
            commands::execute("steady", &s)
        }
        Command::Stability { params, output } => {
            let s = resolve(
                &params,
                Extra {
                    output: Some(&output),
                    ..Default::default()
                },
            )?;
            commands::execute("stability", &s)
        }
        Command::Spectrum {
            params,
            grid,
            output,
            theta,
            optimize_theta,
            b,
            measure,
        } => {
            let s = resolve(
                &params,
                Extra {
                    grid: Some(&grid),
                    output: Some(&output),
                    theta,
                    optimize_theta,
                    b,
                    measure,
                    ..Default::default()
                },
            )?;
            commands::execute("spectrum", &s)
        }
        Command::ScanTheta {
            params,
            grid,
            output,
        } => {
            let s = resolve(
                &params,
                Extra {
                    grid: Some(&grid),
                    output: Some(&output),
                    ..Default::default()
                },
            )?;
            commands::execute("scan-theta", &s)
        }
        Command::Sde {
            params,
            sde,
            grid,
            output,
            theta,
            omega,
            b,
            dump,
            dump_index,
        } => {
            let s = resolve(
                &params,
                Extra {
                    grid: Some(&grid),
                    output: Some(&output),
                    sde: Some(&sde),
                    theta,
                    b,
                    omega,
                    default_format: Some(config::Format::Json),
                    ..Default::default()
                },
            )?;
            if let Some(path) = dump {
                commands::dump(&s, dump_index, &path)?;
            }
            commands::execute("sde", &s)
        }
        Command::Replay { manifest, out } => {
            let m = output::read_manifest(&manifest)?;
            if m.tool != output::TOOL {
                return Err(CliError::Invalid(format!(
                    "manifest was written by {:?}",
                    m.tool
                )));
            }
            if m.version != env!("CARGO_PKG_VERSION") {
                eprintln!(
                    "warning: manifest from version {}, running {}",
                    m.version,
                    env!("CARGO_PKG_VERSION")
                );
            }
            let mut settings = m.settings;
            settings.out = out;
            commands::execute(&m.operation, &settings)
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(text) = std::env::var("KERR_COUPLER_THREADS") else {
        return Ok(());
    };
    let n: usize = text
        .trim()
        .parse()
        .map_err(|_| CliError::Invalid(format!("KERR_COUPLER_THREADS={text:?} is not a count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Failed(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
