//! `stoch-lyap`: second-moment stability analysis and state-feedback
//! synthesis for linear systems with i.i.d. random coefficients.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stoch_lyap::Error;

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (report schema stoch-lyap/report/v1, moments schema stoch-lyap/second-moments/v1)"
);

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    /// Completed, but the system is not stable / not stabilizable.
    #[error("{0}")]
    Negative(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::NotStabilizable { .. }) | CliError::Negative(_) => 2,
            CliError::Core(Error::VerificationMismatch { .. }) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "stoch-lyap", version = VERSION, about = "Mean-square stability analysis and state-feedback synthesis for systems with i.i.d. random coefficients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct MomentArgs {
    /// analytic | mc:N | mc:N:seed (sampled-data models require mc)
    #[arg(long)]
    moments: Option<String>,
    /// Reuse second moments from this file when its fingerprint matches
    #[arg(long)]
    moments_cache: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Minimal decay rate and Lyapunov certificate
    Analyze {
        model: PathBuf,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[command(flatten)]
        moments: MomentArgs,
        /// Certify at this rate instead of just above the minimum
        #[arg(long)]
        lambda: Option<f64>,
        /// Also bisect on the analysis LMI and report its rate
        #[arg(long)]
        lmi_cross_check: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// State-feedback gain minimizing the certified decay rate
    Synthesize {
        model: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// ref | projection | sdpa-export:<path>
        #[arg(long, default_value = "ref")]
        backend: String,
        /// Strictness margin (default 1e-6 (1 + ‖G2‖))
        #[arg(long)]
        margin: Option<f64>,
        #[command(flatten)]
        moments: MomentArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo estimate of sqrt(E‖x_k‖²)
    Simulate {
        model: PathBuf,
        /// Comma-separated initial state
        #[arg(long)]
        x0: String,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 100)]
        kmax: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Feedback gain (nested rows, {"gain": ...} or a synthesize report)
        #[arg(long)]
        gain: Option<PathBuf>,
        /// Decay-rate window k1,k2
        #[arg(long, default_value = "50,100")]
        window: String,
        /// Run single-threaded
        #[arg(long)]
        serial: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Zero-order-hold discretization of a plant at one interval
    Discretize {
        plant: PathBuf,
        #[arg(long)]
        h: f64,
    },
    /// Write the synthesis LMI at a given rate in SDPA sparse format
    ExportSdpa {
        model: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        margin: Option<f64>,
        #[command(flatten)]
        moments: MomentArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Three-state polynomial example: minimal rate and empirical decay
    ReproExample1 {
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Sampled-data example: synthesis, reported-gain check and intersample ensemble
    ReproExample2 {
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, default_value_t = 100)]
        paths: usize,
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("STOCH_LYAP_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Usage(format!("STOCH_LYAP_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CliError::Usage("STOCH_LYAP_THREADS must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Analyze {
            model,
            tol,
            moments,
            lambda,
            lmi_cross_check,
            out,
        } => commands::analyze(&model, tol, &moments, lambda, lmi_cross_check, out.as_deref()),
        Command::Synthesize {
            model,
            tol,
            backend,
            margin,
            moments,
            out,
        } => commands::synthesize(&model, tol, &backend, margin, &moments, out.as_deref()),
        Command::Simulate {
            model,
            x0,
            paths,
            kmax,
            seed,
            gain,
            window,
            serial,
            out,
        } => commands::simulate(&model, &x0, paths, kmax, seed, gain.as_deref(), &window, serial, &out),
        Command::Discretize { plant, h } => commands::discretize(&plant, h),
        Command::ExportSdpa {
            model,
            lambda,
            margin,
            moments,
            out,
        } => commands::export_sdpa(&model, lambda, margin, &moments, &out),
        Command::ReproExample1 { tol, paths, seed, out_dir } => commands::repro_example1(tol, paths, seed, &out_dir),
        Command::ReproExample2 {
            samples,
            seed,
            tol,
            paths,
            t_end,
            dt,
            out_dir,
        } => commands::repro_example2(samples, seed, tol, paths, t_end, dt, &out_dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // exit status 2 is reserved for negative answers, so clap's usage code is remapped
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stoch-lyap: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
