//! `ttbayes` command-line front end.

mod commands;
mod manifest;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};

use manifest::Run;

#[derive(Parser, Debug)]
#[command(name = "ttbayes", version, about = "Bayesian tensor-train approximation")]
pub struct Cli {
    /// Log errors only.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Log JSON lines on stderr.
    #[arg(long, global = true)]
    pub json_logs: bool,
    /// Worker threads for experiment trials (overrides the config).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Directory for outputs and the run manifest.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// TT-SVD of a dense tensor file.
    TtSvd {
        tensor: PathBuf,
        /// Relative error bound in (0, 1].
        #[arg(long, required_unless_present = "ranks", conflicts_with = "ranks")]
        eps: Option<f64>,
        /// Maximal rank chain R_1,...,R_{N+1}.
        #[arg(long, value_delimiter = ',')]
        ranks: Option<Vec<usize>>,
        /// Output train (default: input name with .ttt).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Fits a low-rank model to a dense tensor.
    Decompose {
        tensor: PathBuf,
        #[arg(long, value_enum)]
        alg: Alg,
        /// `flat`, a train file (isotropic prior around its cores) or a model file.
        #[arg(long, default_value = "flat")]
        prior: String,
        /// Noise variance; a model-file prior supplies its own.
        #[arg(long)]
        sigma2: Option<f64>,
        /// TT rank chain, needed with a flat prior.
        #[arg(long, value_delimiter = ',')]
        ranks: Option<Vec<usize>>,
        /// Prior variance; 1e12 for a flat prior and 1 around a train file by default.
        #[arg(long)]
        prior_var: Option<f64>,
        /// Seed of the flat prior's random mean (TTBAYES_SEED overrides).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        sweeps: usize,
        /// Stop when the relative change of eps_meas drops below this.
        #[arg(long, default_value_t = 1e-8)]
        meas_tol: f64,
        /// Stop when every core covariance norm changes less than this.
        #[arg(long)]
        cov_tol: Option<f64>,
        /// Stop when the log-objective changes less than this.
        #[arg(long)]
        objective_tol: Option<f64>,
        /// Output stem (default: input name).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Unscented transform of a TT model's estimate.
    Ut {
        model: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        alpha: f64,
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
        /// Defaults to 3 - M.
        #[arg(long, allow_hyphen_values = true)]
        kappa: Option<f64>,
        #[arg(long, default_value_t = 1e-10)]
        mean_tol: f64,
        #[arg(long, default_value_t = 1e-8)]
        cov_tol: f64,
        /// Output stem (default: input name).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Runs one of the studies from a JSON config.
    Experiment {
        #[arg(value_enum)]
        kind: ExperimentKind,
        config: PathBuf,
    },
    /// Describes a binary file and optionally rewrites it.
    Inspect {
        file: PathBuf,
        #[arg(long)]
        rewrite: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Alg {
    Bayes,
    BayesOrtho,
    Als,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExperimentKind {
    Convergence,
    Covariance,
    Comparison,
    Image,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(ttbayes::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<ttbayes::Error> for CliError {
    fn from(e: ttbayes::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Lib(ttbayes::Error::Numerical(_) | ttbayes::Error::CanonicalForm(_)) => 3,
            CliError::Lib(_) => 2,
        }
    }
}

fn init_logging(quiet: bool, json: bool) {
    let level = if quiet { log::LevelFilter::Error } else { log::LevelFilter::Info };
    let mut b = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level.as_str()));
    if quiet {
        b.filter_level(level);
    }
    if json {
        b.format(|buf, rec| {
            let line = serde_json::json!({
                "level": rec.level().as_str(),
                "target": rec.target(),
                "message": rec.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    b.target(env_logger::Target::Stderr).init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    init_logging(cli.quiet, cli.json_logs);
    let mut run = Run::new(commands::name(&cli.command));
    let result = commands::dispatch(&cli, &mut run);
    match run.finish(&result) {
        Ok(Some(path)) => log::info!("manifest {}", path.display()),
        Ok(None) => {}
        Err(e) => eprintln!("warning: could not write the manifest: {e}"),
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code())
        }
    }
}
