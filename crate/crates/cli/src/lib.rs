//! `sdr`: fit, select, predict and benchmark random-effects SDR models from
//! the command line.
//!
//! Exit codes: 0 on success, 1 for user errors (bad flags, malformed input),
//! 2 for numerical failures (non-convergence, singular matrices, too many
//! failed benchmark replicates).

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use resdr::rpfc::SigmaModel;
use resdr::SdrError;

pub mod commands;
pub mod ingest;
pub mod output;

#[derive(Debug)]
pub enum CliError {
    User(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<SdrError> for CliError {
    fn from(e: SdrError) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::User(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sdr", version, about = "Random-effects sufficient dimension reduction for clustered data")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitMethod {
    Gpfc,
    Spfc,
    Rpfc,
    Rmir,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SigmaArg {
    Diagonal,
    Isotropic,
    Ar1,
    Exchangeable,
    Unstructured,
}

impl From<SigmaArg> for SigmaModel {
    fn from(s: SigmaArg) -> Self {
        match s {
            SigmaArg::Diagonal => SigmaModel::Diagonal,
            SigmaArg::Isotropic => SigmaModel::Isotropic,
            SigmaArg::Ar1 => SigmaModel::Ar1,
            SigmaArg::Exchangeable => SigmaModel::Exchangeable,
            SigmaArg::Unstructured => SigmaModel::Unstructured,
        }
    }
}

/// Monte-Carlo EM settings shared by the fitting commands.
#[derive(Debug, Clone, Args)]
pub struct McemArgs {
    /// Monte-Carlo samples per E-step.
    #[arg(long, default_value_t = 400)]
    pub mc_samples: usize,
    /// Relative log-likelihood change that ends the EM iterations.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long, value_enum, default_value_t = FitMethod::Rpfc)]
    pub method: FitMethod,
    /// CSV with columns cluster_id,y,x1..xp[,w1..wq].
    #[arg(long)]
    pub input: PathBuf,
    /// Structural dimension.
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    /// Dimension of the binary reduction (RMIR, time-invariant W).
    #[arg(long, default_value_t = 1)]
    pub dprime: usize,
    /// Degree of the polynomial basis f(y).
    #[arg(long, default_value_t = 4)]
    pub degree: usize,
    /// Model for the random-effect covariance.
    #[arg(long, value_enum, default_value_t = SigmaArg::Unstructured)]
    pub sigma: SigmaArg,
    #[command(flatten)]
    pub mcem: McemArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a dataset from a simulation design.
    Simulate {
        /// Design name, e.g. m1-diagonal, m2-ar1, m1-isotropic-0.04, mixed-invariant-diagonal.
        #[arg(long)]
        design: String,
        /// Number of clusters (default 100).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Fit a model and write its report.
    Fit {
        #[command(flatten)]
        args: FitArgs,
        /// Also write projection-diagonal variable importance.
        #[arg(long)]
        importance: bool,
    },
    /// Choose the structural dimension by GAIC, GBIC, SAIC and SBIC.
    SelectDim {
        #[arg(long)]
        input: PathBuf,
        /// Largest candidate dimension.
        #[arg(long, default_value_t = 5)]
        max_d: usize,
        #[arg(long, default_value_t = 4)]
        degree: usize,
        /// Directory for dimsel.json (printed table only when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict cluster subspaces for new clusters from a saved RPFC fit.
    Predict {
        /// fit.json written by `sdr fit --method rpfc`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Fit a model and write only the variable importance.
    Importance {
        #[command(flatten)]
        args: FitArgs,
    },
    /// Run seeded simulation replicates and write summary metrics.
    Benchmark {
        /// Comma-separated design names.
        #[arg(long, value_delimiter = ',', required = true)]
        design: Vec<String>,
        /// Number of clusters for every design.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Comma-separated methods (default: all that apply).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[command(flatten)]
        mcem: McemArgs,
        /// Record wall-clock seconds (makes the CSV run-dependent).
        #[arg(long)]
        timings: bool,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn init_logging() {
    let level = std::env::var("SDR_LOG").unwrap_or_else(|_| "warn".into());
    let _ = env_logger::Builder::new().parse_filters(&level).format_timestamp(None).try_init();
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return 1;
        }
        if rayon::ThreadPoolBuilder::new().num_threads(t).build_global().is_err() {
            log::warn!("thread pool already initialised; --threads ignored");
        }
    }
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
