//! Command-line front end: flag parsing, JSON configs, record emission.

pub mod config;
pub mod output;
pub mod run;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::divergence::PerceptionMetric;
use crate::error::{RdpError, Result};
use config::{CommandKind, OutputFormat, RunConfig, SourceSpec, DEFAULT_EPS, DEFAULT_MAX_ITERS};

#[derive(Debug, Parser)]
#[command(name = "gaussrdp", version, about = "Rate-distortion-perception functions of Gaussian sources")]
pub struct Cli {
    /// JSON run configuration (replaces the subcommand).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
    /// Records file (default: stdout, or $GAUSSRDP_OUTPUT_DIR/<command>.<ext>).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Eigenvalues of a diagonal source covariance.
    #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
    pub eigs: Option<Vec<f64>>,
    /// JSON source descriptor file.
    #[arg(long, conflicts_with = "eigs")]
    pub source: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
    /// Lower bound on s2 for KL and GJS.
    #[arg(long)]
    pub s2_min: Option<f64>,
    /// Per-iteration trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form scalar RDPF at one (D, P) point.
    Scalar {
        #[arg(long)]
        metric: PerceptionMetric,
        #[arg(long)]
        var: f64,
        #[arg(long)]
        dist: f64,
        #[arg(long)]
        perc: f64,
        /// Monte Carlo check of the realization (0 disables it).
        #[arg(long, default_value_t = 0)]
        mc_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Alternating minimization at one multiplier pair.
    Multivar {
        #[arg(long)]
        metric: PerceptionMetric,
        #[command(flatten)]
        src: SourceArgs,
        #[arg(long)]
        s1: f64,
        #[arg(long)]
        s2: f64,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Alternating minimization over an s1 x s2 grid.
    Sweep {
        #[arg(long)]
        metric: PerceptionMetric,
        #[command(flatten)]
        src: SourceArgs,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        s1_grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        s2_grid: Vec<f64>,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Closed-form allocation at zero perception.
    PerfectRealism {
        #[command(flatten)]
        src: SourceArgs,
        #[arg(long)]
        s1: f64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Classical reverse water-filling.
    Waterfill {
        #[command(flatten)]
        src: SourceArgs,
        #[arg(long)]
        s1: f64,
        #[command(flatten)]
        out: OutputArgs,
    },
    /// Recomputes the rate of every record in a file.
    Verify {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        out: OutputArgs,
    },
}

fn apply_source(cfg: &mut RunConfig, src: SourceArgs) {
    cfg.eigs = src.eigs;
    cfg.source = src.source.map(SourceSpec::Path);
}

fn apply_solver(cfg: &mut RunConfig, s: SolverArgs) {
    cfg.eps = s.eps;
    cfg.max_iters = s.max_iters;
    cfg.s2_min = s.s2_min;
    cfg.trace = s.trace;
}

fn apply_output(cfg: &mut RunConfig, out: OutputArgs) {
    cfg.format = out.format;
    cfg.output = out.output;
}

fn closed_form(kind: CommandKind, src: SourceArgs, s1: f64, out: OutputArgs) -> RunConfig {
    let mut c = RunConfig::new(kind);
    c.s1 = Some(s1);
    apply_source(&mut c, src);
    apply_output(&mut c, out);
    c
}

impl Command {
    pub fn into_config(self) -> RunConfig {
        match self {
            Command::Scalar { metric, var, dist, perc, mc_samples, seed, out } => {
                let mut c = RunConfig::new(CommandKind::Scalar);
                c.metric = Some(metric);
                c.var = Some(var);
                c.dist = Some(dist);
                c.perc = Some(perc);
                c.mc_samples = mc_samples;
                c.seed = seed;
                apply_output(&mut c, out);
                c
            }
            Command::Multivar { metric, src, s1, s2, solver, out } => {
                let mut c = RunConfig::new(CommandKind::Multivar);
                c.metric = Some(metric);
                c.s1 = Some(s1);
                c.s2 = Some(s2);
                apply_source(&mut c, src);
                apply_solver(&mut c, solver);
                apply_output(&mut c, out);
                c
            }
            Command::Sweep { metric, src, s1_grid, s2_grid, solver, out } => {
                let mut c = RunConfig::new(CommandKind::Sweep);
                c.metric = Some(metric);
                c.s1_grid = Some(s1_grid);
                c.s2_grid = Some(s2_grid);
                apply_source(&mut c, src);
                apply_solver(&mut c, solver);
                apply_output(&mut c, out);
                c
            }
            Command::PerfectRealism { src, s1, out } => closed_form(CommandKind::PerfectRealism, src, s1, out),
            Command::Waterfill { src, s1, out } => closed_form(CommandKind::Waterfill, src, s1, out),
            Command::Verify { input, out } => {
                let mut c = RunConfig::new(CommandKind::Verify);
                c.input = Some(input);
                apply_output(&mut c, out);
                c
            }
        }
    }
}

/// Resolves parsed arguments into a run configuration.
pub fn resolve(cli: Cli) -> Result<RunConfig> {
    match (cli.config, cli.command) {
        (Some(_), Some(_)) => Err(RdpError::Config("give either a subcommand or --config, not both".into())),
        (Some(path), None) => RunConfig::from_file(&path),
        (None, Some(cmd)) => Ok(cmd.into_config()),
        (None, None) => Err(RdpError::Config("a subcommand or --config is required".into())),
    }
}

/// Parses `args`, runs, and returns the process exit code.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return run::EXIT_OK;
            }
            let err = RdpError::Config(e.to_string().trim().to_string());
            eprintln!("{}", run::error_json(&err));
            return run::EXIT_CONFIG;
        }
    };
    match resolve(cli).and_then(|cfg| run::execute(&cfg)) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("{}", run::error_json(&err));
            run::exit_code_for(&err)
        }
    }
}

pub fn main_entry() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    run_with_args(std::env::args_os())
}
