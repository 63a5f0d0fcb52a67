//! `tpdv`: runs one quadratic, flow or Darcy experiment and writes its CSV files.
//!
//! Exit status is 0 when every requested run converged, 2 on an invalid
//! configuration and 1 otherwise.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use tpdv_core::bench::{report, run, ProblemKind, RunConfig, OUTPUT_DIR_ENV};
use tpdv_core::darcy::Variant;
use tpdv_core::error::Error;
use tpdv_core::tpdv::ParamMode;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Problem {
    Quadratic,
    Darcy,
    Flow,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Algo {
    Tpdv,
    TpdvImex,
    Uzawa,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Params {
    Practical,
    Theoretical,
}

#[derive(Debug, Parser)]
#[command(name = "tpdv", version, about = "Transformed primal-dual experiments")]
struct Cli {
    #[arg(long, value_enum, default_value = "quadratic")]
    problem: Problem,
    #[arg(long, value_enum, default_value = "tpdv")]
    algo: Algo,
    /// Defaults to theoretical for quadratic problems and practical otherwise.
    #[arg(long, value_enum)]
    param_mode: Option<Params>,
    /// Darcy mesh subdivisions per side, comma separated; h = 2/n.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    n: Vec<usize>,
    /// Primal dimension of the quadratic problem.
    #[arg(long, default_value_t = 10)]
    dim: usize,
    /// Number of constraints of the quadratic problem.
    #[arg(long, default_value_t = 4)]
    mdim: usize,
    /// Condition number of the quadratic Hessian.
    #[arg(long, default_value_t = 4.0)]
    cond: f64,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Relative residual reduction that counts as converged.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long)]
    max_iter: Option<usize>,
    /// V-cycles per application of the multigrid preconditioner.
    #[arg(long, default_value_t = 1)]
    mg_cycles: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for CSV files.
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    flow_tend: f64,
    #[arg(long, default_value_t = 1e-3)]
    flow_dt: f64,
}

impl Cli {
    fn config(&self) -> RunConfig {
        RunConfig {
            problem: match self.problem {
                Problem::Quadratic => ProblemKind::Quadratic,
                Problem::Darcy => ProblemKind::Darcy,
                Problem::Flow => ProblemKind::Flow,
            },
            algo: match self.algo {
                Algo::Tpdv => Variant::Tpdv,
                Algo::TpdvImex => Variant::TpdvImex,
                Algo::Uzawa => Variant::Uzawa,
            },
            param_mode: self.param_mode.map(|m| match m {
                Params::Practical => ParamMode::Practical,
                Params::Theoretical => ParamMode::Theoretical,
            }),
            n: self.n.clone(),
            dim: self.dim,
            mdim: self.mdim,
            cond: self.cond,
            alpha: self.alpha,
            gamma: self.gamma,
            tol: self.tol,
            max_iter: self.max_iter,
            mg_cycles: self.mg_cycles,
            output: self.output.clone(),
            seed: self.seed,
            flow_tend: self.flow_tend,
            flow_dt: self.flow_dt,
            ..RunConfig::default()
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli.config()) {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            if !summary.records.is_empty() {
                print!("{}", report(&summary.records));
            }
            for path in &summary.artifacts {
                println!("wrote {}", path.display());
            }
            if summary.success() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
