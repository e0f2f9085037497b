//! File-driven command line: every command reads one JSON config and writes
//! its results into one output directory.

mod commands;
pub mod config;
pub mod report;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
pub use commands::{Outcome, Plan};
pub use config::RunConfig;
pub use report::SolutionReport;

#[derive(Debug, Parser)]
#[command(name = "gcmc-ata", version, about = "Test assembly by grand canonical Monte Carlo")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for the parallel parts.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate a synthetic item bank.
    GenBank(CommonArgs),
    /// Count the density of tests, exactly or by uniform sampling.
    CountDensity(CommonArgs),
    /// Derive (T, mu) from a density histogram at a chosen point.
    Calibrate(CommonArgs),
    /// Run the sampler and write the solutions it finds.
    Assemble(CommonArgs),
    /// Anneal at mu = 0 and report the optimal test length.
    FindOptimalN(CommonArgs),
    /// Anneal over a list of item potentials.
    SweepMu(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenBank(_) => "gen-bank",
            Command::CountDensity(_) => "count-density",
            Command::Calibrate(_) => "calibrate",
            Command::Assemble(_) => "assemble",
            Command::FindOptimalN(_) => "find-optimal-n",
            Command::SweepMu(_) => "sweep-mu",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::GenBank(a)
            | Command::CountDensity(a)
            | Command::Calibrate(a)
            | Command::Assemble(a)
            | Command::FindOptimalN(a)
            | Command::SweepMu(a) => a,
        }
    }
}

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success = 0,
    Failure = 1,
    ConfigError = 2,
    Unreachable = 3,
    OracleCapacity = 4,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }

    fn for_setup(e: &Error) -> Self {
        match e {
            Error::OracleCapacity { .. } => ExitStatus::OracleCapacity,
            _ => ExitStatus::ConfigError,
        }
    }

    fn for_run(e: &Error) -> Self {
        match e {
            Error::OracleCapacity { .. } => ExitStatus::OracleCapacity,
            Error::GoalUnreachable { .. } => ExitStatus::Unreachable,
            _ => ExitStatus::Failure,
        }
    }
}

/// Everything a command needs once the config has been checked.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub command: &'static str,
    pub config: RunConfig,
    pub config_text: String,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl RunContext {
    pub fn new(command: &Command) -> Result<Self, Error> {
        let args = command.args();
        let (config, config_text) = RunConfig::load(&args.config)?;
        let seed = args
            .seed
            .or(config.seed)
            .ok_or_else(|| Error::InvalidArgument("no seed: set `seed` in the config or pass --seed".into()))?;
        let out_dir = args
            .out
            .clone()
            .or_else(|| config.output_dir.clone())
            .ok_or_else(|| Error::InvalidArgument("no output directory: set `output_dir` or pass --out".into()))?;
        if args.threads == Some(0) {
            return Err(Error::InvalidArgument("--threads must be >= 1".into()));
        }
        Ok(RunContext {
            command: command.name(),
            config,
            config_text,
            out_dir,
            seed,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn write_run_log(path: &Path, lines: &[(String, String)]) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    for (k, v) in lines {
        writeln!(f, "{k}: {v}")?;
    }
    Ok(())
}

/// Runs one command and returns its exit status. Config problems are
/// reported before anything is written.
pub fn run(command: &Command) -> ExitStatus {
    let started = SystemTime::now();
    let clock = Instant::now();
    let ctx = match RunContext::new(command) {
        Ok(c) => c,
        Err(e) => {
            log::error!("{e}");
            return ExitStatus::for_setup(&e);
        }
    };
    let pool = match command.args().threads {
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            log::error!("thread pool: {e}");
            return ExitStatus::Failure;
        }
    };
    let (status, started_output) = pool.install(|| {
        let plan = match Plan::prepare(command, &ctx) {
            Ok(p) => p,
            Err(e) => {
                log::error!("{e}");
                return (ExitStatus::for_setup(&e), false);
            }
        };
        let setup = std::fs::create_dir_all(&ctx.out_dir)
            .and_then(|_| std::fs::write(ctx.path("config.json"), &ctx.config_text));
        if let Err(e) = setup {
            log::error!("{}: {e}", ctx.out_dir.display());
            return (ExitStatus::Failure, false);
        }
        let status = match plan.execute(&ctx) {
            Ok(Outcome { status, summary }) => {
                println!("{summary}");
                status
            }
            Err(e) => {
                log::error!("{e}");
                ExitStatus::for_run(&e)
            }
        };
        (status, true)
    });
    if started_output {
        let since_epoch = started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let lines = vec![
            ("command".to_string(), ctx.command.to_string()),
            ("seed".to_string(), ctx.seed.to_string()),
            ("threads".to_string(), pool.current_num_threads().to_string()),
            ("started_unix".to_string(), since_epoch.to_string()),
            ("wall_seconds".to_string(), format!("{:.3}", clock.elapsed().as_secs_f64())),
            ("exit_code".to_string(), status.code().to_string()),
        ];
        if let Err(e) = write_run_log(&ctx.path("run.log"), &lines) {
            log::warn!("run.log: {e}");
        }
    }
    status
}
