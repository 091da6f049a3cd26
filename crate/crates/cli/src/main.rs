//! `supervec`: vectorize images, run the path-alignment demos, and check
//! gradients.

mod demo;
mod gradcheck;
mod report;
mod vectorize;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use report::ReportFormat;

/// Process exit statuses. clap itself exits with 2 on bad usage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    CheckFailed = 1,
    Usage = 2,
    Input = 3,
    Output = 4,
    Budget = 5,
    Pipeline = 6,
}

#[derive(Debug)]
pub struct Failure {
    pub status: Status,
    pub error: anyhow::Error,
}

pub type CmdResult = Result<Status, Failure>;

pub trait OrStatus<T> {
    fn or_status(self, status: Status, what: impl FnOnce() -> String) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrStatus<T> for Result<T, E> {
    fn or_status(self, status: Status, what: impl FnOnce() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            status,
            error: e.into().context(what()),
        })
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "supervec",
    version,
    about = "Superpixel-based raster to SVG vectorization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Clone, Debug, Args)]
pub struct Common {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum, default_value_t = ReportFormat::Text)]
    pub report_format: ReportFormat,
    /// Also write the report to this file.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    /// More logging (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert a PNG or JPEG image to SVG.
    Vectorize(vectorize::VectorizeArgs),
    /// Run the local-optimum and averaging experiments, writing snapshots.
    DpwDemo(demo::DemoArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(gradcheck::GradcheckArgs),
}

fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("SUPERVEC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow::anyhow!("SUPERVEC_THREADS must be a positive integer, got {raw:?}"))
        .or_status(Status::Usage, || "reading SUPERVEC_THREADS".into())?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .or_status(Status::Usage, || "configuring the worker pool".into())
}

fn run(cli: Cli) -> CmdResult {
    init_threads()?;
    match cli.command {
        Command::Vectorize(a) => vectorize::run(&a, &cli.common),
        Command::DpwDemo(a) => demo::run(&a, &cli.common),
        Command::Gradcheck(a) => gradcheck::run(&a, &cli.common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(status) => ExitCode::from(status as u8),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.status as u8)
        }
    }
}
