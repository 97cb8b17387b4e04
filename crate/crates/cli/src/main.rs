//! `needlet`: simulate cosmic-ray catalogs, calibrate null tables, test
//! catalogs for isotropy and run power studies.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use needlet_core::coverage::CoverageModel;
use needlet_core::isotropy::TieRule;
use needlet_core::sphere::FrameOfReference;

use crate::config::{CalibrateConfig, PowerConfig, RunSpec, SimulateConfig, TestConfig};
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "needlet", version, about = "Needlet-based isotropy tests for cosmic-ray arrival directions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a catalog from an alternative hypothesis.
    Simulate(SimulateArgs),
    /// Build Monte-Carlo null tables.
    Calibrate(CalibrateArgs),
    /// Test a catalog against calibrated tables (JSON report).
    Test(TestArgs),
    /// Estimate power under an alternative (CSV).
    Power(StudyArgs),
    /// Power as a function of the level (CSV).
    Roc(StudyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Frame {
    Galactic,
    Equatorial,
}

impl From<Frame> for FrameOfReference {
    fn from(f: Frame) -> Self {
        match f {
            Frame::Galactic => FrameOfReference::Galactic,
            Frame::Equatorial => FrameOfReference::Equatorial,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Every table the `test` report uses.
    TestGrid,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML or JSON simulation config.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    source_seed: Option<u64>,
    /// Frame of the written catalog.
    #[arg(long, value_enum)]
    frame: Option<Frame>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Sample sizes (comma separated).
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// `uniform` or `auger`.
    #[arg(long, value_parser = config::coverage_flag)]
    coverage: Option<CoverageModel>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Also write tables as CSV.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Frame of a catalog without a `# frame=` header.
    #[arg(long, value_enum)]
    frame: Option<Frame>,
    /// Directory of calibration tables.
    #[arg(long)]
    tables: Option<PathBuf>,
    /// Break ties between the statistic and the table at random.
    #[arg(long)]
    randomized_ties: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    /// TOML or JSON study config.
    #[arg(long)]
    config: PathBuf,
    /// Replaces the configured runs by one run of this size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    source_seed: Option<u64>,
    #[arg(long)]
    tables: Option<PathBuf>,
    /// Levels (comma separated).
    #[arg(long, value_delimiter = ',')]
    alpha: Vec<f64>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mut cfg: SimulateConfig = config::load(&a.config)?;
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if a.seed.is_some() {
        cfg.seed = a.seed;
    }
    if let Some(s) = a.source_seed {
        cfg.simulation.source_seed = s;
    }
    if let Some(f) = a.frame {
        cfg.frame = f.into();
    }
    if a.output.is_some() {
        cfg.output = a.output;
    }
    commands::simulate(cfg)
}

fn calibrate(a: CalibrateArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => config::load(p)?,
        None => CalibrateConfig {
            methods: Vec::new(),
            n: Vec::new(),
            coverage: CoverageModel::Uniform,
            replicates: 1000,
            seed: None,
            frame: Default::default(),
            output_dir: a.output_dir.clone().ok_or_else(|| {
                CliError::Config("pass --output-dir (or a --config with output_dir)".into())
            })?,
            csv: false,
        },
    };
    if let Some(Preset::TestGrid) = a.preset {
        cfg.methods = config::test_grid_methods();
    }
    if !a.n.is_empty() {
        cfg.n = a.n;
    }
    if let Some(c) = a.coverage {
        cfg.coverage = c;
    }
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if a.seed.is_some() {
        cfg.seed = a.seed;
    }
    if let Some(d) = a.output_dir {
        cfg.output_dir = d;
    }
    cfg.csv |= a.csv;
    commands::calibrate(cfg)
}

fn test(a: TestArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => config::load(p)?,
        None => TestConfig {
            catalog: a
                .catalog
                .clone()
                .ok_or_else(|| CliError::Config("pass --catalog".into()))?,
            catalog_frame: None,
            tables: a
                .tables
                .clone()
                .ok_or_else(|| CliError::Config("pass --tables".into()))?,
            tie: TieRule::Conservative,
            seed: None,
            output: None,
        },
    };
    if let Some(c) = a.catalog {
        cfg.catalog = c;
    }
    if let Some(f) = a.frame {
        cfg.catalog_frame = Some(f.into());
    }
    if let Some(t) = a.tables {
        cfg.tables = t;
    }
    if a.randomized_ties {
        cfg.tie = TieRule::Randomized;
    }
    if a.seed.is_some() {
        cfg.seed = a.seed;
    }
    if a.output.is_some() {
        cfg.output = a.output;
    }
    commands::test(cfg)
}

fn study_config(a: StudyArgs) -> Result<PowerConfig, CliError> {
    let mut cfg: PowerConfig = config::load(&a.config)?;
    if let Some(n) = a.n {
        cfg.runs = vec![RunSpec { n, delta: None }];
    }
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if a.seed.is_some() {
        cfg.seed = a.seed;
    }
    if let Some(s) = a.source_seed {
        cfg.simulation.source_seed = s;
    }
    if let Some(t) = a.tables {
        cfg.tables = t;
    }
    if !a.alpha.is_empty() {
        cfg.alpha = a.alpha;
    }
    if a.output.is_some() {
        cfg.output = a.output;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Test(a) => test(a),
        Command::Power(a) => study_config(a).and_then(commands::power),
        Command::Roc(a) => study_config(a).and_then(commands::roc),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
