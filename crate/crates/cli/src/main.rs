//! `hdiv`: overidentification testing for linear IV models with many
//! covariates and instruments.
//!
//! ```text
//! hdiv test --input data.csv --outcome y --treatment d \
//!     --instruments z1,z2,z3 --covariates x1,x2 --out report.json
//! hdiv simulate --config size.json --out results/size
//! ```
//!
//! Exit codes are fixed:
//!
//! | code | meaning                                        |
//! |------|------------------------------------------------|
//! | 0    | completed (whether or not the test rejects)    |
//! | 2    | command-line usage error                       |
//! | 3    | invalid configuration                          |
//! | 4    | unreadable or invalid data                     |
//! | 5    | degenerate instrument column                   |
//! | 6    | numerical solver failure (Lasso or CLIME)      |
//! | 7    | weak instruments, test aborted                 |
//! | 8    | file system error                              |

mod report;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hdiv::data::{load_dataset, standardize, ColumnSpec};
use hdiv::overid::{run_overid_test, TestConfig};
use hdiv::sim::{run_experiment, with_pool, SimConfig};
use hdiv::HdivError;
use serde::{Deserialize, Serialize};

use report::{render_summary, Decisions, ReportDocument, SimulationDocument};

#[derive(Debug, Parser)]
#[command(
    name = "hdiv",
    version,
    about = "Overidentification tests for high-dimensional IV models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the M and PM tests on a CSV file.
    Test(TestArgs),
    /// Run a Monte Carlo experiment described by a JSON config.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct TestArgs {
    /// Flat JSON file with any of the options below; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    treatment: Option<String>,
    /// Comma-separated instrument columns.
    #[arg(long, value_delimiter = ',')]
    instruments: Option<Vec<String>>,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    /// Comma-separated columns exempt from the Lasso penalty.
    #[arg(long, value_delimiter = ',')]
    unpenalized: Option<Vec<String>>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of multiplier draws for the critical value.
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Constant in the CLIME tuning value `c * sqrt(ln p / n)`.
    #[arg(long = "c-omega")]
    c_omega: Option<f64>,
    /// Use the columns as given instead of centering and scaling them.
    #[arg(long = "no-standardize")]
    no_standardize: bool,
    /// Path of the JSON report; the text summary goes next to it as `.txt`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// JSON experiment description (strict: unknown keys are rejected).
    #[arg(long)]
    config: PathBuf,
    /// Output prefix; writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
}

/// Values that may appear in a `test` config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigFile {
    input: Option<PathBuf>,
    outcome: Option<String>,
    treatment: Option<String>,
    instruments: Option<Vec<String>>,
    covariates: Option<Vec<String>>,
    unpenalized: Option<Vec<String>>,
    alpha: Option<f64>,
    draws: Option<usize>,
    seed: Option<u64>,
    c_omega: Option<f64>,
    standardize: Option<bool>,
    out: Option<PathBuf>,
}

/// Fully resolved `test` configuration, recorded in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub input: PathBuf,
    pub columns: ColumnSpec,
    pub alpha: f64,
    pub draws: usize,
    pub seed: u64,
    pub c_omega: f64,
    pub standardize: bool,
    pub out: PathBuf,
}

struct Failure {
    stage: &'static str,
    code: u8,
    message: String,
}

fn code_for(err: &HdivError) -> u8 {
    match err {
        HdivError::Config(_) | HdivError::Json(_) => 3,
        HdivError::Parse { .. }
        | HdivError::Csv(_)
        | HdivError::Dimension(_)
        | HdivError::NonFinite(_)
        | HdivError::ZeroVariance(_) => 4,
        HdivError::DegenerateInstrument(_) => 5,
        HdivError::Solver { .. } | HdivError::LassoNotConverged { .. } | HdivError::LassoPath(_) => 6,
        HdivError::WeakInstruments { .. } => 7,
        HdivError::Io(_) => 8,
    }
}

fn fail(stage: &'static str) -> impl Fn(HdivError) -> Failure {
    move |err| Failure {
        stage,
        code: code_for(&err),
        message: err.to_string(),
    }
}

fn io_fail<'a>(stage: &'static str, path: &'a Path) -> impl Fn(std::io::Error) -> Failure + 'a {
    move |err| Failure {
        stage,
        code: 8,
        message: format!("{}: {err}", path.display()),
    }
}

fn config_fail(message: String) -> Failure {
    Failure {
        stage: "config",
        code: 3,
        message,
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let file = File::open(path).map_err(io_fail("config", path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| config_fail(format!("{}: {e}", path.display())))
}

fn resolve(args: TestArgs) -> Result<RunConfig, Failure> {
    let file: RunConfigFile = match &args.config {
        Some(path) => read_json(path)?,
        None => RunConfigFile::default(),
    };
    let defaults = TestConfig::default();
    let required = |v: Option<String>, name: &str| {
        v.ok_or_else(|| config_fail(format!("--{name} is required (flag or config file)")))
    };
    let columns = ColumnSpec {
        outcome: required(args.outcome.or(file.outcome), "outcome")?,
        treatment: required(args.treatment.or(file.treatment), "treatment")?,
        instruments: args
            .instruments
            .or(file.instruments)
            .ok_or_else(|| config_fail("--instruments is required (flag or config file)".into()))?,
        covariates: args.covariates.or(file.covariates).unwrap_or_default(),
        unpenalized: args.unpenalized.or(file.unpenalized).unwrap_or_default(),
    };
    let input = args
        .input
        .or(file.input)
        .ok_or_else(|| config_fail("--input is required (flag or config file)".into()))?;
    let standardize = if args.no_standardize {
        false
    } else {
        file.standardize.unwrap_or(true)
    };
    Ok(RunConfig {
        input,
        columns,
        alpha: args.alpha.or(file.alpha).unwrap_or(defaults.alpha),
        draws: args.draws.or(file.draws).unwrap_or(defaults.n_draws),
        seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
        c_omega: args.c_omega.or(file.c_omega).unwrap_or(defaults.c_omega),
        standardize,
        out: args
            .out
            .or(file.out)
            .unwrap_or_else(|| PathBuf::from("hdiv_report.json")),
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(io_fail("write", path))
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(io_fail("write", dir))
        }
        _ => Ok(()),
    }
}

fn cmd_test(args: TestArgs) -> Result<(), Failure> {
    let config = resolve(args)?;
    let test_config = TestConfig {
        alpha: config.alpha,
        n_draws: config.draws,
        seed: config.seed,
        c_omega: config.c_omega,
        ..TestConfig::default()
    };
    test_config.validate().map_err(fail("config"))?;

    let start = Instant::now();
    let file = File::open(&config.input).map_err(io_fail("load", &config.input))?;
    let raw = load_dataset(BufReader::new(file), &config.columns).map_err(fail("load"))?;
    let data = if config.standardize {
        standardize(&raw).map_err(fail("standardize"))?
    } else {
        raw
    };
    let report = with_pool(|| run_overid_test(&data, &test_config)).map_err(fail("test"))?;
    let seconds = start.elapsed().as_secs_f64();

    let doc = ReportDocument {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: "test".to_string(),
        decisions: Decisions::new(&test_config, data.n(), data.p(), config.standardize),
        n: data.n(),
        p_x: data.p_x(),
        p_z: data.p_z(),
        config,
        report,
        seconds,
    };
    let summary = render_summary(&doc);
    ensure_parent(&doc.config.out)?;
    let out = File::create(&doc.config.out).map_err(io_fail("write", &doc.config.out))?;
    serde_json::to_writer_pretty(BufWriter::new(out), &doc).map_err(|e| Failure {
        stage: "write",
        code: 8,
        message: e.to_string(),
    })?;
    write_text(&doc.config.out.with_extension("txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut config: SimConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(r) = args.replications {
        config.replications = r;
    }
    config.validate().map_err(fail("config"))?;
    let start = Instant::now();
    let output = run_experiment(&config).map_err(fail("simulate"))?;
    let seconds = start.elapsed().as_secs_f64();

    let csv_path = args.out.with_extension("csv");
    let json_path = args.out.with_extension("json");
    ensure_parent(&csv_path)?;
    let csv_file = File::create(&csv_path).map_err(io_fail("write", &csv_path))?;
    output
        .write_csv(BufWriter::new(csv_file))
        .map_err(fail("write"))?;
    let doc = SimulationDocument {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: "simulate".to_string(),
        output,
        seconds,
    };
    let json_file = File::create(&json_path).map_err(io_fail("write", &json_path))?;
    serde_json::to_writer_pretty(BufWriter::new(json_file), &doc).map_err(|e| Failure {
        stage: "write",
        code: 8,
        message: e.to_string(),
    })?;
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Test(args) => cmd_test(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("hdiv: {} failed: {}", f.stage, f.message);
            ExitCode::from(f.code)
        }
    }
}
