mod catalog;
mod output;
mod scenario;
mod tasks;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use output::ArtifactWriter;
use scenario::Scenario;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    UnknownTask(String),
    Core(zrplab::Error),
    Io(std::io::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::UnknownTask(t) => write!(f, "unknown task '{t}'"),
            CliError::Core(e @ zrplab::Error::TooManyStates { .. }) => write!(
                f,
                "{e}\n  hint: shrink the ladder or the number of sites, or raise the cap with ZRPLAB_CAP_STATES"
            ),
            CliError::Core(e @ zrplab::Error::GridTooCoarse { .. }) => {
                write!(f, "{e}\n  hint: raise grid_divisions or the bump threshold")
            }
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<zrplab::Error> for CliError {
    fn from(e: zrplab::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

#[derive(Parser)]
#[command(name = "zrplab", version, about = "Condensing zero-range process lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file (JSON, or TOML by extension).
    Run {
        scenario_path: Option<PathBuf>,
        #[arg(long = "scenario", conflicts_with = "scenario_path")]
        scenario_flag: Option<PathBuf>,
        /// Output directory (overrides the scenario).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed (overrides the scenario).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads.
        #[arg(long)]
        jobs: Option<usize>,
        /// Task (overrides the scenario).
        #[arg(long)]
        task: Option<String>,
    },
    /// Validate a scenario against the emitted catalog and print its hash.
    Check { scenario_path: PathBuf },
    /// Print the task catalog as JSON.
    ListTasks,
    /// Run the quick invariant suite.
    Selftest {
        #[arg(long, default_value = "zrplab-selftest")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

const EXIT_ERROR: u8 = 1;
const EXIT_THRESHOLD: u8 = 2;

fn print_catalog() {
    println!("{}", serde_json::to_string_pretty(&catalog::catalog_json()).expect("catalog serialises"));
}

fn execute(s: &Scenario, out: PathBuf) -> Result<bool, CliError> {
    s.validate()?;
    let mut w = ArtifactWriter::new(&out, &s.hash())?;
    let v = tasks::run(s, &mut w)?;
    let dir = w.dir().display().to_string();
    let artifacts = w.finish(&s.task, s.seed, v.passed, &v.summary)?;
    println!("{} [{}] {}", s.task, if v.passed { "pass" } else { "fail" }, v.summary);
    println!("{} artifacts in {dir}", artifacts.len() + 1);
    Ok(v.passed)
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::ListTasks => {
            print_catalog();
            Ok(true)
        }
        Command::Check { scenario_path } => {
            let s = Scenario::load(&scenario_path)?;
            catalog::validate_against_catalog(&catalog::catalog_json(), &s.task, &s.params).map_err(CliError::Config)?;
            s.validate()?;
            s.graph()?;
            println!("{} {}", s.hash(), scenario_path.display());
            Ok(true)
        }
        Command::Selftest { out, seed } => {
            let s = Scenario {
                version: scenario::SCHEMA_VERSION,
                name: "selftest".into(),
                graph: scenario::GraphSource::Complete { sites: 2, rate: 1.0 },
                alpha: 2.0,
                ladder: vec![1],
                task: "selftest".into(),
                params: serde_json::json!({}),
                seed,
                out: None,
                base_dir: PathBuf::new(),
            };
            execute(&s, out)
        }
        Command::Run { scenario_path, scenario_flag, out, seed, jobs, task } => {
            let path = scenario_path
                .or(scenario_flag)
                .ok_or_else(|| CliError::Config("no scenario given (zrplab run <FILE>)".into()))?;
            if let Some(j) = jobs {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(j)
                    .build_global()
                    .map_err(|e| CliError::Config(e.to_string()))?;
            }
            let mut s = Scenario::load(&path)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(t) = task {
                s.task = t;
            }
            let out = out
                .or_else(|| s.out.as_ref().map(|o| s.base_dir.join(o)))
                .unwrap_or_else(|| PathBuf::from(format!("zrplab-out/{}", s.task)));
            execute(&s, out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_THRESHOLD),
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::UnknownTask(_)) {
                eprintln!("available tasks:");
                print_catalog();
            }
            ExitCode::from(EXIT_ERROR)
        }
    }
}
