//! `linsa classify` and `linsa simulate` over TOML scenario files.

mod config;
mod report;
mod simulate;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ConfigError, Scenario, ScenarioConfig};
use report::{analyse, render_text, EXIT_ERROR};

/// Environment variable holding the worker thread count.
const THREADS_VAR: &str = "LINSA_THREADS";

#[derive(Parser)]
#[command(name = "linsa", version, about = "Stochastic-approximation recursions over random networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify the mean-square behaviour of a scenario.
    Classify {
        config: PathBuf,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run the Monte Carlo experiment and write trajectory.csv, stats.csv and summary.json.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override `run.steps`.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Library(linsa::Error),
    Io(PathBuf, std::io::Error),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Library(e) => write!(f, "{e}"),
            Failure::Io(path, e) => write!(f, "{}: {e}", path.display()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<linsa::Error> for Failure {
    fn from(e: linsa::Error) -> Self {
        Failure::Library(e)
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("{THREADS_VAR} must be a positive integer, got {value:?}")))?;
    linsa::exec::configure_threads(n).map_err(Failure::Config)
}

fn classify(path: &Path, json: bool) -> Result<i32, Failure> {
    let scenario = ScenarioConfig::load(path)?.validate()?;
    let analysis = analyse(&scenario)?;
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(&analysis.report).expect("report serializes")
        );
    } else {
        print!("{}", render_text(&analysis.report));
    }
    Ok(analysis.exit_code())
}

fn simulate(
    path: &Path,
    trials: Option<usize>,
    seed: Option<u64>,
    steps: Option<u64>,
    out: Option<PathBuf>,
) -> Result<i32, Failure> {
    let mut config = ScenarioConfig::load(path)?;
    if let Some(t) = trials {
        config.run.n_trials = t;
    }
    if let Some(s) = seed {
        config.run.seed = s;
    }
    if let Some(s) = steps {
        config.run.steps = s;
        // a window chosen for the configured horizon may not fit the new one
        if config.run.fit_window.is_some_and(|[_, hi]| hi > s) {
            config.run.fit_window = None;
        }
    }
    let out = out
        .or_else(|| config.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| simulate::default_out_dir(config.name.as_deref(), path));
    let scenario: Scenario = config.validate()?;
    configure_threads()?;
    let analysis = analyse(&scenario)?;
    let summary = simulate::simulate(&scenario, &analysis, &out)?;

    println!("wrote {}", out.display());
    println!(
        "verdict: {} ({})",
        summary.verdict.regime,
        summary.verdict.applicable_result.label()
    );
    println!(
        "trials: {}  diverged: {}  observed: {}",
        summary.n_trials,
        summary.diverged_trials,
        match summary.cauchy.observed {
            linsa::mc::ObservedBehaviour::Converging => "converging",
            linsa::mc::ObservedBehaviour::NotConverging => "not converging",
        }
    );
    if let Some(r) = &summary.rate {
        if let (Some(k), Some(f)) = (r.predicted_exponent, &r.fitted) {
            println!("mse exponent: fitted {:.3} +- {:.3}, predicted {k}", f.exponent, f.stderr);
        }
    }
    if let Some(g) = &summary.group {
        println!(
            "final within-group gap: {:.3e} (initial spread {})",
            g.final_within_gap, g.initial_spread
        );
    }
    println!("consistent with verdict: {}", if summary.consistent { "yes" } else { "no" });
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Classify { config, json } => classify(&config, json),
        Command::Simulate {
            config,
            trials,
            seed,
            steps,
            out,
        } => simulate(&config, trials, seed, steps, out),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("linsa: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
