//! `storybot`: validate story packages, run scripted simulations, compute
//! engagement metrics and serve the live gateway.

mod serve;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand};
use storybot_core::log::{read_log, Durability, EventLog, LogHeader};
use storybot_core::metrics::{compute_metrics, EngagementMetrics};
use storybot_core::narrative::{validate_package, StoryPackage};
use storybot_core::simulation::{run_simulation, SimulationError, SimulationScript};

#[derive(Parser)]
#[command(name = "storybot", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a story package for structural defects.
    Validate { package: PathBuf },
    /// Run a scripted multi-day simulation under a virtual clock.
    Simulate {
        package: PathBuf,
        script: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the event log. Must not exist yet.
        #[arg(long, default_value = "simulation.log")]
        out: PathBuf,
    },
    /// Compute engagement metrics from an event log.
    Metrics {
        log: PathBuf,
        /// Size of the whole community, for the channel share figure.
        #[arg(long)]
        community_total: Option<u64>,
    },
    /// Run the HTTP gateway until SIGTERM or ctrl-c.
    Serve {
        package: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Run the clue finder as a standalone HTTP service.
    ClueServe {
        corpus: PathBuf,
        #[arg(long, default_value_t = 8081)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = storybot_core::clue::DEFAULT_THRESHOLD)]
        threshold: f64,
    },
}

/// An error with the exit code it should produce.
pub(crate) struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    pub(crate) fn usage(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: 2,
            error: error.into(),
        }
    }

    pub(crate) fn rejected(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: 1,
            error: error.into(),
        }
    }
}

pub(crate) type Outcome = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();

    let outcome = match Cli::parse().command {
        Command::Validate { package } => validate(&package),
        Command::Simulate {
            package,
            script,
            seed,
            out,
        } => simulate(&package, &script, seed, &out),
        Command::Metrics { log, community_total } => metrics(&log, community_total),
        Command::Serve {
            package,
            config,
            port,
            host,
        } => serve::serve(&package, &config, port, &host),
        Command::ClueServe {
            corpus,
            port,
            host,
            threshold,
        } => serve::clue_serve(&corpus, &host, port, threshold),
    };
    match outcome {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}

pub(crate) fn load_package(path: &Path) -> Result<StoryPackage, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(Failure::usage)?;
    StoryPackage::from_json(&text)
        .with_context(|| format!("cannot parse {}", path.display()))
        .map_err(Failure::usage)
}

fn validate(path: &Path) -> Outcome {
    let pkg = load_package(path)?;
    let defects = validate_package(&pkg);
    if defects.is_empty() {
        println!("{}: ok ({} nodes)", path.display(), pkg.nodes.len());
        return Ok(ExitCode::SUCCESS);
    }
    for defect in &defects {
        println!("{defect}");
    }
    println!("{}: {} defect(s)", path.display(), defects.len());
    Ok(ExitCode::from(1))
}

fn simulate(package: &Path, script_path: &Path, seed: u64, out: &Path) -> Outcome {
    let pkg = Arc::new(load_package(package)?);
    let text = std::fs::read_to_string(script_path)
        .with_context(|| format!("cannot read {}", script_path.display()))
        .map_err(Failure::usage)?;
    let script = SimulationScript::from_json(&text)
        .with_context(|| format!("cannot parse {}", script_path.display()))
        .map_err(Failure::usage)?;
    let log = EventLog::create(out, LogHeader::new(pkg.character.name()), Durability::Flush)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(Failure::usage)?;

    let (mut engine, report) = run_simulation(pkg, &script, seed, log).map_err(|e| match e {
        SimulationError::Parse(_) => Failure::usage(e),
        other => Failure::rejected(other),
    })?;
    engine.log_mut().sync().map_err(Failure::usage)?;

    let metrics_path = sibling(out, "metrics.json");
    let json = serde_json::to_string_pretty(&report).expect("reports serialize");
    std::fs::write(&metrics_path, format!("{json}\n"))
        .with_context(|| format!("cannot write {}", metrics_path.display()))
        .map_err(Failure::usage)?;

    let path: Vec<&str> = report.path.iter().map(|n| n.as_str()).collect();
    println!("{} release(s), path {}", report.releases.len(), path.join(" > "));
    println!("{} actions applied, log at {}", report.actions_applied, out.display());
    println!("{}", report.metrics.to_table());
    Ok(ExitCode::SUCCESS)
}

/// `run.log` with `metrics.json` becomes `run.metrics.json`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn metrics(path: &Path, community_total: Option<u64>) -> Outcome {
    let (_, entries) = read_log(path).map_err(|e| Failure::usage(anyhow::anyhow!("{}: {e}", path.display())))?;
    let report: EngagementMetrics = compute_metrics(&entries, community_total);
    println!("{}", serde_json::to_string_pretty(&report).expect("metrics serialize"));
    println!();
    println!("{}", report.to_table());
    Ok(ExitCode::SUCCESS)
}
