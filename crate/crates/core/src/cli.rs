//! Command-line front end: `validate`, `run` and `report`.
//!
//! Exit codes: 0 success, 1 invalid input (scenario or trace), 2 runtime
//! failure such as unreadable files or failed writes.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::metrics::{MetricsAccumulator, MetricsReport};
use crate::netsim::{run, RunOutput};
use crate::resource::Tick;
use crate::scenario::{self, ScenarioError};
use crate::trace::parse_trace;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn metrics_file(self) -> &'static str {
        match self {
            Format::Csv => "metrics.csv",
            Format::Json => "metrics.json",
        }
    }

    pub fn render(self, report: &MetricsReport) -> String {
        match self {
            Format::Csv => report.to_csv(),
            Format::Json => report.to_json(),
        }
    }
}

/// A single seed or an inclusive range `a..b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedRange {
    pub first: u64,
    pub last: u64,
}

impl std::str::FromStr for SeedRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parse = |x: &str| x.trim().parse::<u64>().map_err(|_| format!("bad seed `{x}`"));
        match s.split_once("..") {
            Some((a, b)) => {
                let (first, last) = (parse(a)?, parse(b)?);
                if first > last {
                    return Err(format!("empty seed range {s}"));
                }
                Ok(SeedRange { first, last })
            }
            None => {
                let v = parse(s)?;
                Ok(SeedRange { first: v, last: v })
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "carla", version, about = "Cooperative learning over hybrid wireless networks: scenario runner")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a scenario file and print any diagnostics.
    Validate { file: PathBuf },
    /// Simulate a scenario and write metrics, trace and ranking.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Random seed.
        #[arg(long, conflicts_with = "seeds", required_unless_present = "seeds")]
        seed: Option<u64>,
        /// Inclusive seed sweep `a..b`; each seed writes to `<out>/seed-<n>/`.
        #[arg(long)]
        seeds: Option<SeedRange>,
        /// Override the scenario's tick count.
        #[arg(long)]
        ticks: Option<Tick>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
    /// Recompute the metrics report from a trace file.
    Report {
        trace: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

/// Error carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn invalid(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Io { .. } => CliError::runtime(e.to_string()),
            _ => CliError::invalid(e.to_string()),
        }
    }
}

pub fn validate(path: &Path) -> Result<String, CliError> {
    let doc = scenario::load(path)?;
    let diags = doc.validate();
    if diags.is_empty() {
        Ok(format!("{}: ok\n", path.display()))
    } else {
        Err(ScenarioError::InvalidScenario(diags).into())
    }
}

/// Files produced by one run, rendered in memory.
pub struct RunFiles {
    pub metrics: (String, String),
    pub trace: String,
    pub ranking: String,
}

pub fn render_run(output: &RunOutput, format: Format) -> RunFiles {
    RunFiles {
        metrics: (format.metrics_file().to_owned(), format.render(&output.report)),
        trace: output.trace(),
        ranking: output.report.ranking_csv(),
    }
}

fn write_all(dir: &Path, files: &RunFiles) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::runtime(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let entries = [
        (files.metrics.0.as_str(), &files.metrics.1),
        ("trace.tsv", &files.trace),
        ("ranking.csv", &files.ranking),
    ];
    // stage everything first so a failed write leaves no partial set behind
    for (name, body) in entries {
        fs::write(dir.join(format!(".{name}.tmp")), body).map_err(io)?;
    }
    for (name, _) in entries {
        fs::rename(dir.join(format!(".{name}.tmp")), dir.join(name)).map_err(io)?;
    }
    Ok(())
}

pub fn run_scenario(
    path: &Path,
    seeds: SeedRange,
    ticks: Option<Tick>,
    out: &Path,
    format: Format,
) -> Result<String, CliError> {
    let mut config = scenario::load(path)?.into_config()?;
    // scheduled items past a shortened run simply never fire
    if let Some(t) = ticks {
        config.ticks = t;
    }
    let seeds: Vec<u64> = (seeds.first..=seeds.last).collect();
    let sweep = seeds.len() > 1;
    let rendered: Vec<(u64, RunFiles)> = if sweep {
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
        let chunk = seeds.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = seeds
                .chunks(chunk)
                .map(|part| {
                    let config = &config;
                    s.spawn(move || {
                        part.iter()
                            .map(|&seed| (seed, render_run(&run(config.clone(), seed), format)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("simulation thread panicked"))
                .collect()
        })
    } else {
        vec![(seeds[0], render_run(&run(config, seeds[0]), format))]
    };
    let mut summary = String::new();
    for (seed, files) in &rendered {
        let dir = if sweep {
            out.join(format!("seed-{seed}"))
        } else {
            out.to_path_buf()
        };
        write_all(&dir, files)?;
        summary.push_str(&format!("seed {seed}: wrote {}\n", dir.display()));
    }
    Ok(summary)
}

pub fn report(trace: &Path, format: Format) -> Result<String, CliError> {
    let text = fs::read_to_string(trace)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", trace.display())))?;
    let events = parse_trace(&text).map_err(|e| CliError::invalid(format!("{}: {e}", trace.display())))?;
    Ok(format.render(&MetricsAccumulator::replay(&events).finish()))
}

pub fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Validate { file } => validate(&file),
        Command::Run {
            scenario,
            seed,
            seeds,
            ticks,
            out,
            format,
        } => {
            let range = match (seed, seeds) {
                (Some(s), _) => SeedRange { first: s, last: s },
                (None, Some(r)) => r,
                (None, None) => return Err(CliError::invalid("--seed is required")),
            };
            run_scenario(&scenario, range, ticks, &out, format)
        }
        Command::Report { trace, format } => report(&trace, format),
    }
}

/// Parses `args`, runs the command, prints results and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(text) => {
            let _ = std::io::stdout().write_all(text.as_bytes());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges_parse() {
        assert_eq!("3".parse::<SeedRange>(), Ok(SeedRange { first: 3, last: 3 }));
        assert_eq!("1..4".parse::<SeedRange>(), Ok(SeedRange { first: 1, last: 4 }));
        assert!("4..1".parse::<SeedRange>().is_err());
        assert!("x".parse::<SeedRange>().is_err());
    }

    #[test]
    fn seed_is_mandatory() {
        assert!(Cli::try_parse_from(["carla", "run", "--scenario", "s.json"]).is_err());
        assert!(Cli::try_parse_from(["carla", "run", "--scenario", "s.json", "--seed", "1"]).is_ok());
    }

    #[test]
    fn missing_files_are_runtime_failures() {
        let e = validate(Path::new("/nonexistent/scenario.json")).unwrap_err();
        assert_eq!(e.code, EXIT_RUNTIME);
        let e = report(Path::new("/nonexistent/trace.tsv"), Format::Csv).unwrap_err();
        assert_eq!(e.code, EXIT_RUNTIME);
    }
}
