//! `cotloop`: operator entry point for the bootstrapping pipeline, the
//! exam harness and the leaderboard service.

mod config;
mod error;
mod exam;
mod fixture;
mod ingest;
mod pipeline;
mod serve;

use std::io::{IsTerminal, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{Map, Value};
use tracing_subscriber::EnvFilter;

use cotloop_core::eval::{Grouping, Mode, ReportFormat};

use crate::error::CliError;

/// Result of a command: human text and its machine-readable twin.
pub struct Output {
    pub text: String,
    pub json: Value,
}

#[derive(Parser)]
#[command(name = "cotloop", version, about = "Verified chain-of-thought data by rejection sampling, exam scoring and a leaderboard")]
struct Cli {
    /// TOML or JSON config file; defaults to ./cotloop.toml when present.
    #[arg(long, global = true, env = "COTLOOP_CONFIG")]
    config: Option<PathBuf>,
    /// Pipeline store directory.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Training corpus (JSONL with manifest).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    base_model: Option<String>,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, synthesize, deduplicate and triage raw items into a dataset.
    Ingest(IngestArgs),
    /// Split the training corpus into K disjoint subsets.
    Partition(PartitionArgs),
    /// Sample, verify and checkpoint one subset.
    RunIteration {
        #[arg(long)]
        k: u32,
    },
    /// Aggregate the SFT set through iteration k and write the export.
    ExportSft {
        #[arg(long)]
        upto: u32,
    },
    /// Train M_k from the base model on the set through iteration k.
    Train {
        #[arg(long)]
        upto: u32,
    },
    /// Partition, then run, aggregate and train iterations 1..=K.
    Loop {
        #[arg(long)]
        iterations: u32,
    },
    /// Score a backend on an exam set.
    Evaluate(EvaluateArgs),
    /// Render saved evaluation reports as one table.
    Report(ReportArgs),
    /// Serve the leaderboard and hard-case API.
    Serve(ServeArgs),
    /// Write synthetic datasets for demos and tests.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Raw item files (JSONL); replaces `ingest.raw`.
    #[arg(long = "raw")]
    raw: Vec<PathBuf>,
    #[arg(long = "textbook")]
    textbooks: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    version: Option<String>,
    #[arg(long)]
    dedup_threshold: Option<f64>,
    #[arg(long)]
    triage_trials: Option<u32>,
}

#[derive(Args)]
struct PartitionArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// round_robin, subject, year or unit.
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Exam set file (JSONL with manifest).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Backend config file (JSON); defaults to `evaluate.backend`.
    #[arg(long)]
    pub backend: Option<PathBuf>,
    /// Model name to send; defaults to the backend's model.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    #[arg(long, value_parser = parse_grouping)]
    pub grouping: Option<Grouping>,
    /// Directory for transcripts and reports; defaults to `<store>/evals`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Report files or directories searched for `*.report.json`.
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "markdown")]
    pub format: ReportFormat,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long)]
    bind: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Exam set to release before serving.
    #[arg(long)]
    pub release: Option<PathBuf>,
    /// Version the released set supersedes.
    #[arg(long, requires = "release")]
    pub supersedes: Option<String>,
}

#[derive(Args)]
pub struct FixtureArgs {
    /// corpus, exam or raw.
    pub kind: fixture::Kind,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Dataset version; defaults to the file stem.
    #[arg(long)]
    pub version: Option<String>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| format!("unknown mode {s:?}; use deterministic or reasoning"))
}

fn parse_grouping(s: &str) -> Result<Grouping, String> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| format!("unknown grouping {s:?}; use sitting, unit, sitting_unit or all"))
}

impl Cli {
    /// Flags that override config values, as a nested map.
    fn overrides(&self) -> Map<String, Value> {
        let mut m = Map::new();
        if let Some(s) = &self.store {
            config::set(&mut m, "store", s.display().to_string());
        }
        if let Some(d) = &self.dataset {
            config::set(&mut m, "dataset", d.display().to_string());
        }
        if let Some(b) = &self.base_model {
            config::set(&mut m, "base_model", b.clone());
        }
        match &self.command {
            Command::Ingest(a) => {
                if !a.raw.is_empty() {
                    config::set(&mut m, "ingest.raw", paths(&a.raw));
                }
                if !a.textbooks.is_empty() {
                    config::set(&mut m, "ingest.textbooks", paths(&a.textbooks));
                }
                if let Some(o) = &a.out {
                    config::set(&mut m, "ingest.out", o.display().to_string());
                }
                if let Some(v) = &a.version {
                    config::set(&mut m, "ingest.version", v.clone());
                }
                if let Some(t) = a.dedup_threshold {
                    config::set(&mut m, "ingest.dedup_threshold", t);
                }
                if let Some(t) = a.triage_trials {
                    config::set(&mut m, "ingest.triage_trials", t);
                }
            }
            Command::Partition(a) => {
                if let Some(k) = a.k {
                    config::set(&mut m, "partition.k", k);
                }
                if let Some(s) = a.seed {
                    config::set(&mut m, "partition.seed", s);
                }
                if let Some(s) = &a.strategy {
                    config::set(&mut m, "partition.strategy", s.clone());
                }
            }
            Command::Evaluate(a) => {
                if let Some(mode) = a.mode {
                    config::set(&mut m, "evaluate.mode", serde_json::to_value(mode).expect("enum"));
                }
                if let Some(g) = a.grouping {
                    config::set(&mut m, "evaluate.grouping", serde_json::to_value(g).expect("enum"));
                }
            }
            Command::Serve(a) => {
                if let Some(b) = &a.bind {
                    config::set(&mut m, "service.bind", b.clone());
                }
                if let Some(d) = &a.data_dir {
                    config::set(&mut m, "service.data_dir", d.display().to_string());
                }
            }
            _ => {}
        }
        m
    }
}

fn paths(p: &[PathBuf]) -> Value {
    p.iter().map(|p| Value::String(p.display().to_string())).collect()
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn,cotloop=info,cotloop_core=info",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_env("COTLOOP_LOG").unwrap_or_else(|_| EnvFilter::new(default));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).with_ansi(std::io::stderr().is_terminal()).with_target(false).try_init();
}

fn run(cli: Cli) -> Result<Output, CliError> {
    let cfg = config::load(cli.config.as_deref(), cli.overrides())?;
    match cli.command {
        Command::Ingest(_) => ingest::run(&cfg),
        Command::Partition(_) => pipeline::partition(&cfg),
        Command::RunIteration { k } => pipeline::run_iteration(&cfg, k),
        Command::ExportSft { upto } => pipeline::export_sft(&cfg, upto),
        Command::Train { upto } => pipeline::train(&cfg, upto),
        Command::Loop { iterations } => pipeline::run_loop(&cfg, iterations),
        Command::Evaluate(a) => exam::evaluate(&cfg, &a),
        Command::Report(a) => exam::report(&cfg, &a),
        Command::Serve(a) => serve::run(&cfg, &a, cli.json),
        Command::Fixture(a) => fixture::run(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let json = cli.json;
    let mut stdout = std::io::stdout().lock();
    match run(cli) {
        Ok(out) => {
            let _ = if json {
                writeln!(stdout, "{}", serde_json::to_string_pretty(&out.json).expect("json output"))
            } else {
                write!(stdout, "{}", out.text)
            };
            ExitCode::SUCCESS
        }
        Err(e) => {
            if json {
                let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&e.to_json()).expect("json output"));
            }
            eprintln!("cotloop: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
