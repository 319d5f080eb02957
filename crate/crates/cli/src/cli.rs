use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use qfuse_core::exec::with_threads;
use qfuse_core::FusionStrategy;

use crate::config::{FileConfig, Overrides, ProviderKind, Settings};
use crate::error::CliError;
use crate::pipeline::{self, SimulationArgs, StageReport, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Parser)]
#[command(name = "qfuse", version, about = "Query-augmented dense retrieval pipeline")]
pub struct Cli {
    /// Directory holding all pipeline artifacts.
    #[arg(long, global = true, default_value = ".")]
    pub work: PathBuf,
    /// TOML config file; command-line flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub provider: Option<ProviderKind>,
    /// Base URL of the model sidecar.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub sentence_level: Option<OnOff>,
    #[arg(long, global = true)]
    pub strategy: Option<FusionStrategy>,
    /// Corpus weight for the manual and gen_prob strategies.
    #[arg(long, global = true)]
    pub w0: Option<f64>,
    /// Passages retrieved per query.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for data-parallel stages.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and normalize a corpus, queries and qrels into the work dir.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
    },
    /// Shrink the corpus to a target size, keeping every judged passage.
    Downsample {
        #[arg(long)]
        target: usize,
    },
    /// Split passages into sentences.
    Segment,
    /// Generate synthetic questions and keyword lists per passage.
    Generate {
        /// Synthetic-query JSONL served by the hash provider.
        #[arg(long)]
        fixture: Option<PathBuf>,
    },
    /// Apply the question and keyword quality filters.
    Filter,
    /// Embed passages, sentences, filtered synthetic queries and queries.
    Embed,
    /// Combine corpus and synthetic-query embeddings.
    Fuse,
    /// Build the exact cosine index.
    Index,
    /// Retrieve the top-k passages for every query.
    Search,
    /// Score the run against the qrels.
    Eval,
    /// Compare weighting strategies end to end.
    Ablate,
    /// Monte-Carlo check of the query-mean estimator.
    SimulateRb {
        #[arg(long, default_value_t = 500)]
        groups: usize,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 4)]
        m: usize,
        #[arg(long, default_value_t = 0.6)]
        sigma: f64,
        #[arg(long, default_value_t = 1.0)]
        center_scale: f64,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        /// Comma-separated corpus weights; defaults to 0, 1/m, 0.5, 1.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            threads: self.threads,
            provider: self.provider,
            endpoint: self.endpoint.clone(),
            sentence_level: self.sentence_level.map(|v| v == OnOff::On),
            strategy: self.strategy,
            w0: self.w0,
            k: self.k,
            fixture: match &self.command {
                Command::Generate { fixture } => fixture.clone(),
                _ => None,
            },
        }
    }

    pub fn settings(&self) -> Result<Settings, CliError> {
        let file = match &self.config {
            Some(p) if !p.is_file() => {
                return Err(CliError::MissingArtifact {
                    artifact: "config".into(),
                    path: p.clone(),
                })
            }
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        Settings::resolve(file, self.overrides())
    }
}

pub fn execute(cli: &Cli) -> Result<StageReport, CliError> {
    let settings = cli.settings()?;
    let ws = Workspace::new(&cli.work);
    with_threads(settings.threads, || dispatch(&cli.command, &ws, &settings))
}

fn dispatch(command: &Command, ws: &Workspace, s: &Settings) -> Result<StageReport, CliError> {
    match command {
        Command::Ingest { corpus, queries, qrels } => pipeline::ingest(ws, s, corpus, queries, qrels),
        Command::Downsample { target } => pipeline::downsample(ws, s, *target),
        Command::Segment => pipeline::segment(ws, s),
        Command::Generate { .. } => pipeline::generate(ws, s),
        Command::Filter => pipeline::filter(ws, s),
        Command::Embed => pipeline::embed(ws, s),
        Command::Fuse => pipeline::fuse(ws, s),
        Command::Index => pipeline::index(ws, s),
        Command::Search => pipeline::search(ws, s),
        Command::Eval => pipeline::eval(ws, s),
        Command::Ablate => pipeline::ablate(ws, s),
        Command::SimulateRb {
            groups,
            dim,
            m,
            sigma,
            center_scale,
            seeds,
            grid,
        } => {
            let grid = grid.clone().unwrap_or_else(|| {
                let mut g = vec![0.0, 1.0 / *m.max(&1) as f64, 0.5, 1.0];
                g.dedup();
                g
            });
            let args = SimulationArgs {
                groups: *groups,
                dim: *dim,
                m: *m,
                sigma: *sigma,
                center_scale: *center_scale,
                seeds: *seeds,
                grid,
            };
            pipeline::simulate_rb(ws, s, &args)
        }
    }
}

/// Parses arguments, runs one stage and returns the process exit code.
/// Failures print a single JSON object line on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                let _ = e.print();
                let err = CliError::Usage(e.kind().to_string());
                eprintln!("{}", err.to_json_line());
                err.exit_code()
            } else {
                let _ = e.print();
                0
            };
            return code;
        }
    };
    match execute(&cli) {
        Ok(report) => {
            println!("{}", report.summary.trim_end());
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.exit_code()
        }
    }
}
