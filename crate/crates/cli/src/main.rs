use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use designer_core::pipeline::{Pipeline, PipelineConfig, PipelineError, RunOptions, Stage};
use designer_core::qbank::DifficultyRatio;
use tracing_subscriber::EnvFilter;

/// Config file picked up from the working directory when `--config` is absent.
const DEFAULT_CONFIG: &str = "designer.toml";

const EXIT_QUARANTINED: u8 = 2;
const EXIT_HALTED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "designer", version, about = "Resumable pipeline that synthesizes reasoning questions from design logics")]
struct Cli {
    /// Pipeline TOML; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `store_dir`.
    #[arg(long, global = true)]
    store_dir: Option<PathBuf>,
    /// Overrides the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Label file with one discipline per line.
    #[arg(long, global = true)]
    taxonomy: Option<PathBuf>,
    /// Discard existing progress of each stage that runs.
    #[arg(long, global = true)]
    fresh: bool,
    /// Print the plan instead of running.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Stop after committing this many items, as a crash would.
    #[arg(long, global = true, hide = true)]
    halt_after_items: Option<usize>,
    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Show every stage with its inputs, output directory and status.
    Plan,
    /// Print the effective configuration as TOML.
    ShowConfig,
    /// Run all stages in order, resuming completed work.
    RunAll(Overrides),
    /// Label the question bank with discipline, difficulty and type.
    LabelBank,
    /// Segment, deduplicate, label and sample book chapters.
    CurateBook {
        #[arg(long)]
        max_words: Option<usize>,
        /// Segments to keep after quota sampling.
        #[arg(long)]
        total: Option<usize>,
    },
    /// Score web pages for reasoning content and keep those above the bar.
    CurateWeb {
        #[arg(long)]
        min_score: Option<u8>,
    },
    /// Cluster the bank per discipline and draw the difficulty-stratified subset.
    SelectSubset {
        #[arg(long)]
        quota_total: Option<usize>,
        /// Very Hard : Hard : Medium, e.g. 3:2:1.
        #[arg(long)]
        ratio: Option<DifficultyRatio>,
    },
    /// Extract one design logic per selected question.
    ExtractLogic,
    /// Drop near-identical design logics within each discipline.
    DedupLogic {
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Write one retrieval index per discipline.
    BuildIndex,
    /// Retrieve candidate logics per document and synthesize questions.
    MatchSynthesize {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Drop MinHash near-duplicate questions.
    DedupQuestions {
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Drop questions sharing an n-gram with an evaluation benchmark.
    Decontaminate {
        /// Benchmark JSONL files; replaces the configured list.
        #[arg(long, num_args = 1..)]
        benchmarks: Vec<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Generate a long-form response for every surviving question.
    Respond,
    /// Write distribution and diversity reports.
    Analyze {
        #[arg(long)]
        sample: Option<usize>,
    },
}

/// Stage parameters accepted by `run-all`.
#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long)]
    max_words: Option<usize>,
    #[arg(long)]
    min_score: Option<u8>,
    #[arg(long)]
    quota_total: Option<usize>,
    #[arg(long)]
    ratio: Option<DifficultyRatio>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    sample: Option<usize>,
}

impl Overrides {
    fn apply(&self, c: &mut PipelineConfig) {
        set(&mut c.curation.max_words, self.max_words);
        set(&mut c.curation.min_score, self.min_score);
        set(&mut c.selection.quota_total, self.quota_total);
        set(&mut c.selection.ratio, self.ratio);
        set(&mut c.logic.tau, self.tau);
        set(&mut c.matching.top_k, self.k);
        set(&mut c.postproc.minhash.threshold, self.threshold);
        set(&mut c.analytics.sample, self.sample);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Command {
    /// The single stage this command runs, after folding its flags into `c`.
    fn stage(&self, c: &mut PipelineConfig) -> Option<Stage> {
        let stage = match self {
            Command::Plan | Command::ShowConfig => return None,
            Command::RunAll(o) => {
                o.apply(c);
                return None;
            }
            Command::LabelBank => Stage::LabelBank,
            Command::CurateBook { max_words, total } => {
                set(&mut c.curation.max_words, *max_words);
                if total.is_some() {
                    c.curation.book_total = *total;
                }
                Stage::CurateBook
            }
            Command::CurateWeb { min_score } => {
                set(&mut c.curation.min_score, *min_score);
                Stage::CurateWeb
            }
            Command::SelectSubset { quota_total, ratio } => {
                set(&mut c.selection.quota_total, *quota_total);
                set(&mut c.selection.ratio, *ratio);
                Stage::SelectSubset
            }
            Command::ExtractLogic => Stage::ExtractLogic,
            Command::DedupLogic { tau } => {
                set(&mut c.logic.tau, *tau);
                Stage::DedupLogic
            }
            Command::BuildIndex => Stage::BuildIndex,
            Command::MatchSynthesize { k } => {
                set(&mut c.matching.top_k, *k);
                Stage::MatchSynthesize
            }
            Command::DedupQuestions { threshold } => {
                set(&mut c.postproc.minhash.threshold, *threshold);
                Stage::DedupQuestions
            }
            Command::Decontaminate { benchmarks, n } => {
                if !benchmarks.is_empty() {
                    c.inputs.benchmarks = benchmarks.clone();
                }
                set(&mut c.postproc.ngram_n, *n);
                Stage::Decontaminate
            }
            Command::Respond => Stage::Respond,
            Command::Analyze { sample } => {
                set(&mut c.analytics.sample, *sample);
                Stage::Analyze
            }
        };
        Some(stage)
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None if Path::new(DEFAULT_CONFIG).exists() => PipelineConfig::load(Path::new(DEFAULT_CONFIG))?,
        None => PipelineConfig::default(),
    };
    set(&mut config.store_dir, cli.store_dir.clone());
    set(&mut config.seed, cli.seed);
    if cli.taxonomy.is_some() {
        config.taxonomy = cli.taxonomy.clone();
    }
    Ok(config)
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let mut config = load_config(&cli)?;
    let stage = cli.command.stage(&mut config);
    config.validate()?;
    if let Command::ShowConfig = cli.command {
        print!("{}", config.to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let pipeline = Pipeline::new(config).context("building the pipeline")?.with_options(RunOptions {
        halt_after_items: cli.halt_after_items,
        fresh: cli.fresh,
    });
    if cli.dry_run || matches!(cli.command, Command::Plan) {
        let plan = pipeline.plan()?;
        let plan: Vec<_> = plan.into_iter().filter(|e| stage.is_none_or(|s| s == e.stage)).collect();
        print_json(&serde_json::to_value(plan)?)?;
        return Ok(ExitCode::SUCCESS);
    }
    let result = match stage {
        Some(stage) => pipeline.run_stage(stage).map(|s| (s.quarantined, serde_json::to_value(s))),
        None => pipeline.run_all().map(|r| (r.quarantined, serde_json::to_value(r))),
    };
    match result {
        Ok((quarantined, summary)) => {
            print_json(&summary?)?;
            if quarantined > 0 {
                eprintln!("designer: {quarantined} item(s) quarantined; see the stage quarantine.jsonl files");
                return Ok(ExitCode::from(EXIT_QUARANTINED));
            }
            Ok(ExitCode::SUCCESS)
        }
        Err(PipelineError::Halted { stage, processed }) => {
            eprintln!("designer: halted in {stage} after {processed} items; rerun to resume");
            Ok(ExitCode::from(EXIT_HALTED))
        }
        Err(e) => Err(e.into()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default)))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("designer: {e:#}");
            ExitCode::FAILURE
        }
    }
}
