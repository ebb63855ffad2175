use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use scale_scribe::gateway::BackendKind;
use scale_scribe::runner::{self, ExecOptions, ReportFormat, RunManifest, RunMode};
use scale_scribe::{Corpus, ScaleDefinition};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendArg {
    Live,
    Scripted,
    Replay,
}

impl From<BackendArg> for BackendKind {
    fn from(arg: BackendArg) -> Self {
        match arg {
            BackendArg::Live => BackendKind::Live,
            BackendArg::Scripted => BackendKind::Scripted,
            BackendArg::Replay => BackendKind::Replay,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Csv,
    Json,
}

impl From<FormatArg> for ReportFormat {
    fn from(arg: FormatArg) -> Self {
        match arg {
            FormatArg::Table => ReportFormat::Table,
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Json => ReportFormat::Json,
        }
    }
}

/// Score interview transcripts on the BPRS-E with a language model and
/// compare against clinician ratings.
#[derive(Debug, Parser)]
#[command(name = "scale-scribe", version)]
struct Cli {
    /// Where completions come from.
    #[arg(long, value_enum, global = true, default_value = "live")]
    backend: BackendArg,

    /// Overrides the manifest seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Response cache. Live and scripted runs record into it; replay reads it.
    #[arg(long, global = true, value_name = "PATH")]
    cache_dir: Option<PathBuf>,

    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load corpus files, report counts, optionally write them back merged.
    Ingest {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Write the merged corpus as canonical JSONL.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Zero-shot scoring of every selected transcript.
    Score(RunArgs),
    /// Longitudinal strategy comparison on the most recent visit.
    Longitudinal(RunArgs),
    /// Recompute reports from a finished run directory.
    Report {
        #[arg(long, value_name = "DIR")]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: FormatArg,
    },
    /// Check corpus files (and optionally a scale file) without scoring.
    Validate {
        #[arg(required = true)]
        corpus: Vec<PathBuf>,
        #[arg(long, value_name = "PATH")]
        scale: Option<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    /// Replace an existing run directory with the same run id.
    #[arg(long)]
    force: bool,
    /// Write every prompt as readable text into this directory.
    #[arg(long, value_name = "DIR")]
    dump_prompts: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { files, out } => {
            let corpus = Corpus::ingest(&files)?;
            println!(
                "{} patients, {} encounters, {} transcripts, {} assessments",
                corpus.patient_count(),
                corpus.encounter_count(),
                corpus.transcript_count(),
                corpus.assessment_count()
            );
            if let Some(out) = out {
                corpus.export_to_path(&out)?;
                println!("wrote {}", out.display());
            }
        }
        Command::Score(args) => execute(RunMode::ZeroShot, args, cli.backend, cli.seed, cli.cache_dir)?,
        Command::Longitudinal(args) => {
            execute(RunMode::Longitudinal, args, cli.backend, cli.seed, cli.cache_dir)?
        }
        Command::Report { run, format } => {
            let (manifest, result) = runner::load_run(&run)?;
            let scale = manifest.load_scale()?;
            let report = runner::compute_report(&result, &manifest, &scale);
            let format = ReportFormat::from(format);
            let written = runner::emit_report(&report, format, &run)?;
            match format {
                ReportFormat::Csv => {
                    for path in written {
                        println!("wrote {}", path.display());
                    }
                }
                _ => {
                    for (_, contents) in runner::render_report(&report, format) {
                        std::io::stdout().write_all(&contents)?;
                    }
                }
            }
        }
        Command::Validate { corpus, scale } => {
            if let Some(path) = scale {
                let scale = ScaleDefinition::load(&path)
                    .with_context(|| format!("scale {}", path.display()))?;
                println!("scale {} {}: {} items", scale.scale_id, scale.version, scale.len());
            }
            let corpus = Corpus::ingest(&corpus)?;
            let unrated = corpus.encounter_count() - corpus.assessment_count();
            println!(
                "ok: {} patients, {} encounters, {} transcripts, {} assessments",
                corpus.patient_count(),
                corpus.encounter_count(),
                corpus.transcript_count(),
                corpus.assessment_count()
            );
            if unrated > 0 {
                println!("note: {unrated} encounter(s) have no assessment and will not be scored");
            }
        }
    }
    Ok(())
}

fn execute(
    mode: RunMode,
    args: RunArgs,
    backend: BackendArg,
    seed: Option<u64>,
    cache_dir: Option<PathBuf>,
) -> Result<()> {
    let mut manifest = RunManifest::load(&args.manifest)?;
    if let Some(seed) = seed {
        manifest.seed = seed;
    }
    if matches!(backend, BackendArg::Replay) && cache_dir.is_none() {
        bail!("--backend replay needs --cache-dir");
    }
    let options = ExecOptions {
        backend: Some(backend.into()),
        cache_dir,
        overwrite: args.force,
        dump_prompts: args.dump_prompts,
    };
    let output = runner::execute(&manifest, mode, &options)?;
    print!("{}", runner::render_table(&output.report));
    if let Some(stats) = &output.result.stats {
        eprintln!(
            "{} backend: {} completion(s), {} attempt(s), {} failure(s), {} ms",
            stats.backend, stats.gateway_calls, stats.attempts, stats.failures, stats.elapsed_ms
        );
    }
    eprintln!("results in {}", output.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
