mod commands;
mod config;
mod output;
mod reported;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Failure;
use crate::config::RunFlags;

/// Dialog evaluation by the log-likelihood of follow-up utterances.
#[derive(Debug, Parser)]
#[command(name = "full", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score every example of a corpus against a follow-up set.
    Score {
        /// Canonical corpus (JSON Lines).
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        run: RunFlags,
        /// Output file; stdout when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// json-lines, csv or markdown-table.
        #[arg(long, env = "FULL_FORMAT")]
        format: Option<String>,
    },
    /// Correlate metric totals with mean human ratings, per level.
    Correlate {
        /// Score file written by `score` (JSON Lines).
        #[arg(long)]
        scores: PathBuf,
        /// Canonical corpus carrying the ratings.
        #[arg(long)]
        annotations: PathBuf,
        /// Append published baseline rows, flagged as reported.
        #[arg(long)]
        with_baselines: bool,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
    },
    /// Rank catalog follow-ups by correlation and pick a deduplicated top k.
    Select {
        /// Per-follow-up score files (JSON Lines) covering the whole catalog.
        #[arg(long, num_args = 1.., required_unless_present = "table")]
        scores: Vec<PathBuf>,
        /// Canonical corpus carrying the ratings.
        #[arg(long, required_unless_present = "table")]
        annotations: Option<PathBuf>,
        /// Precomputed coefficient table (tab-separated), or "reported".
        #[arg(long, conflicts_with_all = ["scores", "annotations"])]
        table: Option<String>,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Normalized edit distance below which a candidate counts as a
        /// duplicate; 0 disables deduplication.
        #[arg(long, default_value_t = 0.35)]
        dedup_threshold: f64,
        /// Where to write the selected follow-up set (JSON).
        #[arg(long)]
        out_set: PathBuf,
        /// Ranked correlation table; stdout when omitted.
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
    },
    /// Mean absolute per-follow-up correlation for several models.
    CompareModels {
        /// Model server URLs or "reference"; repeatable.
        #[arg(long = "endpoint", required = true)]
        endpoints: Vec<String>,
        /// Canonical corpus carrying the ratings.
        #[arg(long)]
        corpus: PathBuf,
        /// Follow-up set to study: "catalog", "default" or a JSON file.
        #[arg(long, default_value = "catalog")]
        followups: String,
        #[arg(long, env = "FULL_CACHE_DIR")]
        cache_dir: Option<PathBuf>,
        #[arg(long, default_value_t = config::DEFAULT_PARALLELISM)]
        parallelism: usize,
        /// Append the published per-model figures, flagged as reported.
        #[arg(long)]
        with_reported: bool,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        format: Option<String>,
    },
    /// Print the default follow-up set (or the full catalog) as JSON.
    DumpDefaultFollowups {
        /// Dump all catalog entries instead.
        #[arg(long)]
        catalog: bool,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Convert the upstream FED JSON document into the canonical corpus.
    ConvertFed {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Score { corpus, run, output, format } => {
            commands::score(&corpus, &run, output.as_deref(), format.as_deref())
        }
        Command::Correlate { scores, annotations, with_baselines, output, format } => {
            commands::correlate(&scores, &annotations, with_baselines, output.as_deref(), format.as_deref())
        }
        Command::Select { scores, annotations, table, k, dedup_threshold, out_set, output, format } => {
            let source = match table {
                Some(t) => commands::SelectSource::Table(t),
                None => commands::SelectSource::Scores { scores, annotations: annotations.expect("required by clap") },
            };
            commands::select(source, k, dedup_threshold, &out_set, output.as_deref(), format.as_deref())
        }
        Command::CompareModels {
            endpoints,
            corpus,
            followups,
            cache_dir,
            parallelism,
            with_reported,
            output,
            format,
        } => commands::compare_models(
            &endpoints,
            &corpus,
            &followups,
            cache_dir.as_deref(),
            parallelism,
            with_reported,
            output.as_deref(),
            format.as_deref(),
        ),
        Command::DumpDefaultFollowups { catalog, output } => commands::dump_followups(catalog, output.as_deref()),
        Command::ConvertFed { input, output } => commands::convert_fed(&input, output.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
