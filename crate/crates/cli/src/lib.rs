//! The `sensor` command line: every pipeline stage as a subcommand, plus the
//! annotation service.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{Layers, Settings};
use crate::error::CliResult;

#[derive(Debug, Parser)]
#[command(name = "sensor", version, about = "Privacy-review mining pipeline and annotation service")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML settings file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic step of this run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override one setting, e.g. `--set grace.hidden=64`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Where to write the run manifest (default: beside the primary output).
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Pre,
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReprArg {
    Tfidf,
    CbowMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Log,
    Hinge,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fetch reviews for one app and date range.
    Scrape {
        #[arg(long)]
        app_id: String,
        #[arg(long, value_name = "YYYY-MM-DD")]
        from: String,
        #[arg(long, value_name = "YYYY-MM-DD")]
        to: String,
        #[arg(long, default_value_t = 200)]
        max: usize,
        #[arg(long, default_value = "en")]
        language: String,
        /// `live` or `fixture:<csv>`.
        #[arg(long)]
        source: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split reviews into privacy candidates and the rest.
    Filter {
        /// Keyword themes file (default: the bundled list).
        #[arg(long)]
        keywords: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_candidates: PathBuf,
        #[arg(long)]
        out_rest: PathBuf,
        #[arg(long)]
        decisions: PathBuf,
        /// Also draw this many non-candidates at random.
        #[arg(long, requires = "out_sample")]
        sample_irrelevant: Option<usize>,
        #[arg(long, requires = "sample_irrelevant")]
        out_sample: Option<PathBuf>,
    },
    /// Run the pre- or post-processing stage.
    Prep {
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Drop report (default: `<out>.report`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// 80/10/10 split into train.csv, validation.csv and test.csv.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Expand a training split.
    Augment {
        #[arg(long = "in")]
        input: PathBuf,
        /// `default`, five comma-separated counts, or a TOML file.
        #[arg(long)]
        plan: Option<String>,
        /// `stub` or `cmd:<executable> [args]`.
        #[arg(long)]
        provider: Option<String>,
        #[arg(long)]
        synonyms: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Count report (default: `<out>.report`).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train CBOW word embeddings.
    TrainCbow {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the GRU-attention classifier.
    TrainGrace {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch losses (default: `<out>.trace.csv`).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Train a linear baseline.
    TrainBaseline {
        #[arg(long, value_enum)]
        repr: ReprArg,
        #[arg(long, value_enum, default_value = "log")]
        loss: LossArg,
        #[arg(long)]
        hierarchical: bool,
        /// Required for `--repr cbow-mean`.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label reviews with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model on a labeled test set.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out_report: PathBuf,
        /// Confusion matrix CSV (default: `<report>.confusion.csv`).
        #[arg(long)]
        out_confusion: Option<PathBuf>,
    },
    /// Single-input inference latency and model size.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        warmups: Option<usize>,
        /// Reviews to cycle through (default: one built-in sentence).
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cohen's kappa between two label files, joined on review_id.
    Kappa {
        #[arg(long)]
        file_a: PathBuf,
        #[arg(long)]
        file_b: PathBuf,
        /// Label column in file A (default: gold_label, else label_a, else model_label).
        #[arg(long)]
        column_a: Option<String>,
        /// Label column in file B (default: gold_label, else label_b, else model_label).
        #[arg(long)]
        column_b: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-review MTLD before and after augmentation.
    Diversity {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the annotation service.
    Serve {
        /// Overrides `service.listen`.
        #[arg(long)]
        listen: Option<String>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Scrape { .. } => "scrape",
            Command::Filter { .. } => "filter",
            Command::Prep { .. } => "prep",
            Command::Split { .. } => "split",
            Command::Augment { .. } => "augment",
            Command::TrainCbow { .. } => "train-cbow",
            Command::TrainGrace { .. } => "train-grace",
            Command::TrainBaseline { .. } => "train-baseline",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Bench { .. } => "bench",
            Command::Kappa { .. } => "kappa",
            Command::Diversity { .. } => "diversity",
            Command::Serve { .. } => "serve",
        }
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env("SENSOR_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Parses `args`, runs one subcommand and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let mut settings = Settings::resolve(&Layers {
        file: cli.global.config.as_deref(),
        sets: &cli.global.sets,
        seed: cli.global.seed,
    })?;
    settings.apply_env(std::env::vars())?;
    commands::dispatch(cli.command, &settings, cli.global.manifest.as_deref())
}

pub use error::CliError as Error;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clap_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["sensor", "split"]), 1);
        assert_eq!(run(["sensor", "frobnicate"]), 1);
        assert_eq!(run(["sensor", "kappa", "--file-a", "a", "--file-b", "b", "--bogus"]), 1);
        assert_eq!(run(["sensor", "--help"]), 0);
        assert_eq!(run(["sensor", "train-grace", "--help"]), 0);
    }

    #[test]
    fn bad_settings_exit_one() {
        assert_eq!(run(["sensor", "--set", "grace.nope=1", "split", "--in", "x", "--out-dir", "y"]), 1);
    }
}
