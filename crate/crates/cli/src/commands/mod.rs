mod data;
mod eval;
mod serve;
mod train;

use std::path::{Path, PathBuf};

use sensor_core::corpus::{self, ColumnMapping, CorpusError};
use sensor_core::textprep::{postprocess, preprocess, PrepConfig};
use sensor_core::{Label, Review};

use crate::config::Settings;
use crate::error::{CliError, CliResult};
use crate::manifest::{self, RunManifest};
use crate::Command;

/// Shared state for one invocation.
pub struct Ctx<'a> {
    pub settings: &'a Settings,
    pub manifest_path: Option<&'a Path>,
    pub manifest: RunManifest,
}

impl Ctx<'_> {
    /// Stamps the finish time and writes the manifest beside `primary`.
    pub fn finish(mut self, primary: &Path) -> CliResult<()> {
        self.manifest.finish();
        let path = self
            .manifest_path
            .map(Path::to_path_buf)
            .unwrap_or_else(|| manifest::beside(primary));
        self.manifest
            .write(&path)
            .map_err(|e| CliError::runtime(anyhow::anyhow!("writing manifest {}: {e}", path.display())))
    }
}

pub fn dispatch(cmd: Command, settings: &Settings, manifest_path: Option<&Path>) -> CliResult<()> {
    let ctx = Ctx {
        settings,
        manifest_path,
        manifest: RunManifest::new(cmd.name(), &settings.hash(), settings.seed),
    };
    match cmd {
        Command::Scrape {
            app_id,
            from,
            to,
            max,
            language,
            source,
            out,
        } => data::scrape(ctx, &app_id, &from, &to, max, &language, &source, &out),
        Command::Filter {
            keywords,
            input,
            out_candidates,
            out_rest,
            decisions,
            sample_irrelevant,
            out_sample,
        } => data::filter(
            ctx,
            keywords.as_deref(),
            &input,
            &out_candidates,
            &out_rest,
            &decisions,
            sample_irrelevant.zip(out_sample),
        ),
        Command::Prep {
            stage,
            input,
            out,
            report,
        } => data::prep(ctx, stage, &input, &out, report),
        Command::Split { input, out_dir } => data::split(ctx, &input, &out_dir),
        Command::Augment {
            input,
            plan,
            provider,
            synonyms,
            out,
            report,
        } => data::augment(ctx, &input, plan.as_deref(), provider, synonyms, &out, report),
        Command::TrainCbow { input, out } => train::cbow(ctx, &input, &out),
        Command::TrainGrace {
            train,
            val,
            embeddings,
            out,
            trace,
        } => train::grace(ctx, &train, &val, &embeddings, &out, trace),
        Command::TrainBaseline {
            repr,
            loss,
            hierarchical,
            embeddings,
            input,
            out,
        } => train::baseline(ctx, repr, loss, hierarchical, embeddings.as_deref(), &input, &out),
        Command::Predict { model, input, out } => eval::predict(ctx, &model, &input, &out),
        Command::Evaluate {
            model,
            test,
            out_report,
            out_confusion,
        } => eval::evaluate(ctx, &model, &test, &out_report, out_confusion),
        Command::Bench {
            model,
            runs,
            warmups,
            input,
            out,
        } => eval::bench(ctx, &model, runs, warmups, input.as_deref(), out.as_deref()),
        Command::Kappa {
            file_a,
            file_b,
            column_a,
            column_b,
            out,
        } => eval::kappa(ctx, &file_a, &file_b, column_a.as_deref(), column_b.as_deref(), out.as_deref()),
        Command::Diversity { before, after, out } => eval::diversity(ctx, &before, &after, &out),
        Command::Serve { listen } => serve::serve(ctx, listen),
    }
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("input file {} does not exist", path.display())))
    }
}

fn corpus_error(path: &Path, e: CorpusError) -> CliError {
    match e {
        CorpusError::Io { .. } => CliError::runtime(e),
        other => CliError::usage(format!("{}: {other}", path.display())),
    }
}

pub fn load_reviews(path: &Path) -> CliResult<Vec<Review>> {
    require_file(path)?;
    corpus::load_csv(path, &ColumnMapping::default()).map_err(|e| corpus_error(path, e))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::runtime(anyhow::anyhow!("creating {}: {e}", dir.display())))?;
    }
    Ok(())
}

pub fn save_reviews(reviews: &[Review], path: &Path) -> CliResult<()> {
    ensure_parent(path)?;
    corpus::save_csv(reviews, path, true).map_err(CliError::runtime)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| CliError::runtime(anyhow::anyhow!("writing {}: {e}", path.display())))
}

pub fn prep_config(settings: &Settings) -> CliResult<PrepConfig> {
    match &settings.prep.dir {
        Some(dir) => PrepConfig::load_dir(dir).map_err(|e| CliError::usage(e.to_string())),
        None => Ok(PrepConfig::builtin()),
    }
}

/// Tokenizes any review that arrives without a tokens column.
pub fn ensure_tokens(reviews: &mut [Review], prep: &PrepConfig) {
    for r in reviews.iter_mut().filter(|r| r.tokens.is_none()) {
        let text = match &r.processed_text {
            Some(p) => p.clone(),
            None => preprocess(&r.raw_text, prep),
        };
        r.tokens = Some(postprocess(&text, prep));
    }
}

pub fn token_lists(reviews: &[Review]) -> Vec<Vec<String>> {
    reviews.iter().map(|r| r.tokens.clone().unwrap_or_default()).collect()
}

pub fn gold_labels(reviews: &[Review], path: &Path) -> CliResult<Vec<Label>> {
    reviews
        .iter()
        .map(|r| {
            r.gold_label.ok_or_else(|| {
                CliError::usage(format!("{}: review {} has no gold_label", path.display(), r.review_id))
            })
        })
        .collect()
}

/// `<path><suffix>`, e.g. `model.bin` + `.trace.csv`.
pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
