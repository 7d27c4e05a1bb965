use std::path::{Path, PathBuf};

use sensor_core::baselines::{Baseline, BaselineError, Loss, Representation, TfidfVectorizer};
use sensor_core::cbow::{self, CbowError, EmbeddingMatrix};
use sensor_core::grace::{self, EncodedSet, GraceError, GraceModel};

use super::{ensure_parent, ensure_tokens, gold_labels, load_reviews, prep_config, require_file, token_lists, with_suffix, write_text, Ctx};
use crate::error::{CliError, CliResult};
use crate::{LossArg, ReprArg};

fn cbow_error(e: CbowError) -> CliError {
    match e {
        CbowError::Io(_) => CliError::runtime(e),
        other => CliError::usage(other.to_string()),
    }
}

fn grace_error(e: GraceError) -> CliError {
    match e {
        GraceError::Config(_)
        | GraceError::EmptySet(_)
        | GraceError::Untokenized(_)
        | GraceError::EmbeddingDim { .. }
        | GraceError::VocabMismatch
        | GraceError::Shape(_) => CliError::usage(e.to_string()),
        other => CliError::runtime(other),
    }
}

fn load_embeddings(path: &Path) -> CliResult<EmbeddingMatrix> {
    require_file(path)?;
    EmbeddingMatrix::load(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

pub fn cbow(mut ctx: Ctx<'_>, input: &Path, out: &Path) -> CliResult<()> {
    let prep = prep_config(ctx.settings)?;
    let mut reviews = load_reviews(input)?;
    ensure_tokens(&mut reviews, &prep);
    let docs = token_lists(&reviews);
    let cfg = &ctx.settings.cbow;
    let (emb, trace) = cbow::train_cbow(&docs, cfg).map_err(cbow_error)?;
    ensure_parent(out)?;
    emb.save(out).map_err(CliError::runtime)?;
    let final_loss = trace.epoch_loss.last().copied().unwrap_or(f64::NAN);
    eprintln!(
        "{} words x {} dims, {} examples/epoch, final loss {final_loss:.5}",
        emb.vocab.len(),
        emb.dim(),
        trace.examples_per_epoch
    );
    ctx.manifest
        .input("tokens", input)
        .output("embeddings", out)
        .fact("vocab", emb.vocab.len())
        .fact("dim", emb.dim())
        .fact("epochs", trace.epoch_loss.len())
        .fact("final_loss", final_loss);
    ctx.finish(out)
}

fn labeled_docs(path: &Path, ctx: &Ctx<'_>) -> CliResult<(Vec<Vec<String>>, Vec<sensor_core::Label>)> {
    let prep = prep_config(ctx.settings)?;
    let mut reviews = load_reviews(path)?;
    ensure_tokens(&mut reviews, &prep);
    let labels = gold_labels(&reviews, path)?;
    Ok((token_lists(&reviews), labels))
}

pub fn grace(
    mut ctx: Ctx<'_>,
    train: &Path,
    val: &Path,
    embeddings: &Path,
    out: &Path,
    trace_path: Option<PathBuf>,
) -> CliResult<()> {
    let emb = load_embeddings(embeddings)?;
    let (train_docs, train_labels) = labeled_docs(train, &ctx)?;
    let (val_docs, val_labels) = labeled_docs(val, &ctx)?;
    let mut cfg = ctx.settings.grace.clone();
    cfg.embed_dim = emb.dim();
    let train_cfg = &ctx.settings.train;
    let mut model = GraceModel::new(cfg, &emb, train_cfg.seed).map_err(grace_error)?;
    let tr = EncodedSet::from_tokens(&model.vocab, &train_docs, &train_labels, model.config.max_len).map_err(grace_error)?;
    let va = EncodedSet::from_tokens(&model.vocab, &val_docs, &val_labels, model.config.max_len).map_err(grace_error)?;
    let trace_path = trace_path.unwrap_or_else(|| with_suffix(out, ".trace.csv"));
    let result = grace::train_with_progress(&mut model, &tr, &va, train_cfg, |epoch, t| {
        tracing::info!(
            epoch,
            train_loss = t.train_loss[epoch - 1],
            val_loss = t.val_loss[epoch - 1],
            val_accuracy = t.val_accuracy[epoch - 1],
            "epoch done"
        );
    });
    let trace = match result {
        Ok(t) => t,
        Err(GraceError::Diverged { epoch, trace }) => {
            write_text(&trace_path, &trace.to_string())?;
            return Err(CliError::runtime(anyhow::anyhow!(
                "training diverged at epoch {epoch}; partial trace in {}",
                trace_path.display()
            )));
        }
        Err(e) => return Err(grace_error(e)),
    };
    ensure_parent(out)?;
    model.save(out).map_err(CliError::runtime)?;
    write_text(&trace_path, &trace.to_string())?;
    let best_val = trace.val_loss.get(trace.best_epoch.wrapping_sub(1)).copied().unwrap_or(f64::NAN);
    eprintln!(
        "stopped at epoch {}, best epoch {} (val loss {best_val:.5}), {} parameters",
        trace.stopped_epoch,
        trace.best_epoch,
        model.param_count()
    );
    ctx.manifest
        .input("train", train)
        .input("validation", val)
        .input("embeddings", embeddings)
        .output("model", out)
        .output("trace", &trace_path)
        .fact("train_examples", tr.len())
        .fact("validation_examples", va.len())
        .fact("parameters", model.param_count())
        .fact("stopped_epoch", trace.stopped_epoch)
        .fact("best_epoch", trace.best_epoch)
        .fact("best_val_loss", best_val);
    ctx.finish(out)
}

#[allow(clippy::too_many_arguments)]
pub fn baseline(
    mut ctx: Ctx<'_>,
    repr: ReprArg,
    loss: LossArg,
    hierarchical: bool,
    embeddings: Option<&Path>,
    input: &Path,
    out: &Path,
) -> CliResult<()> {
    let (docs, labels) = labeled_docs(input, &ctx)?;
    let representation = match repr {
        ReprArg::Tfidf => Representation::Tfidf(TfidfVectorizer::fit(&docs).map_err(|e| CliError::usage(e.to_string()))?),
        ReprArg::CbowMean => {
            let path = embeddings.ok_or_else(|| CliError::usage("--repr cbow-mean requires --embeddings"))?;
            Representation::CbowMean(load_embeddings(path)?)
        }
    };
    let mut cfg = ctx.settings.baseline.clone();
    cfg.loss = match loss {
        LossArg::Log => Loss::Log,
        LossArg::Hinge => Loss::Hinge,
    };
    let model = Baseline::train(representation, &docs, &labels, hierarchical, &cfg).map_err(|e| match e {
        BaselineError::Diverged => CliError::runtime(e),
        other => CliError::usage(other.to_string()),
    })?;
    ensure_parent(out)?;
    model.save(out).map_err(CliError::runtime)?;
    let head = if hierarchical { "hierarchical" } else { "flat" };
    eprintln!("trained {head} {} baseline on {} reviews", model.repr.name(), docs.len());
    ctx.manifest.input("train", input);
    if let Some(p) = embeddings {
        ctx.manifest.input("embeddings", p);
    }
    ctx.manifest
        .output("model", out)
        .fact("repr", model.repr.name())
        .fact("head", head)
        .fact("loss", format!("{:?}", cfg.loss).to_lowercase())
        .fact("features", model.repr.dim())
        .fact("examples", docs.len());
    ctx.finish(out)
}
