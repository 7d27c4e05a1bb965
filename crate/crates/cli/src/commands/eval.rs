use std::collections::HashMap;
use std::path::{Path, PathBuf};

use sensor_core::classifier::{load_classifier, Classifier, ClassifierError};
use sensor_core::metrics::{self, cohens_kappa, diversity_profile, time_runs, AgreementTable, BenchReport};
use sensor_core::{Label, Review};

use super::{ensure_parent, ensure_tokens, gold_labels, load_reviews, prep_config, require_file, save_reviews, token_lists, with_suffix, write_text, Ctx};
use crate::error::{CliError, CliResult};

type Model = Box<dyn Classifier + Send + Sync>;

fn load_model(path: &Path) -> CliResult<Model> {
    require_file(path)?;
    load_classifier(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn classify(model: &Model, docs: &[Vec<String>]) -> CliResult<Vec<sensor_core::classifier::Scored>> {
    model.classify(docs).map_err(|e| match e {
        ClassifierError::Untokenized(_) => CliError::usage(e.to_string()),
        other => CliError::runtime(other),
    })
}

pub fn predict(mut ctx: Ctx<'_>, model_path: &Path, input: &Path, out: &Path) -> CliResult<()> {
    let model = load_model(model_path)?;
    let prep = prep_config(ctx.settings)?;
    let mut reviews = load_reviews(input)?;
    ensure_tokens(&mut reviews, &prep);
    let scored = classify(&model, &token_lists(&reviews))?;
    let mut counts = [0usize; sensor_core::NUM_CLASSES];
    for (r, s) in reviews.iter_mut().zip(scored) {
        counts[s.label.code()] += 1;
        r.model_label = Some(s.label);
        r.model_probs = Some(s.scores);
    }
    save_reviews(&reviews, out)?;
    eprintln!("labeled {} reviews", reviews.len());
    ctx.manifest.input("model", model_path).input("reviews", input).output("predictions", out);
    for l in Label::ALL {
        ctx.manifest.fact(l.as_str(), counts[l.code()]);
    }
    ctx.finish(out)
}

pub fn evaluate(
    mut ctx: Ctx<'_>,
    model_path: &Path,
    test: &Path,
    out_report: &Path,
    out_confusion: Option<PathBuf>,
) -> CliResult<()> {
    let model = load_model(model_path)?;
    let prep = prep_config(ctx.settings)?;
    let mut reviews = load_reviews(test)?;
    ensure_tokens(&mut reviews, &prep);
    let truth: Vec<usize> = gold_labels(&reviews, test)?.iter().map(|l| l.code()).collect();
    let scored = classify(&model, &token_lists(&reviews))?;
    let pred: Vec<usize> = scored.iter().map(|s| s.label.code()).collect();
    let scores: Vec<[f64; sensor_core::NUM_CLASSES]> = scored.iter().map(|s| s.scores).collect();
    let report = metrics::evaluate(&truth, &pred, &scores).map_err(|e| CliError::usage(e.to_string()))?;
    write_text(out_report, &report.to_string())?;
    let confusion = out_confusion.unwrap_or_else(|| with_suffix(out_report, ".confusion.csv"));
    let mut buf = Vec::new();
    let names: Vec<&str> = Label::ALL.iter().map(|l| l.as_str()).collect();
    report.confusion.write_csv(&mut buf, &names)?;
    ensure_parent(&confusion)?;
    std::fs::write(&confusion, buf)?;
    eprintln!(
        "accuracy {:.4}, macro F1 {:.4} on {} reviews",
        report.prf.accuracy, report.prf.macro_f1, report.prf.total
    );
    ctx.manifest
        .input("model", model_path)
        .input("test", test)
        .output("report", out_report)
        .output("confusion", &confusion)
        .fact("accuracy", report.prf.accuracy)
        .fact("macro_f1", report.prf.macro_f1)
        .fact(
            "macro_roc_auc",
            report.auc.as_ref().map(|a| a.macro_auc.to_string()).unwrap_or_else(|| "undefined".into()),
        );
    ctx.finish(out_report)
}

const BENCH_SENTENCE: &str = "this app keeps asking for my location and contacts even though it does not need them";

pub fn bench(
    mut ctx: Ctx<'_>,
    model_path: &Path,
    runs: Option<usize>,
    warmups: Option<usize>,
    input: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<()> {
    let model = load_model(model_path)?;
    let prep = prep_config(ctx.settings)?;
    let mut reviews = match input {
        Some(p) => load_reviews(p)?,
        None => vec![Review::new("bench", BENCH_SENTENCE)],
    };
    if reviews.is_empty() {
        return Err(CliError::usage("bench input has no reviews"));
    }
    ensure_tokens(&mut reviews, &prep);
    let docs: Vec<Vec<Vec<String>>> = token_lists(&reviews).into_iter().map(|d| vec![d]).collect();
    let runs = runs.unwrap_or(ctx.settings.metrics.bench_runs);
    let warmups = warmups.unwrap_or(ctx.settings.metrics.bench_warmups);
    if runs == 0 {
        return Err(CliError::usage("--runs must be at least 1"));
    }
    let mut i = 0;
    let mut failure = None;
    let timing = time_runs(runs, warmups, || {
        let doc = &docs[i % docs.len()];
        i += 1;
        if let Err(e) = model.classify(doc) {
            failure.get_or_insert(e);
        }
    });
    if let Some(e) = failure {
        return Err(CliError::runtime(e));
    }
    let report = BenchReport {
        size_bytes: std::fs::metadata(model_path)?.len(),
        timing,
    };
    let text = report.to_string();
    match out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    ctx.manifest.input("model", model_path);
    if let Some(p) = input {
        ctx.manifest.input("reviews", p);
    }
    if let Some(p) = out {
        ctx.manifest.output("report", p);
    }
    ctx.manifest
        .fact("size_bytes", report.size_bytes)
        .fact("runs", timing.runs)
        .fact("warmups", timing.warmups)
        .fact("min_ms", timing.min_ms)
        .fact("mean_ms", timing.mean_ms)
        .fact("max_ms", timing.max_ms);
    let primary = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("sensor-bench"));
    ctx.finish(&primary)
}

fn label_of(r: &Review, column: &str) -> Option<Label> {
    match column {
        "gold_label" => r.gold_label,
        "label_a" => r.label_a,
        "label_b" => r.label_b,
        "model_label" => r.model_label,
        other => r
            .extra
            .iter()
            .find(|(k, _)| k == other)
            .and_then(|(_, v)| v.parse().ok()),
    }
}

fn pick_column(reviews: &[Review], explicit: Option<&str>, fallbacks: &[&'static str], path: &Path) -> CliResult<String> {
    if let Some(c) = explicit {
        return Ok(c.to_string());
    }
    fallbacks
        .iter()
        .find(|c| reviews.iter().any(|r| label_of(r, c).is_some()))
        .map(|c| c.to_string())
        .ok_or_else(|| CliError::usage(format!("{}: no label column among {}", path.display(), fallbacks.join(", "))))
}

pub fn kappa(
    mut ctx: Ctx<'_>,
    file_a: &Path,
    file_b: &Path,
    column_a: Option<&str>,
    column_b: Option<&str>,
    out: Option<&Path>,
) -> CliResult<()> {
    let a = load_reviews(file_a)?;
    let b = load_reviews(file_b)?;
    let col_a = pick_column(&a, column_a, &["gold_label", "label_a", "model_label"], file_a)?;
    let col_b = pick_column(&b, column_b, &["gold_label", "label_b", "model_label"], file_b)?;
    let b_labels: HashMap<&str, Label> = b
        .iter()
        .filter_map(|r| label_of(r, &col_b).map(|l| (r.review_id.as_str(), l)))
        .collect();
    let (la, lb): (Vec<Label>, Vec<Label>) = a
        .iter()
        .filter_map(|r| Some((label_of(r, &col_a)?, *b_labels.get(r.review_id.as_str())?)))
        .unzip();
    if la.is_empty() {
        return Err(CliError::usage("the two files share no labeled review_id"));
    }
    let table = AgreementTable::from_labels(&la, &lb).map_err(|e| CliError::usage(e.to_string()))?;
    let k = cohens_kappa(&table).map_err(|e| CliError::usage(e.to_string()))?;
    let mut text = format!("items = {}\nkappa = {:.6}\ndegenerate = {}\n", la.len(), k.value, k.degenerate);
    for (i, row) in table.counts.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        text.push_str(&format!("table.{} = {}\n", Label::ALL[i].as_str(), cells.join(",")));
    }
    match out {
        Some(p) => write_text(p, &text)?,
        None => print!("{text}"),
    }
    ctx.manifest
        .input("file_a", file_a)
        .input("file_b", file_b)
        .fact("column_a", &col_a)
        .fact("column_b", &col_b)
        .fact("items", la.len())
        .fact("kappa", k.value)
        .fact("degenerate", k.degenerate);
    if let Some(p) = out {
        ctx.manifest.output("report", p);
    }
    let primary = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("sensor-kappa"));
    ctx.finish(&primary)
}

pub fn diversity(mut ctx: Ctx<'_>, before: &Path, after: &Path, out: &Path) -> CliResult<()> {
    let prep = prep_config(ctx.settings)?;
    let mut b = load_reviews(before)?;
    let mut a = load_reviews(after)?;
    ensure_tokens(&mut b, &prep);
    ensure_tokens(&mut a, &prep);
    let profile = diversity_profile(&token_lists(&b), &token_lists(&a), ctx.settings.metrics.mtld_threshold);
    let mut buf = Vec::new();
    profile.write_csv(&mut buf)?;
    ensure_parent(out)?;
    std::fs::write(out, buf)?;
    let mean = |v: &[f64]| metrics::summarize(v).map(|s| s.mean).unwrap_or(f64::NAN);
    eprintln!(
        "mean MTLD {:.3} before, {:.3} after",
        mean(&profile.before),
        mean(&profile.after)
    );
    ctx.manifest
        .input("before", before)
        .input("after", after)
        .output("profile", out)
        .fact("threshold", ctx.settings.metrics.mtld_threshold)
        .fact("scored_before", profile.before.len())
        .fact("scored_after", profile.after.len())
        .fact("skipped_before", profile.skipped_before)
        .fact("skipped_after", profile.skipped_after);
    ctx.finish(out)
}
