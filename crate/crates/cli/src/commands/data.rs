use std::path::{Path, PathBuf};

use chrono::{NaiveDate, Utc};
use sensor_core::acquisition::{self, AcquisitionError, Backoff, ReviewSource, ScrapeRequest};
use sensor_core::augmentation::{augment_training_set, provider_from_spec, AugPlan, SynonymLexicon};
use sensor_core::corpus::split_dataset;
use sensor_core::privacy_filter::{filter_candidates, sample_irrelevant, write_decisions, KeywordThemes};
use sensor_core::textprep::{run_stage, Stage};

use super::{load_reviews, prep_config, save_reviews, with_suffix, write_text, Ctx};
use crate::error::{CliError, CliResult};
use crate::StageArg;

fn date(flag: &str, s: &str) -> CliResult<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|_| CliError::usage(format!("--{flag}: expected YYYY-MM-DD, got {s:?}")))
}

#[allow(clippy::too_many_arguments)]
pub fn scrape(
    mut ctx: Ctx<'_>,
    app_id: &str,
    from: &str,
    to: &str,
    max: usize,
    language: &str,
    source: &str,
    out: &Path,
) -> CliResult<()> {
    let mut req = ScrapeRequest::new(app_id, date("from", from)?, date("to", to)?, max);
    req.language = language.to_string();
    req.validate().map_err(|e| CliError::usage(e.to_string()))?;
    let src = ReviewSource::parse(source)
        .ok_or_else(|| CliError::usage(format!("--source must be `live` or `fixture:<path>`, got {source:?}")))?;
    if let ReviewSource::FixtureFile(p) = &src {
        super::require_file(p)?;
    }
    let result = acquisition::fetch_all(&src, &req, Backoff::default(), std::thread::sleep).map_err(|e| match e {
        AcquisitionError::InvalidRequest(m) => CliError::usage(m),
        other => CliError::runtime(other),
    })?;
    super::ensure_parent(out)?;
    let m = acquisition::export_scrape(&result.reviews, &req, result.dropped_undated, Utc::now().naive_utc(), out)?;
    eprintln!("scraped {} reviews for {app_id} ({} pages, {} undated dropped)", m.count, result.pages, m.dropped_undated);
    ctx.manifest
        .input("source", Path::new(source))
        .output("reviews", out)
        .output("scrape_manifest", &acquisition::manifest_path(out))
        .fact("count", m.count)
        .fact("dropped_undated", m.dropped_undated)
        .fact("pages", result.pages);
    ctx.finish(out)
}

pub fn filter(
    mut ctx: Ctx<'_>,
    keywords: Option<&Path>,
    input: &Path,
    out_candidates: &Path,
    out_rest: &Path,
    decisions: &Path,
    sample: Option<(usize, PathBuf)>,
) -> CliResult<()> {
    let kw_path = keywords.map(Path::to_path_buf).or_else(|| ctx.settings.filter.keywords.clone());
    let themes = match &kw_path {
        Some(p) => {
            super::require_file(p)?;
            KeywordThemes::load(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?
        }
        None => KeywordThemes::builtin(),
    };
    let reviews = load_reviews(input)?;
    let outcome = filter_candidates(reviews, &themes);
    save_reviews(&outcome.candidates, out_candidates)?;
    save_reviews(&outcome.rest, out_rest)?;
    super::ensure_parent(decisions)?;
    let f = std::fs::File::create(decisions).map_err(CliError::runtime)?;
    write_decisions(std::io::BufWriter::new(f), &outcome.decisions).map_err(CliError::runtime)?;
    eprintln!(
        "{} candidates, {} rest ({} keywords loaded)",
        outcome.candidates.len(),
        outcome.rest.len(),
        themes.keyword_count()
    );
    ctx.manifest.input("reviews", input);
    if let Some(p) = &kw_path {
        ctx.manifest.input("keywords", p);
    }
    ctx.manifest
        .output("candidates", out_candidates)
        .output("rest", out_rest)
        .output("decisions", decisions)
        .fact("candidates", outcome.candidates.len())
        .fact("rest", outcome.rest.len())
        .fact("keywords", themes.keyword_count());
    if let Some((n, path)) = sample {
        let drawn = sample_irrelevant(&outcome.rest, n, ctx.settings.seed).map_err(|e| CliError::usage(e.to_string()))?;
        save_reviews(&drawn, &path)?;
        ctx.manifest.output("sample", &path).fact("sampled", drawn.len());
    }
    ctx.finish(out_candidates)
}

pub fn prep(mut ctx: Ctx<'_>, stage: StageArg, input: &Path, out: &Path, report: Option<PathBuf>) -> CliResult<()> {
    let config = prep_config(ctx.settings)?;
    let reviews = load_reviews(input)?;
    let stage = match stage {
        StageArg::Pre => Stage::Pre,
        StageArg::Post => Stage::Post,
    };
    let (kept, drops) = run_stage(reviews, stage, &config);
    save_reviews(&kept, out)?;
    let report = report.unwrap_or_else(|| with_suffix(out, ".report"));
    write_text(&report, &drops.to_string())?;
    eprintln!(
        "{} stage: {} in, {} kept, {} empty, {} duplicate",
        stage.as_str(),
        drops.inputs,
        drops.survivors,
        drops.empty.len(),
        drops.duplicate.len()
    );
    ctx.manifest
        .input("reviews", input)
        .output("reviews", out)
        .output("report", &report)
        .fact("stage", stage.as_str())
        .fact("inputs", drops.inputs)
        .fact("survivors", drops.survivors);
    if let Some(dir) = &ctx.settings.prep.dir {
        ctx.manifest.input("prep_dir", dir);
    }
    ctx.finish(out)
}

pub fn split(mut ctx: Ctx<'_>, input: &Path, out_dir: &Path) -> CliResult<()> {
    let reviews = load_reviews(input)?;
    let s = split_dataset(reviews, ctx.settings.seed).map_err(|e| CliError::usage(e.to_string()))?;
    let paths = [
        ("train", out_dir.join("train.csv"), &s.train),
        ("validation", out_dir.join("validation.csv"), &s.validation),
        ("test", out_dir.join("test.csv"), &s.test),
    ];
    ctx.manifest.input("reviews", input);
    for (name, path, part) in &paths {
        save_reviews(part, path)?;
        ctx.manifest.output(name, path).fact(name, part.len());
    }
    let split_manifest = out_dir.join("split.manifest");
    write_text(&split_manifest, &s.manifest.to_string())?;
    ctx.manifest.output("split_manifest", &split_manifest);
    eprintln!("split {} reviews into {:?}", s.manifest.total, s.manifest.counts);
    ctx.finish(&out_dir.join("split"))
}

/// `default`, five comma-separated counts, or a TOML file of `AugPlan` fields.
fn resolve_plan(spec: Option<&str>, base: &AugPlan) -> CliResult<AugPlan> {
    let Some(spec) = spec else {
        return Ok(base.clone());
    };
    let keep_rates = |p: AugPlan| AugPlan {
        seed: base.seed,
        drop_prob: base.drop_prob,
        sub_prob: base.sub_prob,
        ..p
    };
    if spec == "default" {
        return Ok(keep_rates(AugPlan::default()));
    }
    if spec.split(',').count() == 5 && spec.split(',').all(|c| c.trim().parse::<usize>().is_ok()) {
        let n: Vec<usize> = spec.split(',').map(|c| c.trim().parse().expect("checked")).collect();
        return Ok(AugPlan {
            random_word_drop: n[0],
            synonym_substitution: n[1],
            contextual_substitution: n[2],
            contextual_insertion: n[3],
            abstract_summarization: n[4],
            ..base.clone()
        });
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(CliError::usage(format!(
            "--plan must be `default`, five counts like 2,2,2,2,1, or a TOML file; got {spec:?}"
        )));
    }
    let text = std::fs::read_to_string(path).map_err(CliError::runtime)?;
    let plan: AugPlan = toml::from_str(&text).map_err(|e| CliError::usage(format!("{spec}: {e}")))?;
    Ok(AugPlan { seed: base.seed, ..plan })
}

pub fn augment(
    mut ctx: Ctx<'_>,
    input: &Path,
    plan: Option<&str>,
    provider: Option<String>,
    synonyms: Option<PathBuf>,
    out: &Path,
    report: Option<PathBuf>,
) -> CliResult<()> {
    let settings = ctx.settings;
    let plan = resolve_plan(plan, &settings.augment.plan)?;
    let provider_spec = provider.unwrap_or_else(|| settings.augment.provider.clone());
    let synonyms = synonyms.or_else(|| settings.augment.synonyms.clone());
    let lexicon = match &synonyms {
        Some(p) => {
            super::require_file(p)?;
            SynonymLexicon::load(p).map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?
        }
        None => SynonymLexicon::builtin(),
    };
    let train = load_reviews(input)?;
    if train.is_empty() {
        return Err(CliError::usage(format!("{}: no reviews to augment", input.display())));
    }
    let provider = provider_from_spec(&provider_spec).map_err(|e| CliError::usage(e.to_string()))?;
    let (all, rep) = augment_training_set(&train, &plan, &lexicon, provider.as_ref()).map_err(|e| match e {
        sensor_core::augmentation::AugError::BadProbability(_) => CliError::usage(e.to_string()),
        other => CliError::runtime(other),
    })?;
    save_reviews(&all, out)?;
    let report = report.unwrap_or_else(|| with_suffix(out, ".report"));
    write_text(&report, &rep.to_string())?;
    eprintln!(
        "{} originals + {} generated ({} planned, {} skipped)",
        rep.originals, rep.generated, rep.planned, rep.skipped
    );
    ctx.manifest.input("train", input);
    if let Some(p) = &synonyms {
        ctx.manifest.input("synonyms", p);
    }
    ctx.manifest
        .output("augmented", out)
        .output("report", &report)
        .fact("provider", &provider_spec)
        .fact(
            "plan",
            format!(
                "{},{},{},{},{}",
                plan.random_word_drop,
                plan.synonym_substitution,
                plan.contextual_substitution,
                plan.contextual_insertion,
                plan.abstract_summarization
            ),
        )
        .fact("originals", rep.originals)
        .fact("generated", rep.generated)
        .fact("skipped", rep.skipped);
    ctx.finish(out)
}
