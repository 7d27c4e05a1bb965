//! Review data model, CSV persistence, deduplication and seeded splitting.
//!
//! The CSV layout is the exchange format for every stage of the pipeline.
//! Canonical columns are always written in [`CANONICAL_COLUMNS`] order; the
//! optional `tokens` and `prob_*` columns follow when any review carries them,
//! and unknown input columns are carried through untouched at the end.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::label::{Label, NUM_CLASSES};
use crate::seed;

pub const CANONICAL_COLUMNS: [&str; 12] = [
    "review_id",
    "app_id",
    "posted_at",
    "rating",
    "raw_text",
    "processed_text",
    "source",
    "parent_id",
    "label_a",
    "label_b",
    "gold_label",
    "model_label",
];

const TOKENS_COLUMN: &str = "tokens";
const PROB_COLUMNS: [&str; NUM_CLASSES] = ["prob_pfr", "prob_pb", "prob_pir"];

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("missing required text column (looked for raw_text/content/text/review)")]
    MissingTextColumn,
    #[error("malformed CSV: {0}")]
    Csv(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Scraped,
    #[default]
    Uploaded,
    Augmented,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Scraped => "scraped",
            Source::Uploaded => "uploaded",
            Source::Augmented => "augmented",
        }
    }

    pub fn parse(s: &str) -> Option<Source> {
        match s.trim().to_ascii_lowercase().as_str() {
            "scraped" => Some(Source::Scraped),
            "uploaded" => Some(Source::Uploaded),
            "augmented" => Some(Source::Augmented),
            _ => None,
        }
    }
}

/// One user review with provenance, text stages and labels.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Review {
    pub review_id: String,
    pub app_id: String,
    pub posted_at: Option<NaiveDate>,
    pub rating: Option<u8>,
    pub raw_text: String,
    pub processed_text: Option<String>,
    pub tokens: Option<Vec<String>>,
    pub source: Source,
    pub parent_id: Option<String>,
    pub label_a: Option<Label>,
    pub label_b: Option<Label>,
    pub gold_label: Option<Label>,
    pub model_label: Option<Label>,
    pub model_probs: Option<[f64; NUM_CLASSES]>,
    /// Columns this crate does not interpret, in input order.
    pub extra: Vec<(String, String)>,
}

impl Review {
    pub fn new(review_id: impl Into<String>, raw_text: impl Into<String>) -> Self {
        Review {
            review_id: review_id.into(),
            raw_text: raw_text.into(),
            ..Review::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Field {
    ReviewId,
    AppId,
    PostedAt,
    Rating,
    RawText,
    ProcessedText,
    Source,
    ParentId,
    LabelA,
    LabelB,
    GoldLabel,
    ModelLabel,
    Tokens,
    Prob(usize),
}

fn normalize_header(h: &str) -> String {
    h.trim_start_matches('\u{feff}')
        .chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

/// Maps input column names onto review fields. Names are compared after
/// lowercasing and dropping non-alphanumerics, so `reviewId`, `review_id`
/// and `Review ID` are the same column.
#[derive(Debug, Clone)]
pub struct ColumnMapping {
    aliases: HashMap<String, Field>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        let table: &[(&str, Field)] = &[
            ("review_id", Field::ReviewId),
            ("id", Field::ReviewId),
            ("app_id", Field::AppId),
            ("app", Field::AppId),
            ("posted_at", Field::PostedAt),
            ("at", Field::PostedAt),
            ("date", Field::PostedAt),
            ("rating", Field::Rating),
            ("score", Field::Rating),
            ("raw_text", Field::RawText),
            ("content", Field::RawText),
            ("text", Field::RawText),
            ("review", Field::RawText),
            ("review_text", Field::RawText),
            ("processed_text", Field::ProcessedText),
            ("source", Field::Source),
            ("parent_id", Field::ParentId),
            ("label_a", Field::LabelA),
            ("label_b", Field::LabelB),
            ("gold_label", Field::GoldLabel),
            ("label", Field::GoldLabel),
            ("model_label", Field::ModelLabel),
            (TOKENS_COLUMN, Field::Tokens),
            (PROB_COLUMNS[0], Field::Prob(0)),
            (PROB_COLUMNS[1], Field::Prob(1)),
            (PROB_COLUMNS[2], Field::Prob(2)),
        ];
        ColumnMapping {
            aliases: table
                .iter()
                .map(|(name, f)| (normalize_header(name), *f))
                .collect(),
        }
    }
}

impl ColumnMapping {
    /// Adds an extra input name for the text column.
    pub fn with_text_alias(mut self, name: &str) -> Self {
        self.aliases.insert(normalize_header(name), Field::RawText);
        self
    }

    fn resolve(&self, header: &str) -> Option<Field> {
        self.aliases.get(&normalize_header(header)).copied()
    }
}

/// How unparseable `posted_at` cells are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DatePolicy {
    /// A non-empty cell that is not a date fails the row.
    #[default]
    Strict,
    /// The date becomes absent; the caller decides what to do with the row.
    Lenient,
}

/// Accepts `YYYY-MM-DD` optionally followed by a time part.
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    let head = s.get(..10)?;
    let date = NaiveDate::parse_from_str(head, "%Y-%m-%d").ok()?;
    match s.as_bytes().get(10) {
        None | Some(b' ') | Some(b'T') => Some(date),
        _ => None,
    }
}

pub fn load_csv(path: &Path, mapping: &ColumnMapping) -> Result<Vec<Review>> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, mapping, DatePolicy::Strict)
}

/// Parses reviews from any reader holding RFC-4180 CSV with a header row.
pub fn read_csv<R: Read>(
    reader: R,
    mapping: &ColumnMapping,
    dates: DatePolicy,
) -> Result<Vec<Review>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CorpusError::Csv(e.to_string()))?
        .clone();
    let columns: Vec<Option<Field>> = headers.iter().map(|h| mapping.resolve(h)).collect();
    if !columns.contains(&Some(Field::RawText)) {
        return Err(CorpusError::MissingTextColumn);
    }
    let extra_names: Vec<String> = headers
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').to_string())
        .collect();
    let has_ids = columns.contains(&Some(Field::ReviewId));

    let mut out = Vec::new();
    let mut seen_ids = HashSet::new();
    for (row_no, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CorpusError::Row {
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(row_no as u64 + 2);
        let row_err = |message: String| CorpusError::Row { line, message };

        let mut review = Review::default();
        let mut probs = [None; NUM_CLASSES];
        for (i, cell) in record.iter().enumerate() {
            let Some(field) = columns[i] else {
                review.extra.push((extra_names[i].clone(), cell.to_string()));
                continue;
            };
            if cell.is_empty() {
                continue;
            }
            let parse_label = |c: &str| c.parse::<Label>().map_err(|e| row_err(e.to_string()));
            match field {
                Field::ReviewId => review.review_id = cell.to_string(),
                Field::AppId => review.app_id = cell.to_string(),
                Field::PostedAt => match (parse_date(cell), dates) {
                    (Some(d), _) => review.posted_at = Some(d),
                    (None, DatePolicy::Lenient) => {}
                    (None, DatePolicy::Strict) => {
                        return Err(row_err(format!("unparseable date {cell:?}")))
                    }
                },
                Field::Rating => {
                    let r: u8 = cell
                        .trim()
                        .parse()
                        .ok()
                        .filter(|r| (1..=5).contains(r))
                        .ok_or_else(|| row_err(format!("rating {cell:?} not in 1..=5")))?;
                    review.rating = Some(r);
                }
                Field::RawText => review.raw_text = cell.to_string(),
                Field::ProcessedText => review.processed_text = Some(cell.to_string()),
                Field::Source => {
                    review.source = Source::parse(cell)
                        .ok_or_else(|| row_err(format!("unknown source {cell:?}")))?
                }
                Field::ParentId => review.parent_id = Some(cell.to_string()),
                Field::LabelA => review.label_a = Some(parse_label(cell)?),
                Field::LabelB => review.label_b = Some(parse_label(cell)?),
                Field::GoldLabel => review.gold_label = Some(parse_label(cell)?),
                Field::ModelLabel => review.model_label = Some(parse_label(cell)?),
                Field::Tokens => {
                    review.tokens = Some(cell.split_whitespace().map(str::to_string).collect())
                }
                Field::Prob(k) => {
                    let p: f64 = cell
                        .trim()
                        .parse()
                        .map_err(|_| row_err(format!("bad probability {cell:?}")))?;
                    probs[k] = Some(p);
                }
            }
        }
        if let [Some(a), Some(b), Some(c)] = probs {
            review.model_probs = Some([a, b, c]);
        }
        if review.raw_text.trim().is_empty() {
            return Err(row_err("empty review text".into()));
        }
        if !has_ids || review.review_id.is_empty() {
            review.review_id = format!("row-{}", row_no + 1);
        }
        if !seen_ids.insert(review.review_id.clone()) {
            return Err(row_err(format!("duplicate review_id {:?}", review.review_id)));
        }
        out.push(review);
    }
    Ok(out)
}

fn opt_label(l: Option<Label>) -> &'static str {
    l.map(Label::as_str).unwrap_or("")
}

/// Writes reviews in the canonical layout. With `include_labels` off the four
/// label columns are written empty.
pub fn write_csv<W: Write>(writer: W, reviews: &[Review], include_labels: bool) -> Result<()> {
    let with_tokens = reviews.iter().any(|r| r.tokens.is_some());
    let with_probs = reviews.iter().any(|r| r.model_probs.is_some());
    let mut extra_cols: Vec<&str> = Vec::new();
    for r in reviews {
        for (k, _) in &r.extra {
            if !extra_cols.contains(&k.as_str()) {
                extra_cols.push(k);
            }
        }
    }

    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let mut header: Vec<&str> = CANONICAL_COLUMNS.to_vec();
    if with_tokens {
        header.push(TOKENS_COLUMN);
    }
    if with_probs {
        header.extend(PROB_COLUMNS);
    }
    header.extend(extra_cols.iter().copied());
    let csv_err = |e: csv::Error| CorpusError::Csv(e.to_string());
    w.write_record(&header).map_err(csv_err)?;

    for r in reviews {
        let labels = |l: Option<Label>| if include_labels { opt_label(l) } else { "" };
        let mut row: Vec<String> = vec![
            r.review_id.clone(),
            r.app_id.clone(),
            r.posted_at.map(|d| d.to_string()).unwrap_or_default(),
            r.rating.map(|x| x.to_string()).unwrap_or_default(),
            r.raw_text.clone(),
            r.processed_text.clone().unwrap_or_default(),
            r.source.as_str().to_string(),
            r.parent_id.clone().unwrap_or_default(),
            labels(r.label_a).to_string(),
            labels(r.label_b).to_string(),
            labels(r.gold_label).to_string(),
            labels(r.model_label).to_string(),
        ];
        if with_tokens {
            row.push(r.tokens.as_ref().map(|t| t.join(" ")).unwrap_or_default());
        }
        if with_probs {
            for k in 0..NUM_CLASSES {
                row.push(r.model_probs.map(|p| p[k].to_string()).unwrap_or_default());
            }
        }
        for col in &extra_cols {
            let v = r
                .extra
                .iter()
                .find(|(k, _)| k == col)
                .map(|(_, v)| v.as_str())
                .unwrap_or("");
            row.push(v.to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CorpusError::Csv(e.to_string()))?;
    Ok(())
}

pub fn save_csv(reviews: &[Review], path: &Path, include_labels: bool) -> Result<()> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut buf = std::io::BufWriter::new(file);
    write_csv(&mut buf, reviews, include_labels)?;
    buf.flush().map_err(io_err)
}

pub fn to_csv_string(reviews: &[Review], include_labels: bool) -> String {
    let mut out = Vec::new();
    write_csv(&mut out, reviews, include_labels).expect("in-memory CSV write");
    String::from_utf8(out).expect("CSV output is UTF-8")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DedupKey {
    RawText,
    ProcessedText,
}

/// Keeps the first occurrence of each text (compared after trimming).
/// Reviews whose key field is absent are kept.
pub fn deduplicate(reviews: Vec<Review>, key: DedupKey) -> Vec<Review> {
    let mut seen = HashSet::new();
    reviews
        .into_iter()
        .filter(|r| {
            let text = match key {
                DedupKey::RawText => Some(r.raw_text.as_str()),
                DedupKey::ProcessedText => r.processed_text.as_deref(),
            };
            match text {
                Some(t) => seen.insert(t.trim().to_string()),
                None => true,
            }
        })
        .collect()
}

/// Per-split and per-class counts; `unlabeled` counts reviews without a gold label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    pub seed: u64,
    pub total: usize,
    pub counts: [usize; 3],
    pub class_counts: [[usize; NUM_CLASSES + 1]; 3],
}

impl fmt::Display for SplitManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "total = {}", self.total)?;
        for (i, name) in ["train", "validation", "test"].iter().enumerate() {
            writeln!(f, "{name} = {}", self.counts[i])?;
            for (k, label) in Label::ALL.iter().enumerate() {
                writeln!(f, "{name}.{label} = {}", self.class_counts[i][k])?;
            }
            writeln!(f, "{name}.unlabeled = {}", self.class_counts[i][NUM_CLASSES])?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Review>,
    pub validation: Vec<Review>,
    pub test: Vec<Review>,
    pub seed: u64,
    pub manifest: SplitManifest,
}

pub const MIN_SPLIT_SIZE: usize = 10;

/// Split sizes for `n` reviews: 80% / 10% floored, remainder to test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let validation = n / 10;
    (train, validation, n - train - validation)
}

/// Seeded shuffle followed by a contiguous 80/10/10 partition.
pub fn split_dataset(reviews: Vec<Review>, seed: u64) -> Result<DatasetSplit> {
    let n = reviews.len();
    if n < MIN_SPLIT_SIZE {
        return Err(CorpusError::Invalid(format!(
            "cannot split {n} reviews; need at least {MIN_SPLIT_SIZE}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed));
    let (n_train, n_val, _) = split_sizes(n);

    let mut slots: Vec<Option<Review>> = reviews.into_iter().map(Some).collect();
    let mut take = |range: std::ops::Range<usize>| -> Vec<Review> {
        order[range]
            .iter()
            .map(|&i| slots[i].take().expect("index used once"))
            .collect()
    };
    let train = take(0..n_train);
    let validation = take(n_train..n_train + n_val);
    let test = take(n_train + n_val..n);

    let tally = |part: &[Review]| {
        let mut c = [0usize; NUM_CLASSES + 1];
        for r in part {
            c[r.gold_label.map(Label::code).unwrap_or(NUM_CLASSES)] += 1;
        }
        c
    };
    let manifest = SplitManifest {
        seed,
        total: n,
        counts: [train.len(), validation.len(), test.len()],
        class_counts: [tally(&train), tally(&validation), tally(&test)],
    };
    Ok(DatasetSplit {
        train,
        validation,
        test,
        seed,
        manifest,
    })
}

/// Counts reviews per gold label, skipping unlabeled ones.
pub fn class_distribution(reviews: &[Review]) -> BTreeMap<Label, usize> {
    let mut m = BTreeMap::new();
    for r in reviews {
        if let Some(l) = r.gold_label {
            *m.entry(l).or_insert(0) += 1;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(csv: &str) -> Result<Vec<Review>> {
        read_csv(csv.as_bytes(), &ColumnMapping::default(), DatePolicy::Strict)
    }

    #[test]
    fn loads_store_export_columns() {
        let csv = "reviewId,content,at\n\
                   a1,first review,2023-01-02 10:11:12\n\
                   a2,\"second, with comma\",2023-01-03\n\
                   a3,third,2023-01-04T00:00:00\n";
        let rs = parse(csv).unwrap();
        assert_eq!(rs.len(), 3);
        assert_eq!(rs[0].review_id, "a1");
        assert_eq!(rs[1].raw_text, "second, with comma");
        assert_eq!(rs[2].posted_at, NaiveDate::from_ymd_opt(2023, 1, 4));
        assert_eq!(rs[0].rating, None);
        assert_eq!(rs[0].source, Source::Uploaded);
    }

    #[test]
    fn empty_content_is_a_row_error() {
        let err = parse("reviewId,content\na1,ok\na2,\n").unwrap_err();
        match err {
            CorpusError::Row { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_text_column_is_file_error() {
        assert!(matches!(
            parse("reviewId,at\na,2023-01-01\n"),
            Err(CorpusError::MissingTextColumn)
        ));
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = parse("reviewId,content\na1,ok\na2,x,extra\n").unwrap_err();
        assert!(matches!(err, CorpusError::Row { line: 3, .. }), "{err}");
    }

    #[test]
    fn column_order_does_not_matter() {
        let canonical = "reviewId,content,at\na,x y,2023-01-01\nb,z,2023-02-01\n";
        let shuffled = "at,reviewId,content\n2023-01-01,a,x y\n2023-02-01,b,z\n";
        assert_eq!(parse(canonical).unwrap(), parse(shuffled).unwrap());
    }

    #[test]
    fn bom_tolerated() {
        let rs = parse("\u{feff}reviewId,content\na,x\n").unwrap();
        assert_eq!(rs[0].review_id, "a");
        let out = to_csv_string(&rs, true);
        assert!(!out.starts_with('\u{feff}'));
    }

    #[test]
    fn ids_generated_when_absent() {
        let rs = parse("content\nx\ny\n").unwrap();
        assert_eq!(rs[0].review_id, "row-1");
        assert_eq!(rs[1].review_id, "row-2");
    }

    #[test]
    fn dedup_examples() {
        let mk = |v: &[&str]| -> Vec<Review> {
            v.iter()
                .enumerate()
                .map(|(i, t)| Review::new(i.to_string(), *t))
                .collect()
        };
        assert_eq!(deduplicate(mk(&["a b c", "a b c", "d"]), DedupKey::RawText).len(), 2);
        assert_eq!(deduplicate(mk(&["p", "q", "r"]), DedupKey::RawText).len(), 3);
        let kept = deduplicate(mk(&["x ", "x"]), DedupKey::RawText);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].review_id, "0");
    }

    fn numbered(n: usize) -> Vec<Review> {
        (0..n).map(|i| Review::new(format!("r{i}"), format!("text {i}"))).collect()
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        assert_eq!(split_sizes(15945), (12756, 1594, 1595));
        assert_eq!(split_sizes(10), (8, 1, 1));
        let s = split_dataset(numbered(10), 1).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        assert!(split_dataset(numbered(9), 1).is_err());
    }

    #[test]
    fn different_seeds_change_membership() {
        let ids = |s: &DatasetSplit| s.train.iter().map(|r| r.review_id.clone()).collect::<HashSet<_>>();
        let a = split_dataset(numbered(100), 1).unwrap();
        let b = split_dataset(numbered(100), 2).unwrap();
        assert_eq!(a.manifest.counts, b.manifest.counts);
        assert_ne!(ids(&a), ids(&b));
    }

    #[test]
    fn empty_save_is_header_only() {
        let out = to_csv_string(&[], true);
        assert_eq!(out.trim_end(), CANONICAL_COLUMNS.join(","));
    }

    #[test]
    fn quotes_and_commas_are_escaped() {
        let r = Review::new("q", "he said \"hi\", then left");
        let out = to_csv_string(&[r], true);
        assert!(out.contains("\"he said \"\"hi\"\", then left\""));
    }

    fn arb_review() -> impl Strategy<Value = Review> {
        (
            "[a-z0-9]{1,8}",
            "[a-z]{0,6}",
            proptest::option::of(0i64..3000),
            proptest::option::of(1u8..=5),
            "[ -~]{0,40}[a-z]",
            proptest::option::of("[a-z ,.!]{1,20}"),
            proptest::option::of(proptest::collection::vec("[a-z]{1,6}", 1..5)),
            proptest::option::of(0usize..3),
            proptest::option::of(0usize..3),
            proptest::option::of(proptest::array::uniform3(0.0f64..1.0)),
        )
            .prop_map(|(id, app, day, rating, text, proc_, tokens, la, gl, probs)| Review {
                review_id: id,
                app_id: app,
                posted_at: day.map(|d| {
                    NaiveDate::from_ymd_opt(2015, 1, 1).unwrap() + chrono::Duration::days(d)
                }),
                rating,
                raw_text: text,
                processed_text: proc_.filter(|s| !s.is_empty()),
                tokens,
                source: Source::Scraped,
                parent_id: None,
                label_a: la.and_then(Label::from_code),
                label_b: None,
                gold_label: gl.and_then(Label::from_code),
                model_label: None,
                model_probs: probs,
                extra: vec![],
            })
    }

    proptest! {
        #[test]
        fn csv_round_trip(mut reviews in proptest::collection::vec(arb_review(), 0..8)) {
            let mut seen = HashSet::new();
            reviews.retain(|r| seen.insert(r.review_id.clone()));
            let text = to_csv_string(&reviews, true);
            let back = parse(&text).unwrap();
            prop_assert_eq!(back, reviews);
        }

        #[test]
        fn split_partitions_input(n in 10usize..300, seed in any::<u64>()) {
            let s = split_dataset(numbered(n), seed).unwrap();
            let mut all: Vec<String> = s.train.iter().chain(&s.validation).chain(&s.test)
                .map(|r| r.review_id.clone()).collect();
            prop_assert_eq!(s.train.len(), n * 8 / 10);
            prop_assert_eq!(s.validation.len(), n / 10);
            all.sort();
            let mut expected: Vec<String> = numbered(n).into_iter().map(|r| r.review_id).collect();
            expected.sort();
            prop_assert_eq!(all, expected);
            let again = split_dataset(numbered(n), seed).unwrap();
            prop_assert_eq!(s.manifest.to_string(), again.manifest.to_string());
        }
    }
}
