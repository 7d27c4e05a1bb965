//! Pre-processing (before augmentation) and post-processing (after
//! augmentation) of review text.
//!
//! `preprocess` keeps sentence punctuation so augmenters still see sentence
//! structure; `postprocess` strips it, removes stopwords and lemmatizes.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use regex::{Captures, Regex};

use crate::corpus::Review;

const CONTRACTIONS: &str = include_str!("../data/contractions.txt");
const STOPWORDS: &str = include_str!("../data/stopwords.txt");
const LEMMA_RULES: &str = include_str!("../data/lemma_rules.txt");

pub const PUNCTUATION_KEEP: [char; 5] = [',', ';', '.', '?', '!'];

#[derive(Debug, thiserror::Error)]
pub enum PrepError {
    #[error("{file} line {line}: {message}")]
    Config {
        file: &'static str,
        line: usize,
        message: String,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Maps a word to its lemma. Implementations must be idempotent.
pub trait Lemmatizer: Send + Sync {
    fn lemma(&self, word: &str) -> String;
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct SuffixRule {
    suffix: String,
    replacement: String,
    min_stem: usize,
}

/// Suffix-rewrite lemmatizer with an exception table.
#[derive(Debug, Clone, Default)]
pub struct RuleLemmatizer {
    exceptions: HashMap<String, String>,
    rules: Vec<SuffixRule>,
}

impl RuleLemmatizer {
    pub fn parse(text: &str) -> Result<Self, PrepError> {
        let err = |line: usize, message: String| PrepError::Config {
            file: "lemma_rules.txt",
            line,
            message,
        };
        let mut out = RuleLemmatizer::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let alpha = |s: &str| s.chars().all(char::is_alphabetic);
            match parts.as_slice() {
                ["exception", word, lemma] if alpha(word) && alpha(lemma) => {
                    out.exceptions.insert(word.to_string(), lemma.to_string());
                }
                ["suffix", suffix, replacement, rest @ ..] if rest.len() <= 1 => {
                    let replacement = if *replacement == "-" { "" } else { replacement };
                    if !alpha(suffix) || suffix.is_empty() || !alpha(replacement) {
                        return Err(err(i + 1, "rule parts must be alphabetic".into()));
                    }
                    if replacement != *suffix
                        && replacement.chars().count() >= suffix.chars().count()
                    {
                        return Err(err(
                            i + 1,
                            "replacement must be shorter than the suffix (or equal to it)".into(),
                        ));
                    }
                    let min_stem = match rest.first() {
                        Some(n) => n
                            .parse()
                            .map_err(|_| err(i + 1, format!("bad min_stem {n:?}")))?,
                        None => 1,
                    };
                    out.rules.push(SuffixRule {
                        suffix: suffix.to_string(),
                        replacement: replacement.to_string(),
                        min_stem: min_stem.max(1),
                    });
                }
                _ => return Err(err(i + 1, format!("unrecognised rule {line:?}"))),
            }
        }
        Ok(out)
    }

    pub fn with_exception(mut self, word: &str, lemma: &str) -> Self {
        self.exceptions.insert(word.into(), lemma.into());
        self
    }

    pub fn with_rule(mut self, suffix: &str, replacement: &str, min_stem: usize) -> Self {
        self.rules.push(SuffixRule {
            suffix: suffix.into(),
            replacement: replacement.into(),
            min_stem: min_stem.max(1),
        });
        self
    }

    /// One rewrite step; `None` when the word is final.
    fn step(&self, word: &str) -> Option<String> {
        if let Some(l) = self.exceptions.get(word) {
            return (l != word).then(|| l.clone());
        }
        for rule in &self.rules {
            if let Some(stem) = word.strip_suffix(rule.suffix.as_str()) {
                if stem.chars().count() < rule.min_stem {
                    continue;
                }
                if rule.replacement == rule.suffix {
                    return None;
                }
                return Some(format!("{stem}{}", rule.replacement));
            }
        }
        None
    }
}

impl Lemmatizer for RuleLemmatizer {
    fn lemma(&self, word: &str) -> String {
        let mut w = word.to_string();
        // Every non-identity rewrite shortens the word or maps through the
        // exception table, so the bound is only a guard against cyclic tables.
        for _ in 0..=word.len() + self.exceptions.len() {
            match self.step(&w) {
                Some(next) => w = next,
                None => break,
            }
        }
        w
    }
}

#[derive(Clone)]
pub struct PrepConfig {
    pub contractions: HashMap<String, String>,
    pub stopwords: HashSet<String>,
    pub lemmatizer: Arc<dyn Lemmatizer>,
    pub punctuation_keep: HashSet<char>,
    contraction_re: Regex,
}

impl fmt::Debug for PrepConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PrepConfig")
            .field("contractions", &self.contractions.len())
            .field("stopwords", &self.stopwords.len())
            .field("punctuation_keep", &self.punctuation_keep)
            .finish_non_exhaustive()
    }
}

fn parse_contractions(text: &str) -> Result<HashMap<String, String>, PrepError> {
    let mut m = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(PrepError::Config {
                file: "contractions.txt",
                line: i + 1,
                message: "expected `contraction = expansion`".into(),
            });
        };
        let (k, v) = (k.trim().to_lowercase(), v.trim().to_lowercase());
        let word_edges = k.chars().next().is_some_and(char::is_alphanumeric)
            && k.chars().last().is_some_and(char::is_alphanumeric);
        if !word_edges || v.is_empty() {
            return Err(PrepError::Config {
                file: "contractions.txt",
                line: i + 1,
                message: format!("contraction {k:?} must start and end with a word character"),
            });
        }
        m.insert(k, v);
    }
    Ok(m)
}

fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

fn contraction_regex(map: &HashMap<String, String>) -> Regex {
    let mut keys: Vec<&String> = map.keys().collect();
    // Longest first so "can't've" wins over "can't".
    keys.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    let alt: Vec<String> = keys.iter().map(|k| regex::escape(k)).collect();
    let pattern = if alt.is_empty() {
        // Matches nothing.
        r"[^\s\S]".to_string()
    } else {
        format!(r"\b(?:{})\b", alt.join("|"))
    };
    Regex::new(&pattern).expect("escaped alternation compiles")
}

impl PrepConfig {
    pub fn new(
        contractions: HashMap<String, String>,
        stopwords: HashSet<String>,
        lemmatizer: Arc<dyn Lemmatizer>,
    ) -> Self {
        let contraction_re = contraction_regex(&contractions);
        PrepConfig {
            contractions,
            stopwords,
            lemmatizer,
            punctuation_keep: PUNCTUATION_KEEP.into_iter().collect(),
            contraction_re,
        }
    }

    /// Lexicons bundled with the crate.
    pub fn builtin() -> Self {
        static BUILTIN: OnceLock<PrepConfig> = OnceLock::new();
        BUILTIN
            .get_or_init(|| {
                PrepConfig::new(
                    parse_contractions(CONTRACTIONS).expect("bundled contractions parse"),
                    parse_stopwords(STOPWORDS),
                    Arc::new(RuleLemmatizer::parse(LEMMA_RULES).expect("bundled rules parse")),
                )
            })
            .clone()
    }

    /// Reads `contractions.txt`, `stopwords.txt` and `lemma_rules.txt` from
    /// `dir`; any file that is absent falls back to the bundled copy.
    pub fn load_dir(dir: &Path) -> Result<Self, PrepError> {
        let read = |name: &str, fallback: &'static str| -> Result<String, PrepError> {
            let p = dir.join(name);
            if p.exists() {
                std::fs::read_to_string(&p).map_err(|source| PrepError::Io {
                    path: p.display().to_string(),
                    source,
                })
            } else {
                Ok(fallback.to_string())
            }
        };
        Ok(PrepConfig::new(
            parse_contractions(&read("contractions.txt", CONTRACTIONS)?)?,
            parse_stopwords(&read("stopwords.txt", STOPWORDS)?),
            Arc::new(RuleLemmatizer::parse(&read("lemma_rules.txt", LEMMA_RULES)?)?),
        ))
    }

    pub fn with_stopwords<I, S>(mut self, words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.stopwords = words.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_lemmatizer(mut self, lemmatizer: Arc<dyn Lemmatizer>) -> Self {
        self.lemmatizer = lemmatizer;
        self
    }
}

fn html_tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<[^>]*>").unwrap())
}

fn html_entity_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"&(#[0-9]{1,7}|#[xX][0-9a-fA-F]{1,6}|[a-zA-Z]{2,8});").unwrap())
}

fn decode_entity(body: &str) -> Option<String> {
    if let Some(num) = body.strip_prefix('#') {
        let code = match num.strip_prefix(['x', 'X']) {
            Some(hex) => u32::from_str_radix(hex, 16).ok()?,
            None => num.parse().ok()?,
        };
        return char::from_u32(code).map(String::from);
    }
    let s = match body.to_ascii_lowercase().as_str() {
        "amp" => "&",
        "lt" => "<",
        "gt" => ">",
        "quot" => "\"",
        "apos" => "'",
        "nbsp" => " ",
        _ => return None,
    };
    Some(s.to_string())
}

/// lowercase → contractions → HTML strip and entity decode → `@user` removal
/// → digit removal → special characters (keeping `, ; . ? !`) → whitespace.
pub fn preprocess(raw_text: &str, config: &PrepConfig) -> String {
    let text = raw_text.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'");
    let text = config
        .contraction_re
        .replace_all(&text, |c: &Captures| config.contractions[&c[0]].clone());
    let text = html_tag_re().replace_all(&text, " ");
    let text = html_entity_re().replace_all(&text, |c: &Captures| {
        decode_entity(&c[1]).unwrap_or_else(|| c[0].to_string())
    });
    let text = text
        .split_whitespace()
        .filter(|tok| !tok.starts_with('@'))
        .collect::<Vec<_>>()
        .join(" ");
    let text: String = text
        .chars()
        .filter(|c| !c.is_numeric())
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() || config.punctuation_keep.contains(&c) {
                c
            } else {
                ' '
            }
        })
        .collect();
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Strips all punctuation, tokenizes on whitespace, drops stopwords and
/// lemmatizes. Lemmas that land on a stopword are dropped too, which keeps
/// the operation idempotent over its own output.
pub fn postprocess(text: &str, config: &PrepConfig) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| {
            if c.is_alphabetic() && !c.is_uppercase() {
                c
            } else {
                ' '
            }
        })
        .collect();
    cleaned
        .split_whitespace()
        .filter(|w| !config.stopwords.contains(*w))
        .map(|w| config.lemmatizer.lemma(w))
        .filter(|w| !w.is_empty() && !config.stopwords.contains(w))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pre,
    Post,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Pre => "pre",
            Stage::Post => "post",
        }
    }
}

/// Which reviews a stage dropped and why.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropReport {
    pub stage: Stage,
    pub inputs: usize,
    pub survivors: usize,
    pub empty: Vec<String>,
    pub duplicate: Vec<String>,
}

impl fmt::Display for DropReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "stage = {}", self.stage.as_str())?;
        writeln!(f, "inputs = {}", self.inputs)?;
        writeln!(f, "survivors = {}", self.survivors)?;
        writeln!(f, "dropped.empty = {}", self.empty.len())?;
        writeln!(f, "dropped.duplicate = {}", self.duplicate.len())?;
        writeln!(f, "dropped.empty.ids = {}", self.empty.join(","))?;
        writeln!(f, "dropped.duplicate.ids = {}", self.duplicate.join(","))
    }
}

/// Applies a stage to every review, then drops empty results and exact
/// duplicates (first occurrence kept).
pub fn run_stage(reviews: Vec<Review>, stage: Stage, config: &PrepConfig) -> (Vec<Review>, DropReport) {
    let inputs = reviews.len();
    let mut report = DropReport {
        stage,
        inputs,
        survivors: 0,
        empty: Vec::new(),
        duplicate: Vec::new(),
    };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(inputs);
    for mut r in reviews {
        let key = match stage {
            Stage::Pre => {
                let p = preprocess(&r.raw_text, config);
                r.processed_text = Some(p.clone());
                p
            }
            Stage::Post => {
                let source = match &r.processed_text {
                    Some(p) => p.clone(),
                    None => preprocess(&r.raw_text, config),
                };
                let tokens = postprocess(&source, config);
                let key = tokens.join(" ");
                r.tokens = Some(tokens);
                key
            }
        };
        if key.is_empty() {
            report.empty.push(r.review_id);
        } else if !seen.insert(key) {
            report.duplicate.push(r.review_id);
        } else {
            out.push(r);
        }
    }
    report.survivors = out.len();
    (out, report)
}
