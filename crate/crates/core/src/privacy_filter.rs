//! Keyword-theme candidate selection for privacy-related reviews.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::corpus::Review;
use crate::seed;

/// Reviews shorter than this many words are never candidates.
pub const MIN_WORDS: usize = 5;

const DEFAULT_KEYWORDS: &str = include_str!("../data/keywords.txt");

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("keyword config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("reading keyword config: {0}")]
    Io(#[from] std::io::Error),
    #[error("sample of {requested} requested but only {available} reviews available")]
    SampleTooLarge { requested: usize, available: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Theme {
    pub name: String,
    /// Each keyword as its sequence of words; single keywords have length 1.
    pub keywords: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordThemes {
    pub themes: Vec<Theme>,
    /// Duplicate entries collapsed while loading.
    pub duplicates_dropped: usize,
}

impl KeywordThemes {
    /// The five shipped themes.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_KEYWORDS).expect("bundled keyword file parses")
    }

    pub fn load(path: &Path) -> Result<Self, FilterError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, FilterError> {
        let mut themes: Vec<Theme> = Vec::new();
        let mut duplicates_dropped = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_lowercase();
                if name.is_empty() {
                    return Err(FilterError::Config {
                        line: i + 1,
                        message: "empty theme name".into(),
                    });
                }
                themes.push(Theme {
                    name,
                    keywords: Vec::new(),
                });
                continue;
            }
            let Some(theme) = themes.last_mut() else {
                return Err(FilterError::Config {
                    line: i + 1,
                    message: "keyword before any [theme] header".into(),
                });
            };
            let words = words_of(&line.to_lowercase());
            if words.is_empty() {
                return Err(FilterError::Config {
                    line: i + 1,
                    message: format!("keyword {line:?} has no word characters"),
                });
            }
            if theme.keywords.contains(&words) {
                duplicates_dropped += 1;
            } else {
                theme.keywords.push(words);
            }
        }
        Ok(KeywordThemes {
            themes,
            duplicates_dropped,
        })
    }

    pub fn keyword_count(&self) -> usize {
        self.themes.iter().map(|t| t.keywords.len()).sum()
    }

    /// Adds a keyword to an existing theme (or a new one).
    pub fn add_keyword(&mut self, theme: &str, keyword: &str) {
        let words = words_of(&keyword.to_lowercase());
        if words.is_empty() {
            return;
        }
        match self.themes.iter_mut().find(|t| t.name == theme) {
            Some(t) if !t.keywords.contains(&words) => t.keywords.push(words),
            Some(_) => {}
            None => self.themes.push(Theme {
                name: theme.to_string(),
                keywords: vec![words],
            }),
        }
    }
}

/// Maximal runs of alphanumeric characters.
fn words_of(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Number of maximal whitespace-delimited runs.
pub fn word_count(raw_text: &str) -> usize {
    raw_text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeywordMatch {
    pub theme: String,
    pub keyword: String,
}

impl fmt::Display for KeywordMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.theme, self.keyword)
    }
}

/// Whole-word, case-insensitive matching; each (theme, keyword) reported once.
pub fn match_keywords(raw_text: &str, themes: &KeywordThemes) -> Vec<KeywordMatch> {
    let words = words_of(&raw_text.to_lowercase());
    let singles: HashSet<&str> = words.iter().map(String::as_str).collect();
    let mut out = Vec::new();
    for theme in &themes.themes {
        for kw in &theme.keywords {
            let hit = if kw.len() == 1 {
                singles.contains(kw[0].as_str())
            } else {
                words.windows(kw.len()).any(|w| w == kw.as_slice())
            };
            if hit {
                out.push(KeywordMatch {
                    theme: theme.name.clone(),
                    keyword: kw.join(" "),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterDecision {
    pub review_id: String,
    pub is_candidate: bool,
    pub matched: Vec<KeywordMatch>,
    pub word_count: usize,
}

pub fn decide(review: &Review, themes: &KeywordThemes) -> FilterDecision {
    let word_count = word_count(&review.raw_text);
    let matched = match_keywords(&review.raw_text, themes);
    FilterDecision {
        review_id: review.review_id.clone(),
        is_candidate: word_count >= MIN_WORDS && !matched.is_empty(),
        matched,
        word_count,
    }
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub candidates: Vec<Review>,
    pub rest: Vec<Review>,
    pub decisions: Vec<FilterDecision>,
}

pub fn filter_candidates(reviews: Vec<Review>, themes: &KeywordThemes) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for r in reviews {
        let d = decide(&r, themes);
        if d.is_candidate {
            out.candidates.push(r);
        } else {
            out.rest.push(r);
        }
        out.decisions.push(d);
    }
    out
}

/// Audit CSV: `review_id,is_candidate,word_count,matches` with matches joined by `|`.
pub fn write_decisions<W: Write>(writer: W, decisions: &[FilterDecision]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["review_id", "is_candidate", "word_count", "matches"])?;
    for d in decisions {
        let matches: Vec<String> = d.matched.iter().map(ToString::to_string).collect();
        w.write_record([
            d.review_id.as_str(),
            if d.is_candidate { "true" } else { "false" },
            &d.word_count.to_string(),
            &matches.join("|"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Seeded uniform sample without replacement, returned in input order.
pub fn sample_irrelevant(rest: &[Review], n: usize, seed: u64) -> Result<Vec<Review>, FilterError> {
    if n > rest.len() {
        return Err(FilterError::SampleTooLarge {
            requested: n,
            available: rest.len(),
        });
    }
    let mut idx = rand::seq::index::sample(&mut seed::rng(seed), rest.len(), n).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| rest[i].clone()).collect())
}
