//! Training-set expansion: seeded lexical transforms plus a pluggable
//! provider for the contextual substitution, insertion and summarization
//! techniques.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Review, Source};
use crate::seed;

const DEFAULT_SYNONYMS: &str = include_str!("../data/synonyms.txt");

/// Marker the stub provider writes in place of a substituted token.
pub const STUB_SUB_MARKER: &str = "ctxsub";
/// Marker the stub provider inserts.
pub const STUB_INS_MARKER: &str = "ctxins";

#[derive(Debug, thiserror::Error)]
pub enum AugError {
    #[error("cannot augment empty text")]
    EmptyText,
    #[error("probability {0} outside the open interval (0, 1)")]
    BadProbability(f64),
    #[error("synonym lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("text provider: {0}")]
    Provider(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    RandomWordDrop,
    SynonymSubstitution,
    ContextualSubstitution,
    ContextualInsertion,
    AbstractSummarization,
}

impl Technique {
    pub const ALL: [Technique; 5] = [
        Technique::RandomWordDrop,
        Technique::SynonymSubstitution,
        Technique::ContextualSubstitution,
        Technique::ContextualInsertion,
        Technique::AbstractSummarization,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Technique::RandomWordDrop => "random_word_drop",
            Technique::SynonymSubstitution => "synonym_substitution",
            Technique::ContextualSubstitution => "contextual_substitution",
            Technique::ContextualInsertion => "contextual_insertion",
            Technique::AbstractSummarization => "abstract_summarization",
        }
    }

    fn short(self) -> &'static str {
        match self {
            Technique::RandomWordDrop => "rwd",
            Technique::SynonymSubstitution => "syn",
            Technique::ContextualSubstitution => "csub",
            Technique::ContextualInsertion => "cins",
            Technique::AbstractSummarization => "sum",
        }
    }
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugPlan {
    pub random_word_drop: usize,
    pub synonym_substitution: usize,
    pub contextual_substitution: usize,
    pub contextual_insertion: usize,
    pub abstract_summarization: usize,
    pub seed: u64,
    pub drop_prob: f64,
    pub sub_prob: f64,
}

impl Default for AugPlan {
    fn default() -> Self {
        AugPlan {
            random_word_drop: 2,
            synonym_substitution: 2,
            contextual_substitution: 2,
            contextual_insertion: 2,
            abstract_summarization: 1,
            seed: 0,
            drop_prob: 0.1,
            sub_prob: 0.3,
        }
    }
}

impl AugPlan {
    pub fn zero(seed: u64) -> Self {
        AugPlan {
            random_word_drop: 0,
            synonym_substitution: 0,
            contextual_substitution: 0,
            contextual_insertion: 0,
            abstract_summarization: 0,
            seed,
            ..AugPlan::default()
        }
    }

    pub fn count(&self, t: Technique) -> usize {
        match t {
            Technique::RandomWordDrop => self.random_word_drop,
            Technique::SynonymSubstitution => self.synonym_substitution,
            Technique::ContextualSubstitution => self.contextual_substitution,
            Technique::ContextualInsertion => self.contextual_insertion,
            Technique::AbstractSummarization => self.abstract_summarization,
        }
    }

    pub fn per_review(&self) -> usize {
        Technique::ALL.iter().map(|&t| self.count(t)).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    map: BTreeMap<String, Vec<String>>,
}

impl SynonymLexicon {
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_SYNONYMS).expect("bundled synonyms parse")
    }

    pub fn load(path: &Path) -> Result<Self, AugError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// One `word: syn1, syn2` entry per line; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, AugError> {
        let mut lex = SynonymLexicon::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| AugError::Lexicon { line: i + 1, message };
            let (word, syns) = line.split_once(':').ok_or_else(|| err("missing ':'".into()))?;
            let syns: Vec<&str> = syns.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            lex.insert(word.trim(), &syns).map_err(err)?;
        }
        Ok(lex)
    }

    pub fn insert(&mut self, word: &str, synonyms: &[&str]) -> Result<(), String> {
        let word = word.to_lowercase();
        let single = |s: &str| !s.is_empty() && !s.contains(char::is_whitespace);
        if !single(&word) {
            return Err(format!("{word:?} is not a single token"));
        }
        let entry = self.map.entry(word.clone()).or_default();
        for s in synonyms {
            let s = s.to_lowercase();
            if !single(&s) {
                return Err(format!("synonym {s:?} is not a single token"));
            }
            if s == word {
                return Err(format!("{word:?} maps to itself"));
            }
            if !entry.contains(&s) {
                entry.push(s);
            }
        }
        if entry.is_empty() {
            self.map.remove(&word);
        }
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.map.get(word).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn check_prob(p: f64) -> Result<(), AugError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(AugError::BadProbability(p))
    }
}

/// Drops each whitespace token with probability `drop_prob`, always keeping
/// at least one.
pub fn random_word_drop(text: &str, drop_prob: f64, seed: u64) -> Result<String, AugError> {
    check_prob(drop_prob)?;
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.is_empty() {
        return Err(AugError::EmptyText);
    }
    let mut rng = seed::rng(seed);
    let mut kept: Vec<&str> = tokens
        .iter()
        .copied()
        .filter(|_| rng.gen::<f64>() >= drop_prob)
        .collect();
    if kept.is_empty() {
        kept.push(tokens[rng.gen_range(0..tokens.len())]);
    }
    Ok(kept.join(" "))
}

/// Replaces lexicon tokens with a random synonym with probability `sub_prob`.
/// `sub_prob` may be 1.0 to force substitution.
pub fn synonym_substitution(
    text: &str,
    lexicon: &SynonymLexicon,
    sub_prob: f64,
    seed: u64,
) -> Result<String, AugError> {
    if !(sub_prob > 0.0 && sub_prob <= 1.0) {
        return Err(AugError::BadProbability(sub_prob));
    }
    let mut rng = seed::rng(seed);
    let out: Vec<String> = text
        .split_whitespace()
        .map(|tok| match lexicon.get(tok) {
            Some(syns) if rng.gen::<f64>() < sub_prob => {
                syns.choose(&mut rng).cloned().unwrap_or_else(|| tok.to_string())
            }
            _ => tok.to_string(),
        })
        .collect();
    Ok(out.join(" "))
}

/// Stand-in for the neural augmenters.
pub trait TextTransformProvider: Send + Sync {
    fn substitute(&self, text: &str, seed: u64) -> Result<String, AugError>;
    fn insert(&self, text: &str, seed: u64) -> Result<String, AugError>;
    fn summarize(&self, text: &str, seed: u64) -> Result<String, AugError>;
}

/// Deterministic marker-based provider.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubProvider;

impl TextTransformProvider for StubProvider {
    fn substitute(&self, text: &str, seed: u64) -> Result<String, AugError> {
        let mut tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(AugError::EmptyText);
        }
        let i = seed::rng(seed).gen_range(0..tokens.len());
        tokens[i] = STUB_SUB_MARKER;
        Ok(tokens.join(" "))
    }

    fn insert(&self, text: &str, seed: u64) -> Result<String, AugError> {
        let mut tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(AugError::EmptyText);
        }
        let i = seed::rng(seed).gen_range(0..=tokens.len());
        tokens.insert(i, STUB_INS_MARKER);
        Ok(tokens.join(" "))
    }

    fn summarize(&self, text: &str, _seed: u64) -> Result<String, AugError> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        if tokens.is_empty() {
            return Err(AugError::EmptyText);
        }
        Ok(tokens[..tokens.len().div_ceil(2)].join(" "))
    }
}

#[derive(Serialize)]
struct ProviderRequest<'a> {
    op: &'a str,
    text: &'a str,
    seed: u64,
}

/// Child process speaking JSON lines. Each request is
/// `{"op": "substitute"|"insert"|"summarize", "text": ..., "seed": ...}`
/// and each reply is one JSON string, or `{"error": "..."}`.
pub struct ExternalProvider {
    io: Mutex<(Child, ChildStdin, BufReader<ChildStdout>)>,
}

impl ExternalProvider {
    pub fn spawn(program: &str, args: &[&str]) -> Result<Self, AugError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().ok_or_else(|| AugError::Provider("no stdin".into()))?;
        let stdout = child.stdout.take().ok_or_else(|| AugError::Provider("no stdout".into()))?;
        Ok(ExternalProvider {
            io: Mutex::new((child, stdin, BufReader::new(stdout))),
        })
    }

    fn call(&self, op: &str, text: &str, seed: u64) -> Result<String, AugError> {
        let mut guard = self.io.lock().map_err(|_| AugError::Provider("poisoned".into()))?;
        let (_, stdin, stdout) = &mut *guard;
        let req = serde_json::to_string(&ProviderRequest { op, text, seed })
            .map_err(|e| AugError::Provider(e.to_string()))?;
        writeln!(stdin, "{req}")?;
        stdin.flush()?;
        let mut line = String::new();
        if stdout.read_line(&mut line)? == 0 {
            return Err(AugError::Provider("provider closed its output".into()));
        }
        match serde_json::from_str::<serde_json::Value>(line.trim()) {
            Ok(serde_json::Value::String(s)) if !s.trim().is_empty() => Ok(s),
            Ok(serde_json::Value::String(_)) => Err(AugError::Provider("empty reply".into())),
            Ok(other) => Err(AugError::Provider(
                other
                    .get("error")
                    .and_then(|e| e.as_str())
                    .unwrap_or("malformed reply")
                    .to_string(),
            )),
            Err(e) => Err(AugError::Provider(format!("bad reply: {e}"))),
        }
    }
}

impl Drop for ExternalProvider {
    fn drop(&mut self) {
        if let Ok(mut g) = self.io.lock() {
            let _ = g.0.kill();
            let _ = g.0.wait();
        }
    }
}

impl TextTransformProvider for ExternalProvider {
    fn substitute(&self, text: &str, seed: u64) -> Result<String, AugError> {
        self.call("substitute", text, seed)
    }
    fn insert(&self, text: &str, seed: u64) -> Result<String, AugError> {
        self.call("insert", text, seed)
    }
    fn summarize(&self, text: &str, seed: u64) -> Result<String, AugError> {
        self.call("summarize", text, seed)
    }
}

/// Parses the CLI form `stub` or `cmd:<exec> [args...]`.
pub fn provider_from_spec(spec: &str) -> Result<Box<dyn TextTransformProvider>, AugError> {
    if spec == "stub" {
        return Ok(Box::new(StubProvider));
    }
    let cmd = spec
        .strip_prefix("cmd:")
        .ok_or_else(|| AugError::Provider(format!("unknown provider {spec:?}")))?;
    let mut parts = cmd.split_whitespace();
    let program = parts
        .next()
        .ok_or_else(|| AugError::Provider("empty command".into()))?;
    let args: Vec<&str> = parts.collect();
    Ok(Box::new(ExternalProvider::spawn(program, &args)?))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AugReport {
    pub originals: usize,
    /// Augmented rows emitted, before any dedup.
    pub generated: usize,
    pub planned: usize,
    /// Applications skipped because the provider (or transform) failed.
    pub skipped: usize,
    pub per_technique: BTreeMap<Technique, usize>,
}

impl fmt::Display for AugReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "originals = {}", self.originals)?;
        writeln!(f, "planned = {}", self.planned)?;
        writeln!(f, "generated = {}", self.generated)?;
        writeln!(f, "skipped = {}", self.skipped)?;
        for (t, n) in &self.per_technique {
            writeln!(f, "generated.{t} = {n}")?;
        }
        Ok(())
    }
}

fn apply(
    t: Technique,
    text: &str,
    plan: &AugPlan,
    lexicon: &SynonymLexicon,
    provider: &dyn TextTransformProvider,
    seed: u64,
) -> Result<String, AugError> {
    match t {
        Technique::RandomWordDrop => random_word_drop(text, plan.drop_prob, seed),
        Technique::SynonymSubstitution => synonym_substitution(text, lexicon, plan.sub_prob, seed),
        Technique::ContextualSubstitution => provider.substitute(text, seed),
        Technique::ContextualInsertion => provider.insert(text, seed),
        Technique::AbstractSummarization => provider.summarize(text, seed),
    }
}

/// Originals followed by every augmented row, grouped per parent in input
/// order, then by technique and repetition.
pub fn augment_training_set(
    train: &[Review],
    plan: &AugPlan,
    lexicon: &SynonymLexicon,
    provider: &dyn TextTransformProvider,
) -> Result<(Vec<Review>, AugReport), AugError> {
    check_prob(plan.drop_prob)?;
    if !(plan.sub_prob > 0.0 && plan.sub_prob <= 1.0) {
        return Err(AugError::BadProbability(plan.sub_prob));
    }
    let mut report = AugReport {
        originals: train.len(),
        planned: train.len() * plan.per_review(),
        ..AugReport::default()
    };
    let mut out: Vec<Review> = train.to_vec();
    for parent in train {
        let text = parent.processed_text.as_deref().unwrap_or(&parent.raw_text);
        for t in Technique::ALL {
            for rep in 0..plan.count(t) {
                let key = format!("{}/{}", parent.review_id, t.as_str());
                let s = seed::derive(plan.seed, &key, rep as u64);
                match apply(t, text, plan, lexicon, provider, s) {
                    Ok(new_text) => {
                        let mut r = parent.clone();
                        r.review_id = format!("{}~{}{}", parent.review_id, t.short(), rep);
                        r.raw_text = new_text.clone();
                        r.processed_text = Some(new_text);
                        r.tokens = None;
                        r.source = Source::Augmented;
                        r.parent_id = Some(parent.review_id.clone());
                        r.model_label = None;
                        r.model_probs = None;
                        out.push(r);
                        report.generated += 1;
                        *report.per_technique.entry(t).or_default() += 1;
                    }
                    Err(_) => report.skipped += 1,
                }
            }
        }
    }
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Label;
    use proptest::prelude::*;

    fn labeled(id: &str, text: &str, l: Label) -> Review {
        let mut r = Review::new(id, text);
        r.processed_text = Some(text.to_string());
        r.gold_label = Some(l);
        r
    }

    #[test]
    fn drop_keeps_single_token_and_is_deterministic() {
        assert_eq!(random_word_drop("alone", 0.9, 1).unwrap(), "alone");
        let t = "one two three four five six seven";
        assert_eq!(random_word_drop(t, 0.5, 9).unwrap(), random_word_drop(t, 0.5, 9).unwrap());
        assert!(random_word_drop("", 0.1, 0).is_err());
        assert!(random_word_drop("a b", 1.0, 0).is_err());
    }

    #[test]
    fn drop_rate_within_binomial_bounds() {
        // n = 1000, p = 0.1 → mean 900 kept, sd ≈ 9.49; ±3σ ⊂ [850, 950].
        let text: Vec<String> = (0..1000).map(|i| format!("w{i}")).collect();
        let text = text.join(" ");
        for s in 0..20 {
            let kept = random_word_drop(&text, 0.1, s).unwrap().split_whitespace().count();
            assert!((850..=950).contains(&kept), "seed {s}: {kept}");
        }
    }

    #[test]
    fn synonym_examples() {
        let empty = SynonymLexicon::default();
        assert_eq!(synonym_substitution("good app", &empty, 0.3, 1).unwrap(), "good app");
        let mut lex = SynonymLexicon::default();
        lex.insert("good", &["great"]).unwrap();
        assert_eq!(synonym_substitution("good app", &lex, 1.0, 1).unwrap(), "great app");
    }

    #[test]
    fn lexicon_rules() {
        assert!(SynonymLexicon::parse("good: good").is_err());
        assert!(SynonymLexicon::parse("good: very good").is_err());
        assert!(SynonymLexicon::parse("good great").is_err());
        let lex = SynonymLexicon::builtin();
        assert!(lex.len() > 40);
    }

    #[test]
    fn stub_provider_markers() {
        let p = StubProvider;
        let s = p.substitute("a b c d", 3).unwrap();
        assert_eq!(s.split(' ').filter(|t| *t == STUB_SUB_MARKER).count(), 1);
        assert_eq!(s.split(' ').count(), 4);
        let i = p.insert("a b c d", 3).unwrap();
        assert_eq!(i.split(' ').count(), 5);
        assert!(i.contains(STUB_INS_MARKER));
        assert_eq!(p.summarize("a b c d e", 0).unwrap(), "a b c");
        assert_eq!(p.summarize("a", 0).unwrap(), "a");
    }

    #[test]
    fn counting_examples() {
        let train = vec![
            labeled("r1", "please stop tracking me", Label::Pfr),
            labeled("r2", "the app leaks my data", Label::Pb),
            labeled("r3", "fun game to play", Label::Pir),
        ];
        let lex = SynonymLexicon::builtin();
        let (out, rep) = augment_training_set(&train, &AugPlan::zero(1), &lex, &StubProvider).unwrap();
        assert_eq!(out, train);
        assert_eq!(rep.generated, 0);

        let mut plan = AugPlan::zero(1);
        plan.random_word_drop = 1;
        let (out, _) = augment_training_set(&train, &plan, &lex, &StubProvider).unwrap();
        assert_eq!(out.len(), 6);

        let (out, rep) = augment_training_set(&train, &AugPlan::default(), &lex, &StubProvider).unwrap();
        assert_eq!(rep.generated, 9 * 3);
        assert_eq!(out.len(), 10 * 3);
        for r in &out[3..] {
            let parent = train.iter().find(|p| Some(&p.review_id) == r.parent_id.as_ref()).unwrap();
            assert_eq!(r.gold_label, parent.gold_label);
            assert_eq!(r.source, Source::Augmented);
        }
        let ids: std::collections::HashSet<_> = out.iter().map(|r| &r.review_id).collect();
        assert_eq!(ids.len(), out.len());
    }

    struct Failing;
    impl TextTransformProvider for Failing {
        fn substitute(&self, _: &str, _: u64) -> Result<String, AugError> {
            Err(AugError::Provider("down".into()))
        }
        fn insert(&self, t: &str, s: u64) -> Result<String, AugError> {
            StubProvider.insert(t, s)
        }
        fn summarize(&self, t: &str, s: u64) -> Result<String, AugError> {
            StubProvider.summarize(t, s)
        }
    }

    #[test]
    fn provider_failures_are_counted() {
        let train = vec![labeled("r1", "a b c", Label::Pb), labeled("r2", "d e f", Label::Pfr)];
        let (out, rep) =
            augment_training_set(&train, &AugPlan::default(), &SynonymLexicon::builtin(), &Failing).unwrap();
        assert_eq!(rep.skipped, 4);
        assert_eq!(rep.generated + rep.skipped, rep.planned);
        assert_eq!(out.len(), 2 + rep.generated);
    }

    #[cfg(unix)]
    #[test]
    fn external_provider_round_trip() {
        // `cat` echoes the request object back, which is not a JSON string.
        let p = provider_from_spec("cmd:cat").unwrap();
        assert!(matches!(p.substitute("a b", 1), Err(AugError::Provider(_))));
        assert!(provider_from_spec("nope").is_err());
    }

    proptest! {
        #[test]
        fn drop_never_empty_and_subsequence(
            words in proptest::collection::vec("[a-z]{1,6}", 1..40),
            p in 0.01f64..0.99,
            s in any::<u64>(),
        ) {
            let text = words.join(" ");
            let out = random_word_drop(&text, p, s).unwrap();
            prop_assert!(!out.is_empty());
            let mut it = words.iter();
            for tok in out.split(' ') {
                prop_assert!(it.any(|w| w == tok));
            }
        }

        #[test]
        fn substitution_preserves_positions(
            words in proptest::collection::vec("(good|bad|app|data|[a-z]{2,5})", 1..30),
            s in any::<u64>(),
        ) {
            let lex = SynonymLexicon::builtin();
            let text = words.join(" ");
            let out = synonym_substitution(&text, &lex, 0.5, s).unwrap();
            let toks: Vec<&str> = out.split(' ').collect();
            prop_assert_eq!(toks.len(), words.len());
            for (w, t) in words.iter().zip(&toks) {
                let ok = w == t || lex.get(w).is_some_and(|syns| syns.iter().any(|x| x == t));
                prop_assert!(ok);
            }
        }
    }
}
