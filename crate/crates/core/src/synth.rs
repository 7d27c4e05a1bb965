//! Template generator for labeled synthetic review corpora.
//!
//! Each review is built from clauses. A clause belongs to one class and is
//! filled from that class's own word pools:
//!
//! * PFR clauses ask for a privacy control ("please add a toggle to hide my
//!   contacts").
//! * PB clauses report a privacy failure ("the app leaks my location to
//!   strangers").
//! * PIR clauses talk about anything else ("the graphics are smooth and the
//!   levels are fun").
//!
//! With probability `aside_rate` a review opens with an aside: a clause from
//! a different class followed by a pivot word ("anyway", "regardless", ...).
//! The label is always the class of the clause after the pivot. Bag-of-words
//! features see both classes' vocabularies in such reviews; only the order
//! tells them apart.
//!
//! Labels are assigned round-robin (PFR, PB, PIR, ...) so classes are
//! balanced to within one review. All randomness comes from `seed`.

use std::collections::HashSet;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Review, Source};
use crate::label::Label;
use crate::seed;
use crate::textprep::{postprocess, preprocess, PrepConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub reviews: usize,
    pub aside_rate: f64,
    pub seed: u64,
    pub app_id: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            reviews: 600,
            aside_rate: 0.4,
            seed: 7,
            app_id: "com.example.synthetic".into(),
        }
    }
}

const PRIVACY_OBJECTS: &[&str] = &[
    "location", "contacts", "photos", "camera", "microphone", "messages", "email", "password", "history",
    "calendar",
];

const REQUEST_OPENERS: &[&str] = &["please add", "i wish you would add", "could you give us", "i would love", "we need"];
const REQUEST_CONTROLS: &[&str] = &["an option", "a toggle", "a setting", "a switch", "a choice"];
const REQUEST_VERBS: &[&str] = &["hide", "restrict", "limit", "manage", "control", "lock"];

const BUG_SUBJECTS: &[&str] = &["the app", "this update", "the latest version", "it"];
const BUG_VERBS: &[&str] = &["leaks", "exposes", "uploads", "broadcasts", "dumps", "sells"];
const BUG_TAILS: &[&str] = &[
    "to strangers",
    "without asking",
    "after i opted out",
    "to advertisers",
    "even when disabled",
];

const OTHER_SUBJECTS: &[&str] = &["graphics", "levels", "music", "animations", "story", "puzzles", "characters"];
const OTHER_ADJECTIVES: &[&str] = &["smooth", "fun", "colorful", "relaxing", "boring", "slow", "addictive"];
const OTHER_TAILS: &[&str] = &[
    "i play every evening",
    "my kids enjoy the puzzles",
    "five stars overall",
    "the ads are annoying though",
    "great time killer",
];

const PIVOTS: &[&str] = &["anyway", "regardless", "nevertheless", "nonetheless"];

fn pick<'a, R: Rng>(rng: &mut R, pool: &[&'a str]) -> &'a str {
    pool.choose(rng).expect("non-empty pool")
}

/// One clause of the given class.
pub fn clause<R: Rng>(label: Label, rng: &mut R) -> String {
    match label {
        Label::Pfr => format!(
            "{} {} to {} my {}",
            pick(rng, REQUEST_OPENERS),
            pick(rng, REQUEST_CONTROLS),
            pick(rng, REQUEST_VERBS),
            pick(rng, PRIVACY_OBJECTS)
        ),
        Label::Pb => format!(
            "{} {} my {} {}",
            pick(rng, BUG_SUBJECTS),
            pick(rng, BUG_VERBS),
            pick(rng, PRIVACY_OBJECTS),
            pick(rng, BUG_TAILS)
        ),
        Label::Pir => format!(
            "the {} are {} and {}",
            pick(rng, OTHER_SUBJECTS),
            pick(rng, OTHER_ADJECTIVES),
            pick(rng, OTHER_TAILS)
        ),
    }
}

fn review_text<R: Rng>(label: Label, aside_rate: f64, rng: &mut R) -> String {
    let body = clause(label, rng);
    if rng.gen_bool(aside_rate) {
        let others: Vec<Label> = Label::ALL.iter().copied().filter(|&l| l != label).collect();
        let aside = clause(*others.choose(rng).expect("two others"), rng);
        capitalize(&format!("{aside}. {}, {body}.", capitalize(pick(rng, PIVOTS))))
    } else {
        capitalize(&format!("{body}."))
    }
}

/// Generates `cfg.reviews` gold-labeled reviews whose token sequences after
/// text preparation are pairwise distinct.
pub fn generate(cfg: &SynthConfig) -> Vec<Review> {
    let mut rng = seed::rng(cfg.seed);
    let prep = PrepConfig::builtin();
    let mut seen = HashSet::new();
    let start = NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date");
    (0..cfg.reviews)
        .map(|i| {
            let label = Label::ALL[i % Label::ALL.len()];
            let text = loop {
                let t = review_text(label, cfg.aside_rate, &mut rng);
                if seen.insert(postprocess(&preprocess(&t, &prep), &prep).join(" ")) {
                    break t;
                }
            };
            let mut r = Review::new(format!("syn-{i:05}"), text);
            r.app_id = cfg.app_id.clone();
            r.posted_at = start.checked_add_days(chrono::Days::new((i % 365) as u64));
            r.rating = Some(rng.gen_range(1..=5));
            r.source = Source::Scraped;
            r.gold_label = Some(label);
            r
        })
        .collect()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}
