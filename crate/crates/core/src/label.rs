//! The three-class review taxonomy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Target class of a review. Integer codes are stable and used in model files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    /// Privacy-related feature request.
    #[serde(rename = "PFR")]
    Pfr,
    /// Privacy-related bug report.
    #[serde(rename = "PB")]
    Pb,
    /// Privacy-irrelevant review.
    #[serde(rename = "PIR")]
    Pir,
}

pub const NUM_CLASSES: usize = 3;

impl Label {
    pub const ALL: [Label; NUM_CLASSES] = [Label::Pfr, Label::Pb, Label::Pir];

    pub fn code(self) -> usize {
        match self {
            Label::Pfr => 0,
            Label::Pb => 1,
            Label::Pir => 2,
        }
    }

    pub fn from_code(code: usize) -> Option<Label> {
        Label::ALL.get(code).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Pfr => "PFR",
            Label::Pb => "PB",
            Label::Pir => "PIR",
        }
    }

    pub fn one_hot(self) -> [f64; NUM_CLASSES] {
        let mut v = [0.0; NUM_CLASSES];
        v[self.code()] = 1.0;
        v
    }

    /// PFR and PB are the privacy-related classes.
    pub fn is_privacy_related(self) -> bool {
        self != Label::Pir
    }

    /// Index of the largest score; ties go to the lowest class code.
    pub fn argmax(scores: &[f64]) -> Label {
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().take(NUM_CLASSES) {
            if s > scores[best] {
                best = i;
            }
        }
        Label::ALL[best]
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label {0:?} (expected PFR, PB or PIR)")]
pub struct UnknownLabel(pub String);

impl FromStr for Label {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PFR" => Ok(Label::Pfr),
            "PB" => Ok(Label::Pb),
            "PIR" => Ok(Label::Pir),
            _ => Err(UnknownLabel(s.to_string())),
        }
    }
}
