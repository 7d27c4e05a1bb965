//! A single interface over every trained model type.

use std::path::Path;

use crate::baselines::{Baseline, BaselineError};
use crate::container::{peek_kind, ContainerError, ModelKind};
use crate::corpus::Review;
use crate::grace::{GraceError, GraceModel};
use crate::label::{Label, NUM_CLASSES};

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error(transparent)]
    Grace(#[from] GraceError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("review {0} has no tokens; run text preparation first")]
    Untokenized(String),
}

/// Predicted label plus per-class ranking scores (probabilities for GRACE,
/// raw margins for the linear baselines).
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub label: Label,
    pub scores: [f64; NUM_CLASSES],
}

pub trait Classifier {
    fn kind(&self) -> ModelKind;
    fn classify(&self, docs: &[Vec<String>]) -> Result<Vec<Scored>, ClassifierError>;

    fn classify_reviews(&self, reviews: &[Review]) -> Result<Vec<Scored>, ClassifierError> {
        let docs = reviews
            .iter()
            .map(|r| r.tokens.clone().ok_or_else(|| ClassifierError::Untokenized(r.review_id.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        self.classify(&docs)
    }
}

impl Classifier for GraceModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Grace
    }

    fn classify(&self, docs: &[Vec<String>]) -> Result<Vec<Scored>, ClassifierError> {
        Ok(self
            .predict_tokens(docs)?
            .into_iter()
            .map(|p| Scored {
                label: p.label,
                scores: p.probs,
            })
            .collect())
    }
}

impl Classifier for Baseline {
    fn kind(&self) -> ModelKind {
        match self.head {
            crate::baselines::BaselineHead::Flat(_) => ModelKind::Linear,
            crate::baselines::BaselineHead::Hierarchical(_) => ModelKind::Hierarchical,
        }
    }

    fn classify(&self, docs: &[Vec<String>]) -> Result<Vec<Scored>, ClassifierError> {
        Ok(docs
            .iter()
            .map(|d| Scored {
                label: self.predict(d),
                scores: self.scores(d),
            })
            .collect())
    }
}

/// Loads any model file, dispatching on its type tag.
pub fn load_classifier(path: &Path) -> Result<Box<dyn Classifier + Send + Sync>, ClassifierError> {
    Ok(match peek_kind(path)? {
        ModelKind::Grace => Box::new(GraceModel::load(path)?),
        ModelKind::Linear | ModelKind::Hierarchical => Box::new(Baseline::load(path)?),
    })
}

/// Writes `model_label` and `model_probs` on each review.
pub fn annotate(model: &dyn Classifier, reviews: &mut [Review]) -> Result<(), ClassifierError> {
    let out = model.classify_reviews(reviews)?;
    for (r, s) in reviews.iter_mut().zip(out) {
        r.model_label = Some(s.label);
        r.model_probs = Some(s.scores);
    }
    Ok(())
}
