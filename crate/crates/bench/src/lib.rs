//! Shared fixtures for the benchmarks in `benches/`.

use sensor_core::cbow::{self, CbowConfig, EmbeddingMatrix};
use sensor_core::grace::{GraceConfig, GraceModel};
use sensor_core::synth::{generate, SynthConfig};
use sensor_core::textprep::{run_stage, PrepConfig, Stage};
use sensor_core::Label;

/// Prepared token lists and gold labels from the default synthetic corpus.
pub fn corpus(reviews: usize) -> (Vec<Vec<String>>, Vec<Label>) {
    let raw = generate(&SynthConfig {
        reviews,
        ..SynthConfig::default()
    });
    let (kept, _) = run_stage(raw, Stage::Post, &PrepConfig::builtin());
    kept.into_iter().map(|r| (r.tokens.unwrap_or_default(), r.gold_label.expect("synthetic reviews are labeled"))).unzip()
}

pub fn embeddings(docs: &[Vec<String>], dim: usize) -> EmbeddingMatrix {
    let cfg = CbowConfig {
        dim,
        min_count: 1,
        epochs: 2,
        ..CbowConfig::default()
    };
    cbow::train_cbow(docs, &cfg).expect("cbow trains on synthetic corpus").0
}

pub fn grace_model(emb: &EmbeddingMatrix, hidden: usize) -> GraceModel {
    let cfg = GraceConfig {
        embed_dim: emb.dim(),
        hidden,
        dense: hidden / 2,
        max_len: 40,
        ..GraceConfig::default()
    };
    GraceModel::new(cfg, emb, 1).expect("valid configuration")
}
