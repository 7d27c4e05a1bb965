//! Core pipeline for mining privacy concerns from app-store reviews.

pub mod acquisition;
pub mod augmentation;
pub mod baselines;
pub mod cbow;
pub mod classifier;
pub mod container;
pub mod corpus;
pub mod grace;
pub mod label;
pub mod metrics;
pub mod privacy_filter;
pub mod seed;
pub mod synth;
pub mod textprep;

pub use corpus::{Review, Source};
pub use label::{Label, NUM_CLASSES};
