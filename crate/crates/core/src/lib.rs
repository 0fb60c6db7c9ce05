//! Valence-arousal based multimodal matching between images, music and
//! captions.
//!
//! The crate covers the whole pipeline behind a frozen-feature boundary:
//! backbone features arrive precomputed, and everything downstream (matching
//! labels, the trainable heads, training, retrieval, prompt search and
//! video summarization) lives here.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod matching;
pub mod model;
pub mod nn;
pub mod par;
pub mod retrieval;
pub mod rng;
pub mod synthetic;
pub mod training;
pub mod types;
pub mod zeroshot;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use types::{FeatureDims, FeatureRecord, Features, Modality, Triplet, VaVector};
