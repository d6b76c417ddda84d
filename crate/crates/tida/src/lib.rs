//! Targeted data augmentation and evaluation toolkit for image-captioning
//! corpora.
//!
//! The pipeline: detect skill-bearing captions (gender, color, counting) in
//! a Karpathy-split corpus, perturb them while keeping the skill, drive a
//! pluggable text-to-image backend to build augmented training manifests,
//! and evaluate generated captions with corpus BLEU@1-4 and skill-word
//! confusion metrics. A linear-probe harness measures skill information in
//! frozen image embeddings.

pub mod augment;
pub mod corpus;
pub mod error;
pub mod genclient;
pub mod metrics;
pub mod perturb;
pub mod probe;
pub mod skills;

pub use error::TidaError;
