//! Explainable prompt-safety guardrail: a small jointly-trained classifier
//! that labels prompts safe/unsafe and highlights the words behind the call.
//!
//! The crate is organized along the pipeline:
//! - [`corpus`]: dataset ingestion, tokenization, label projection, and token
//!   polarization statistics;
//! - [`labeler`]: synthetic explanation-label generation via dual biased
//!   queries with consistency checking;
//! - [`net`]: the encoder, attention pooling, classification heads, and
//!   checkpointing;
//! - [`loss`]: the focal-modulated, weak-supervision-scaled joint objective;
//! - [`trainer`]: batching, optimization, model selection, threshold tuning;
//! - [`eval`]: F1, faithfulness masking, lexical overlap, post-hoc
//!   explanation baselines, agreement, and latency measurement;
//! - [`planted`]: a synthetic corpus whose labels follow a known rule, used
//!   as a ground-truth oracle.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod labeler;
pub mod loss;
pub mod net;
pub mod planted;
pub mod trainer;
pub mod util;

pub use corpus::{EncodedExample, PolarizationTable, PromptRecord, SafetyLabel, Vocabulary};
pub use error::{Error, Result};
pub use net::{EncoderConfig, GuardrailModel, Verdict};
