//! The guardrail model: a small transformer encoder with attention pooling,
//! a prompt classification head, a token classification head, and learned
//! task-uncertainty parameters.

mod backward;
mod checkpoint;
mod forward;
mod model;
mod predict;

pub use backward::backward;
pub use checkpoint::{load, save};
pub use forward::{forward, forward_train, ForwardCache, ForwardOutput};
pub use model::{EncoderBlock, EncoderConfig, GuardrailModel};
pub use predict::{predict, predict_with_details, unsafe_prob, PredictionDetail, Verdict, WordScore};
