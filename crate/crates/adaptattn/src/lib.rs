//! AdaptAttn: a transformer encoder for binary sentiment classification
//! whose multi-head attention uses 2, 4 or 8 heads chosen per document by a
//! length-binning rule.
//!
//! ```text
//! text ─ tokenize ─ vocabulary ─ length bin (Small/Medium/Large)
//!      └─ ids + mask ─ bin-homogeneous batch (2/4/8 heads, per-bin padding)
//!           └─ embedding + positions ─ [encoder layer × N] ─ masked mean
//!                └─ classifier ─ softmax ─ (P1, P2)
//! ```
//!
//! The numeric core is written from scratch: dense tensors, a reverse-mode
//! gradient tape and a finite-difference gradient checker. The `examples/`
//! directory has one runnable program per capability; the `adaptattn` binary
//! wraps the same entry points as `stats`, `train`, `eval` and `predict`
//! subcommands.

pub mod cli;
pub mod config;
pub mod corpus;
mod error;
pub mod model;
pub mod numcore;
pub mod synthetic;
pub mod training;

pub use config::{Mode, RunConfig};
pub use corpus::{
    build_vocab, classify_length, encode_document, length_stats, load_corpus, tokenize,
    BinConfig, BinStats, LabeledDocument, LengthBin, Split, Vocabulary, PAD_ID, UNK_ID,
};
pub use error::{Error, Result};
pub use model::{
    attention_bias, embed, encoder_layer, forward, forward_on_tape, multi_head_attention,
    positional_encoding, scaled_dot_product_attention, AttentionParams, AttentionVars,
    EncoderLayerParams, EncoderLayerVars, ModelConfig, ModelParams, ModelVars, Prediction,
    LAYER_NORM_EPS,
};
pub use numcore::{grad_check, linear, GradTape, Scalar, Tensor, Var, MASK_BIAS, PROB_CLAMP};
pub use synthetic::{generate, write_corpus, SyntheticConfig, SyntheticDoc};
pub use training::{
    adam_step, cross_entropy, encode_corpus, evaluate, f1_score, load_checkpoint, make_batches,
    save_checkpoint, train, AdamHyper, AdamState, Batch, CheckpointMeta, Confusion, EncodedDoc,
    EpochRecord, Metrics, TrainConfig,
};
