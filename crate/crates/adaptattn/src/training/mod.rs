//! Bin-homogeneous batching, cross-entropy training with Adam, evaluation
//! (positive-class F1 and accuracy), checkpointing and metric history.

mod adam;
mod batch;
mod checkpoint;
mod metrics;
mod trainer;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use batch::{encode_corpus, make_batches, Batch, EncodedDoc};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use metrics::{accuracy, f1_score, Confusion, Metrics, METRICS_CSV_HEADER};
pub use trainer::{evaluate, history_csv, train, EpochRecord, TrainConfig};

use crate::error::Result;
use crate::numcore::{Scalar, Var};

/// Mean cross-entropy of predicted probabilities against binary labels,
/// recorded on the tape so it differentiates through the softmax.
pub fn cross_entropy<T: Scalar>(probs: &Var<T>, labels: &[u8]) -> Result<Var<T>> {
    probs.cross_entropy(labels)
}
