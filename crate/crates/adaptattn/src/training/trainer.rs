use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::adam::{adam_step, AdamHyper, AdamState};
use super::batch::{encode_corpus, make_batches, Batch};
use super::checkpoint::{save_checkpoint, CheckpointMeta};
use super::metrics::{Confusion, Metrics, METRICS_CSV_HEADER};
use crate::corpus::{LabeledDocument, LengthBin, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{forward, forward_on_tape, ModelConfig, ModelParams};
use crate::numcore::{GradTape, Scalar, Tensor, PROB_CLAMP};

/// Everything a training run needs beyond the corpus itself.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamHyper,
    pub seed: u64,
    pub model: ModelConfig,
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
    /// Echoed into the checkpoint header so later commands can find the
    /// vocabulary that trained the model.
    pub vocab_path: PathBuf,
}

impl TrainConfig {
    /// Conventional defaults: batch 32, 30 epochs, Adam at 1e-3.
    pub fn new(model: ModelConfig, out_dir: &Path) -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 30,
            adam: AdamHyper::default(),
            seed: 42,
            model,
            checkpoint_path: out_dir.join("model.ckpt"),
            metrics_path: out_dir.join("metrics.csv"),
            vocab_path: out_dir.join("vocab.txt"),
        }
    }

    /// Where the best-F1 epoch snapshot is written.
    pub fn best_checkpoint_path(&self) -> PathBuf {
        let mut name = self
            .checkpoint_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        name.push_str(".best.ckpt");
        self.checkpoint_path.with_file_name(name)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.adam.learning_rate
            )));
        }
        self.model.validate()
    }
}

/// Per-epoch training metrics plus wall-clock seconds.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub metrics: Metrics,
    pub seconds: f64,
}

/// Renders the metrics history CSV (`epoch,split,loss,accuracy,f1,seconds`).
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    for record in history {
        out.push_str(&record.metrics.csv_row(record.epoch, "train", record.seconds));
    }
    out
}

/// Mean cross-entropy of a probability batch, matching the loss op's
/// clamping and accumulation order.
fn batch_loss_value<T: Scalar>(probs: &Tensor<T>, labels: &[u8]) -> f64 {
    let clamp = T::from_f64(PROB_CLAMP);
    let mut acc = T::zero();
    for (row, &label) in probs.data().chunks(2).zip(labels) {
        acc += -(row[label as usize].max(clamp)).ln();
    }
    (acc / T::from_usize(labels.len())).as_f64()
}

/// Trains from a seeded initialization: per epoch, bin-homogeneous batches
/// are shuffled, run forward, scored with cross-entropy and stepped with
/// Adam. Online train metrics are recorded per epoch; checkpoints are
/// written at the best-F1 epoch and at the end, and the metrics history CSV
/// alongside them. Single-threaded and fully deterministic given the seed.
pub fn train<T: Scalar>(
    docs: &[LabeledDocument],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<(ModelParams<T>, Vec<EpochRecord>)> {
    cfg.validate()?;
    if docs.is_empty() {
        return Err(Error::Data("no documents to train on".into()));
    }
    let encoded = encode_corpus(docs, vocab, &cfg.model.bin_config);
    let mut params = ModelParams::<T>::init(&cfg.model, cfg.seed)?;
    let mut state = AdamState::new(&params.trainable());
    let meta = CheckpointMeta {
        vocab_path: cfg.vocab_path.to_string_lossy().into_owned(),
        model: cfg.model.clone(),
    };
    for path in [&cfg.checkpoint_path, &cfg.metrics_path] {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
    }

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_f1 = f64::NEG_INFINITY;
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let batches =
            make_batches::<T>(&encoded, cfg.batch_size, &cfg.model.bin_config, cfg.seed.wrapping_add(epoch as u64))?;
        let mut confusion = Confusion::default();
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (batch_index, batch) in batches.iter().enumerate() {
            let tape = GradTape::new();
            let vars = params.bind(&tape);
            let (probs, _logits) = forward_on_tape(&vars, batch)?;
            let loss = probs.cross_entropy(&batch.labels)?;
            let loss_value = loss.value().item().as_f64();
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            tape.backward(&loss)?;
            let grads: Vec<Tensor<T>> = vars.trainable().iter().map(|v| v.grad()).collect();
            let mut trainable = params.trainable_mut();
            adam_step(&mut trainable, &grads, &mut state, &cfg.adam)?;

            let probs_value = probs.value();
            for (row, &label) in probs_value.data().chunks(2).zip(&batch.labels) {
                let predicted = if row[1] > row[0] { 1 } else { 0 };
                confusion.record(predicted, label);
            }
            loss_sum += batch_loss_value(&probs_value, &batch.labels) * batch.len() as f64;
            seen += batch.len();
        }
        let metrics = Metrics::from_confusion(confusion, loss_sum / seen as f64);
        if metrics.f1 > best_f1 {
            best_f1 = metrics.f1;
            save_checkpoint(&cfg.best_checkpoint_path(), &params, &meta)?;
        }
        history.push(EpochRecord {
            epoch,
            metrics,
            seconds: started.elapsed().as_secs_f64(),
        });
    }

    save_checkpoint(&cfg.checkpoint_path, &params, &meta)?;
    fs::write(&cfg.metrics_path, history_csv(&history))
        .map_err(|e| Error::io(&cfg.metrics_path, e))?;
    Ok((params, history))
}

/// Evaluates `params` over `docs`: bin-homogeneous batches in deterministic
/// corpus order, argmax predictions, confusion counts, positive-class F1,
/// accuracy and mean loss (summed in fixed batch order).
pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    model_cfg: &ModelConfig,
    docs: &[LabeledDocument],
    vocab: &Vocabulary,
    batch_size: usize,
) -> Result<Metrics> {
    if docs.is_empty() {
        return Err(Error::Data("cannot evaluate an empty document list".into()));
    }
    let encoded = encode_corpus(docs, vocab, &model_cfg.bin_config);
    let mut confusion = Confusion::default();
    let mut loss_sum = 0.0;
    let mut seen = 0usize;
    for bin in LengthBin::ALL {
        let in_bin: Vec<&super::batch::EncodedDoc> =
            encoded.iter().filter(|d| d.bin == bin).collect();
        for chunk in in_bin.chunks(batch_size.max(1)) {
            if chunk.is_empty() {
                continue;
            }
            let batch = Batch::<T>::from_docs(chunk, &model_cfg.bin_config)?;
            let prediction = forward(&batch, params)?;
            for (&predicted, &label) in prediction.labels.iter().zip(&batch.labels) {
                confusion.record(predicted, label);
            }
            loss_sum += batch_loss_value(&prediction.probs, &batch.labels) * batch.len() as f64;
            seen += batch.len();
        }
    }
    Ok(Metrics::from_confusion(confusion, loss_sum / seen as f64))
}
