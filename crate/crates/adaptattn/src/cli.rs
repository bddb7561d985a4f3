//! Command implementations behind the `adaptattn` binary: corpus statistics,
//! training, evaluation and single-text prediction. Each returns structured
//! output; the binary prints it and maps errors to exit codes
//! (0 success, 2 usage/config/data error, 3 numeric failure).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::corpus::{
    build_vocab, classify_length, length_stats, load_corpus, tokenize, BinStats, LabeledDocument,
    LengthBin, Split, Vocabulary,
};
use crate::error::{Error, Result};
use crate::model::{forward, ModelConfig, ModelParams};
use crate::numcore::Scalar;
use crate::training::{
    evaluate, load_checkpoint, train, Batch, CheckpointMeta, EncodedDoc, Metrics,
    METRICS_CSV_HEADER,
};

/// Numeric width selected by `ADAPTATTN_PRECISION`; f32 is the training
/// default, the test suites use f64.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn from_env() -> Result<Self> {
        match std::env::var("ADAPTATTN_PRECISION") {
            Err(_) => Ok(Precision::F32),
            Ok(raw) => match raw.to_ascii_lowercase().as_str() {
                "f32" => Ok(Precision::F32),
                "f64" => Ok(Precision::F64),
                other => Err(Error::Config(format!(
                    "ADAPTATTN_PRECISION must be f32 or f64, got `{other}`"
                ))),
            },
        }
    }
}

/// Corpus statistics for the train split: prints the per-bin summary and
/// writes `stats.csv` plus `length_histogram.csv` under `out_dir`.
pub fn cmd_stats(corpus_root: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<BinStats> {
    let bins = cfg.bin_config()?;
    let docs = load_corpus(corpus_root, Split::Train, &bins)?;
    let stats = length_stats(&docs, &bins);
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stats_path = out_dir.join("stats.csv");
    fs::write(&stats_path, stats.to_csv()).map_err(|e| Error::io(&stats_path, e))?;
    let hist_path = out_dir.join("length_histogram.csv");
    fs::write(&hist_path, stats.histogram_csv()).map_err(|e| Error::io(&hist_path, e))?;
    Ok(stats)
}

fn run_train<T: Scalar>(corpus_root: &Path, cfg: &RunConfig, out_dir: &Path) -> Result<Metrics> {
    let bins = cfg.bin_config()?;
    let docs = load_corpus(corpus_root, Split::Train, &bins)?;
    let tokenized: Vec<&[String]> = docs.iter().map(|d| d.tokens.as_slice()).collect();
    let vocab = build_vocab(tokenized, cfg.max_vocab, cfg.min_freq)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let train_cfg = cfg.train_config(vocab.size(), out_dir)?;
    vocab.save(&train_cfg.vocab_path)?;

    let (_params, _history) = train::<T>(&docs, &vocab, &train_cfg)?;

    // echo final metrics through the same path `eval` takes: reload the
    // written checkpoint and evaluate the test split
    let test_root = corpus_root.join(Split::Test.dir_name());
    let (params, meta) = load_checkpoint::<T>(&train_cfg.checkpoint_path)?;
    let eval_docs = if test_root.is_dir() {
        load_corpus(corpus_root, Split::Test, &meta.model.bin_config)?
    } else {
        load_corpus(corpus_root, Split::Train, &meta.model.bin_config)?
    };
    evaluate(&params, &meta.model, &eval_docs, &vocab, train_cfg.batch_size)
}

/// Trains on the train split, writes checkpoint, best-epoch checkpoint,
/// vocabulary and metrics CSV under `out_dir`, and returns the final
/// metrics evaluated from the written checkpoint.
pub fn cmd_train(
    corpus_root: &Path,
    cfg: &RunConfig,
    out_dir: &Path,
    precision: Precision,
) -> Result<Metrics> {
    match precision {
        Precision::F32 => run_train::<f32>(corpus_root, cfg, out_dir),
        Precision::F64 => run_train::<f64>(corpus_root, cfg, out_dir),
    }
}

fn resolve_vocab(meta: &CheckpointMeta, checkpoint: &Path) -> Result<Vocabulary> {
    let direct = PathBuf::from(&meta.vocab_path);
    if direct.is_file() {
        return Vocabulary::load(&direct);
    }
    if let (Some(dir), Some(name)) = (checkpoint.parent(), direct.file_name()) {
        let sibling = dir.join(name);
        if sibling.is_file() {
            return Vocabulary::load(&sibling);
        }
    }
    Err(Error::Data(format!(
        "vocabulary file `{}` named by the checkpoint was not found",
        meta.vocab_path
    )))
}

/// Confirms a user-supplied config agrees with the checkpoint's shapes.
fn check_consistency(cfg: &RunConfig, meta: &CheckpointMeta) -> Result<()> {
    let expect = &meta.model;
    let mut mismatches = Vec::new();
    if cfg.d_model != expect.d_model {
        mismatches.push(format!(
            "d_model: checkpoint {} vs config {}",
            expect.d_model, cfg.d_model
        ));
    }
    if cfg.n_layers != expect.n_layers {
        mismatches.push(format!(
            "n_layers: checkpoint {} vs config {}",
            expect.n_layers, cfg.n_layers
        ));
    }
    if cfg.d_ff != expect.d_ff {
        mismatches.push(format!(
            "d_ff: checkpoint {} vs config {}",
            expect.d_ff, cfg.d_ff
        ));
    }
    let bins = cfg.bin_config()?;
    if bins != expect.bin_config {
        mismatches.push(format!(
            "bin config: checkpoint {:?} vs config {:?}",
            expect.bin_config, bins
        ));
    }
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(Error::Dimension(mismatches.join("\n")))
    }
}

fn run_eval<T: Scalar>(
    corpus_root: &Path,
    checkpoint: &Path,
    cfg: Option<&RunConfig>,
    out_dir: &Path,
) -> Result<Metrics> {
    let (params, meta) = load_checkpoint::<T>(checkpoint)?;
    if let Some(cfg) = cfg {
        check_consistency(cfg, &meta)?;
    }
    let vocab = resolve_vocab(&meta, checkpoint)?;
    if vocab.size() != meta.model.vocab_size {
        return Err(Error::Dimension(format!(
            "vocabulary holds {} ids but the checkpoint expects {}",
            vocab.size(),
            meta.model.vocab_size
        )));
    }
    let docs = load_corpus(corpus_root, Split::Test, &meta.model.bin_config)?;
    let batch_size = cfg.map(|c| c.batch_size).unwrap_or(32);
    let metrics = evaluate(&params, &meta.model, &docs, &vocab, batch_size)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_path = out_dir.join("metrics.csv");
    let mut body = if csv_path.is_file() {
        fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?
    } else {
        METRICS_CSV_HEADER.to_string()
    };
    body.push_str(&metrics.csv_row(0, "test", 0.0));
    fs::write(&csv_path, body).map_err(|e| Error::io(&csv_path, e))?;
    Ok(metrics)
}

/// Evaluates a checkpoint on the test split, printing `f1=… accuracy=…
/// loss=…` and appending a CSV row under `out_dir`.
pub fn cmd_eval(
    corpus_root: &Path,
    checkpoint: &Path,
    cfg: Option<&RunConfig>,
    out_dir: &Path,
    precision: Precision,
) -> Result<Metrics> {
    match precision {
        Precision::F32 => run_eval::<f32>(corpus_root, checkpoint, cfg, out_dir),
        Precision::F64 => run_eval::<f64>(corpus_root, checkpoint, cfg, out_dir),
    }
}

/// Prediction for a single text: label, both class probabilities and the
/// routing decision that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictOutput {
    pub label: u8,
    pub p_negative: f64,
    pub p_positive: f64,
    pub bin: LengthBin,
    pub heads: usize,
    pub length: usize,
}

impl fmt::Display for PredictOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "label={} p1={:.6} p2={:.6} length={} bin={} heads={}",
            if self.label == 1 { "positive" } else { "negative" },
            self.p_negative,
            self.p_positive,
            self.length,
            self.bin,
            self.heads
        )
    }
}

fn run_predict<T: Scalar>(text: &str, checkpoint: &Path) -> Result<PredictOutput> {
    let (params, meta) = load_checkpoint::<T>(checkpoint)?;
    let vocab = resolve_vocab(&meta, checkpoint)?;
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::Data("empty document".into()));
    }
    let bins = &meta.model.bin_config;
    let doc = LabeledDocument::new(tokens, 0, bins);
    let length = doc.length;
    let encoded = crate::corpus::encode_document(&doc.tokens, &vocab, bins);
    let (ids, mask, bin) = encoded;
    debug_assert_eq!(bin, classify_length(length.min(bins.max_len_cap), bins));
    let enc = EncodedDoc {
        ids,
        mask,
        bin,
        label: 0,
    };
    let batch = Batch::<T>::from_docs(&[&enc], bins)?;
    let prediction = forward(&batch, &params)?;
    Ok(PredictOutput {
        label: prediction.labels[0],
        p_negative: prediction.probs.data()[0].as_f64(),
        p_positive: prediction.probs.data()[1].as_f64(),
        bin,
        heads: bins.heads_for(bin),
        length,
    })
}

/// Tokenizes, bins and forwards one review through the checkpointed model.
pub fn cmd_predict(text: &str, checkpoint: &Path, precision: Precision) -> Result<PredictOutput> {
    match precision {
        Precision::F32 => run_predict::<f32>(text, checkpoint),
        Precision::F64 => run_predict::<f64>(text, checkpoint),
    }
}

/// The trainable parameter count for a config, exposed for reporting.
pub fn param_count(model: &ModelConfig) -> usize {
    model.trainable_param_count()
}

/// Convenience for tests and examples: initialize and immediately save.
pub fn init_params<T: Scalar>(model: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    ModelParams::init(model, seed)
}
