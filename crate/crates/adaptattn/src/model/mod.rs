//! The AdaptAttn encoder: embeddings plus sinusoidal positions, encoder
//! layers whose multi-head attention reshapes shared projections into a
//! per-batch head count, masked mean pooling and a two-class softmax head.
//!
//! Dimension flow per batch: `[batch, seq, d_model]` through the encoder
//! stack, `[batch, d_model]` after pooling, `[batch, 2]` logits and
//! probabilities `(P1, P2)`.

mod attention;
mod encoder;
mod positional;

use std::collections::HashMap;

pub use attention::{multi_head_attention, scaled_dot_product_attention, AttentionVars};
pub use encoder::{encoder_layer, EncoderLayerVars};
pub use positional::positional_encoding;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::BinConfig;
use crate::error::{Error, Result};
use crate::numcore::{linear, GradTape, Scalar, Tensor, Var, MASK_BIAS};
use crate::training::Batch;

/// Epsilon inside every layer-norm denominator.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Hyperparameters of the encoder. `n_classes` is fixed at 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub n_classes: usize,
    pub bin_config: BinConfig,
}

impl ModelConfig {
    pub fn new(
        d_model: usize,
        n_layers: usize,
        d_ff: usize,
        vocab_size: usize,
        bin_config: BinConfig,
    ) -> Result<Self> {
        let cfg = ModelConfig {
            d_model,
            n_layers,
            d_ff,
            vocab_size,
            n_classes: 2,
            bin_config,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.bin_config.validate()?;
        if self.n_classes != 2 {
            return Err(Error::Config(format!(
                "this classifier is binary, n_classes must be 2, got {}",
                self.n_classes
            )));
        }
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return Err(Error::Config(format!(
                "d_model must be positive and even, got {}",
                self.d_model
            )));
        }
        for &h in &self.bin_config.heads {
            if self.d_model % h != 0 {
                return Err(Error::Config(format!(
                    "d_model {} is not divisible by head count {}",
                    self.d_model, h
                )));
            }
        }
        if self.n_layers == 0 || self.d_ff == 0 || self.vocab_size < 2 {
            return Err(Error::Config(format!(
                "n_layers {} / d_ff {} / vocab_size {} must all be positive (vocab ≥ 2)",
                self.n_layers, self.d_ff, self.vocab_size
            )));
        }
        Ok(())
    }

    /// Number of trainable parameters. Independent of the configured head
    /// counts: the projections are shared and only reshaped per bin.
    pub fn trainable_param_count(&self) -> usize {
        let d = self.d_model;
        let per_layer = 4 * d * d                  // wq, wk, wv, wo
            + d * self.d_ff + self.d_ff            // ff_in + bias
            + self.d_ff * d + d                    // ff_out + bias
            + 4 * d; // two (gamma, beta) pairs
        self.vocab_size * d + self.n_layers * per_layer + d * 2 + 2
    }

    /// Longest padded sequence the positional table must cover.
    pub fn max_pad_len(&self) -> usize {
        self.bin_config.max_pad_len()
    }
}

/// Trainable q/k/v/output projection matrices of one attention block.
#[derive(Debug, Clone)]
pub struct AttentionParams<T> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
}

/// Trainable tensors of one encoder layer.
#[derive(Debug, Clone)]
pub struct EncoderLayerParams<T> {
    pub attention: AttentionParams<T>,
    pub ff_in: Tensor<T>,
    pub ff_b_in: Tensor<T>,
    pub ff_out: Tensor<T>,
    pub ff_b_out: Tensor<T>,
    pub norm1_gamma: Tensor<T>,
    pub norm1_beta: Tensor<T>,
    pub norm2_gamma: Tensor<T>,
    pub norm2_beta: Tensor<T>,
}

/// All model tensors. `positional` is a fixed sinusoidal table and is not
/// trained; everything else is.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    pub embedding: Tensor<T>,
    pub positional: Tensor<T>,
    pub layers: Vec<EncoderLayerParams<T>>,
    pub classifier_w: Tensor<T>,
    pub classifier_b: Tensor<T>,
}

fn xavier<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    let fan_in = shape[0] as f64;
    let fan_out = shape[shape.len() - 1] as f64;
    let bound = (6.0 / (fan_in + fan_out)).sqrt();
    Tensor::uniform(shape, bound, rng)
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded scaled-uniform initialization: every weight matrix is drawn
    /// uniformly within `±√(6/(fan_in+fan_out))`, biases and betas start at
    /// zero, gammas at one.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let embedding = xavier(&[cfg.vocab_size, d], &mut rng);
        let positional = positional_encoding(cfg.max_pad_len(), d)?;
        let layers = (0..cfg.n_layers)
            .map(|_| EncoderLayerParams {
                attention: AttentionParams {
                    wq: xavier(&[d, d], &mut rng),
                    wk: xavier(&[d, d], &mut rng),
                    wv: xavier(&[d, d], &mut rng),
                    wo: xavier(&[d, d], &mut rng),
                },
                ff_in: xavier(&[d, cfg.d_ff], &mut rng),
                ff_b_in: Tensor::zeros(&[cfg.d_ff]),
                ff_out: xavier(&[cfg.d_ff, d], &mut rng),
                ff_b_out: Tensor::zeros(&[d]),
                norm1_gamma: Tensor::filled(&[d], T::one()),
                norm1_beta: Tensor::zeros(&[d]),
                norm2_gamma: Tensor::filled(&[d], T::one()),
                norm2_beta: Tensor::zeros(&[d]),
            })
            .collect();
        let classifier_w = xavier(&[d, cfg.n_classes], &mut rng);
        let classifier_b = Tensor::zeros(&[cfg.n_classes]);
        Ok(ModelParams {
            embedding,
            positional,
            layers,
            classifier_w,
            classifier_b,
        })
    }

    /// All tensors with their checkpoint names, positional included,
    /// in canonical order.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![
            ("embedding".to_string(), &self.embedding),
            ("positional".to_string(), &self.positional),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            let p = |name: &str| format!("layers.{i}.{name}");
            out.push((p("attn.wq"), &layer.attention.wq));
            out.push((p("attn.wk"), &layer.attention.wk));
            out.push((p("attn.wv"), &layer.attention.wv));
            out.push((p("attn.wo"), &layer.attention.wo));
            out.push((p("norm1.gamma"), &layer.norm1_gamma));
            out.push((p("norm1.beta"), &layer.norm1_beta));
            out.push((p("ff.w_in"), &layer.ff_in));
            out.push((p("ff.b_in"), &layer.ff_b_in));
            out.push((p("ff.w_out"), &layer.ff_out));
            out.push((p("ff.b_out"), &layer.ff_b_out));
            out.push((p("norm2.gamma"), &layer.norm2_gamma));
            out.push((p("norm2.beta"), &layer.norm2_beta));
        }
        out.push(("classifier.w".to_string(), &self.classifier_w));
        out.push(("classifier.b".to_string(), &self.classifier_b));
        out
    }

    /// Trainable tensors in canonical order (everything except `positional`).
    pub fn trainable(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = vec![&self.embedding];
        for layer in &self.layers {
            out.extend([
                &layer.attention.wq,
                &layer.attention.wk,
                &layer.attention.wv,
                &layer.attention.wo,
                &layer.norm1_gamma,
                &layer.norm1_beta,
                &layer.ff_in,
                &layer.ff_b_in,
                &layer.ff_out,
                &layer.ff_b_out,
                &layer.norm2_gamma,
                &layer.norm2_beta,
            ]);
        }
        out.push(&self.classifier_w);
        out.push(&self.classifier_b);
        out
    }

    /// Mutable view of the trainable tensors, same order as [`Self::trainable`].
    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = vec![&mut self.embedding];
        for layer in &mut self.layers {
            out.push(&mut layer.attention.wq);
            out.push(&mut layer.attention.wk);
            out.push(&mut layer.attention.wv);
            out.push(&mut layer.attention.wo);
            out.push(&mut layer.norm1_gamma);
            out.push(&mut layer.norm1_beta);
            out.push(&mut layer.ff_in);
            out.push(&mut layer.ff_b_in);
            out.push(&mut layer.ff_out);
            out.push(&mut layer.ff_b_out);
            out.push(&mut layer.norm2_gamma);
            out.push(&mut layer.norm2_beta);
        }
        out.push(&mut self.classifier_w);
        out.push(&mut self.classifier_b);
        out
    }

    /// Rebuilds params from named tensors (checkpoint load), validating every
    /// shape against the config.
    pub fn from_named(cfg: &ModelConfig, tensors: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut map: HashMap<String, Tensor<T>> = tensors.into_iter().collect();
        let d = cfg.d_model;
        let mut take = |name: String, shape: Vec<usize>| -> Result<Tensor<T>> {
            let t = map
                .remove(&name)
                .ok_or_else(|| Error::Data(format!("checkpoint is missing tensor {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "checkpoint tensor {name} has shape {:?} but the config expects {:?}",
                    t.shape(),
                    shape
                )));
            }
            Ok(t)
        };
        let embedding = take("embedding".into(), vec![cfg.vocab_size, d])?;
        let positional = take("positional".into(), vec![cfg.max_pad_len(), d])?;
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let p = |name: &str| format!("layers.{i}.{name}");
            layers.push(EncoderLayerParams {
                attention: AttentionParams {
                    wq: take(p("attn.wq"), vec![d, d])?,
                    wk: take(p("attn.wk"), vec![d, d])?,
                    wv: take(p("attn.wv"), vec![d, d])?,
                    wo: take(p("attn.wo"), vec![d, d])?,
                },
                norm1_gamma: take(p("norm1.gamma"), vec![d])?,
                norm1_beta: take(p("norm1.beta"), vec![d])?,
                ff_in: take(p("ff.w_in"), vec![d, cfg.d_ff])?,
                ff_b_in: take(p("ff.b_in"), vec![cfg.d_ff])?,
                ff_out: take(p("ff.w_out"), vec![cfg.d_ff, d])?,
                ff_b_out: take(p("ff.b_out"), vec![d])?,
                norm2_gamma: take(p("norm2.gamma"), vec![d])?,
                norm2_beta: take(p("norm2.beta"), vec![d])?,
            });
        }
        let classifier_w = take("classifier.w".into(), vec![d, cfg.n_classes])?;
        let classifier_b = take("classifier.b".into(), vec![cfg.n_classes])?;
        if let Some(name) = map.keys().next() {
            return Err(Error::Data(format!(
                "checkpoint contains unexpected tensor {name}"
            )));
        }
        Ok(ModelParams {
            embedding,
            positional,
            layers,
            classifier_w,
            classifier_b,
        })
    }

    /// Clones every tensor onto `tape` as leaves.
    pub fn bind(&self, tape: &GradTape<T>) -> ModelVars<T> {
        ModelVars {
            embedding: tape.leaf(self.embedding.clone()),
            positional: self.positional.clone(),
            layers: self
                .layers
                .iter()
                .map(|layer| EncoderLayerVars {
                    attention: AttentionVars {
                        wq: tape.leaf(layer.attention.wq.clone()),
                        wk: tape.leaf(layer.attention.wk.clone()),
                        wv: tape.leaf(layer.attention.wv.clone()),
                        wo: tape.leaf(layer.attention.wo.clone()),
                    },
                    ff_in: tape.leaf(layer.ff_in.clone()),
                    ff_b_in: tape.leaf(layer.ff_b_in.clone()),
                    ff_out: tape.leaf(layer.ff_out.clone()),
                    ff_b_out: tape.leaf(layer.ff_b_out.clone()),
                    norm1_gamma: tape.leaf(layer.norm1_gamma.clone()),
                    norm1_beta: tape.leaf(layer.norm1_beta.clone()),
                    norm2_gamma: tape.leaf(layer.norm2_gamma.clone()),
                    norm2_beta: tape.leaf(layer.norm2_beta.clone()),
                })
                .collect(),
            classifier_w: tape.leaf(self.classifier_w.clone()),
            classifier_b: tape.leaf(self.classifier_b.clone()),
        }
    }

    /// Elementwise precision conversion.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            embedding: self.embedding.cast(),
            positional: self.positional.cast(),
            layers: self
                .layers
                .iter()
                .map(|layer| EncoderLayerParams {
                    attention: AttentionParams {
                        wq: layer.attention.wq.cast(),
                        wk: layer.attention.wk.cast(),
                        wv: layer.attention.wv.cast(),
                        wo: layer.attention.wo.cast(),
                    },
                    ff_in: layer.ff_in.cast(),
                    ff_b_in: layer.ff_b_in.cast(),
                    ff_out: layer.ff_out.cast(),
                    ff_b_out: layer.ff_b_out.cast(),
                    norm1_gamma: layer.norm1_gamma.cast(),
                    norm1_beta: layer.norm1_beta.cast(),
                    norm2_gamma: layer.norm2_gamma.cast(),
                    norm2_beta: layer.norm2_beta.cast(),
                })
                .collect(),
            classifier_w: self.classifier_w.cast(),
            classifier_b: self.classifier_b.cast(),
        }
    }
}

/// Tape-bound counterpart of [`ModelParams`].
pub struct ModelVars<T> {
    pub embedding: Var<T>,
    pub positional: Tensor<T>,
    pub layers: Vec<EncoderLayerVars<T>>,
    pub classifier_w: Var<T>,
    pub classifier_b: Var<T>,
}

impl<T: Scalar> ModelVars<T> {
    /// Rebuilds the structured view from leaves laid out in the canonical
    /// trainable order, as produced by [`ModelParams::trainable`]. Used by
    /// gradient checking, where the leaves are created externally.
    pub fn from_trainable(vars: &[Var<T>], positional: &Tensor<T>, n_layers: usize) -> Self {
        let mut it = vars.iter().cloned();
        let embedding = it.next().expect("embedding leaf");
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            layers.push(EncoderLayerVars {
                attention: AttentionVars {
                    wq: it.next().expect("wq leaf"),
                    wk: it.next().expect("wk leaf"),
                    wv: it.next().expect("wv leaf"),
                    wo: it.next().expect("wo leaf"),
                },
                norm1_gamma: it.next().expect("norm1.gamma leaf"),
                norm1_beta: it.next().expect("norm1.beta leaf"),
                ff_in: it.next().expect("ff.w_in leaf"),
                ff_b_in: it.next().expect("ff.b_in leaf"),
                ff_out: it.next().expect("ff.w_out leaf"),
                ff_b_out: it.next().expect("ff.b_out leaf"),
                norm2_gamma: it.next().expect("norm2.gamma leaf"),
                norm2_beta: it.next().expect("norm2.beta leaf"),
            });
        }
        let classifier_w = it.next().expect("classifier.w leaf");
        let classifier_b = it.next().expect("classifier.b leaf");
        ModelVars {
            embedding,
            positional: positional.clone(),
            layers,
            classifier_w,
            classifier_b,
        }
    }

    /// Trainable vars in the same canonical order as [`ModelParams::trainable`].
    pub fn trainable(&self) -> Vec<&Var<T>> {
        let mut out: Vec<&Var<T>> = vec![&self.embedding];
        for layer in &self.layers {
            out.extend([
                &layer.attention.wq,
                &layer.attention.wk,
                &layer.attention.wv,
                &layer.attention.wo,
                &layer.norm1_gamma,
                &layer.norm1_beta,
                &layer.ff_in,
                &layer.ff_b_in,
                &layer.ff_out,
                &layer.ff_b_out,
                &layer.norm2_gamma,
                &layer.norm2_beta,
            ]);
        }
        out.push(&self.classifier_w);
        out.push(&self.classifier_b);
        out
    }
}

/// Embedding-row lookup plus positional rows. Rows at masked positions are
/// still produced; masking happens later in attention and pooling.
pub fn embed<T: Scalar>(
    ids: &[u32],
    batch: usize,
    seq: usize,
    embedding: &Var<T>,
    positional: &Tensor<T>,
) -> Result<Var<T>> {
    embedding.gather(ids, batch, seq)?.add_positional(positional)
}

/// Converts a 0/1 mask into the additive attention bias: 0 at real tokens,
/// [`MASK_BIAS`] at padding.
pub fn attention_bias<T: Scalar>(mask: &Tensor<T>) -> Tensor<T> {
    mask.map(|m| {
        if m == T::zero() {
            T::from_f64(MASK_BIAS)
        } else {
            T::zero()
        }
    })
}

/// Model output for one batch.
#[derive(Debug, Clone)]
pub struct Prediction<T> {
    pub logits: Tensor<T>,
    /// Rows sum to 1; the columns are the paper's (P1, P2).
    pub probs: Tensor<T>,
    /// Argmax per item; ties resolve to label 0.
    pub labels: Vec<u8>,
}

impl<T: Scalar> Prediction<T> {
    fn from_tensors(logits: Tensor<T>, probs: Tensor<T>) -> Self {
        let labels = probs
            .data()
            .chunks(2)
            .map(|row| if row[1] > row[0] { 1u8 } else { 0u8 })
            .collect();
        Prediction {
            logits,
            probs,
            labels,
        }
    }
}

/// Runs the full pipeline on an existing tape and returns `(probs, logits)`
/// vars, keeping the graph differentiable for training.
pub fn forward_on_tape<T: Scalar>(
    vars: &ModelVars<T>,
    batch: &Batch<T>,
) -> Result<(Var<T>, Var<T>)> {
    let x = embed(
        &batch.ids,
        batch.len(),
        batch.seq_len,
        &vars.embedding,
        &vars.positional,
    )?;
    let bias = attention_bias(&batch.mask);
    let eps = T::from_f64(LAYER_NORM_EPS);
    let mut x = x;
    for layer in &vars.layers {
        x = encoder_layer(&x, batch.head_count, layer, Some(&bias), eps)?;
    }
    let pooled = x.masked_mean_pool(&batch.mask)?;
    let logits = linear(&pooled, &vars.classifier_w, Some(&vars.classifier_b))?;
    let probs = logits.softmax(1)?;
    Ok((probs, logits))
}

/// Inference entry point: embed → encoder stack at the batch's head count →
/// masked mean pooling → classifier → softmax.
pub fn forward<T: Scalar>(batch: &Batch<T>, params: &ModelParams<T>) -> Result<Prediction<T>> {
    let tape = GradTape::new();
    let vars = params.bind(&tape);
    let (probs, logits) = forward_on_tape(&vars, batch)?;
    Ok(Prediction::from_tensors(logits.value(), probs.value()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LengthBin;

    fn tiny_config() -> ModelConfig {
        let bins = BinConfig::new(4, 8, 16).unwrap();
        ModelConfig::new(8, 2, 16, 20, bins).unwrap()
    }

    fn batch_of(ids: Vec<u32>, lens: &[usize], seq: usize, heads: usize) -> Batch<f64> {
        let b = lens.len();
        let mut mask = Tensor::zeros(&[b, seq]);
        for (i, &l) in lens.iter().enumerate() {
            for s in 0..l {
                mask.data_mut()[i * seq + s] = 1.0;
            }
        }
        Batch {
            ids,
            mask,
            labels: vec![0; b],
            bin: LengthBin::Small,
            head_count: heads,
            seq_len: seq,
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let cfg = tiny_config();
        let params = ModelParams::<f64>::init(&cfg, 42).unwrap();
        let batch = batch_of(vec![2, 3, 4, 0, 5, 6, 7, 8], &[3, 4], 4, 2);
        let pred = forward(&batch, &params).unwrap();
        for row in pred.probs.data().chunks(2) {
            assert!((row[0] + row[1] - 1.0).abs() < 1e-6);
        }
        assert_eq!(pred.labels.len(), 2);
    }

    #[test]
    fn identical_documents_get_identical_rows() {
        let cfg = tiny_config();
        let params = ModelParams::<f64>::init(&cfg, 1).unwrap();
        let batch = batch_of(vec![5, 6, 7, 0, 5, 6, 7, 0], &[3, 3], 4, 2);
        let pred = forward(&batch, &params).unwrap();
        let p = pred.probs.data();
        assert_eq!(&p[0..2], &p[2..4]);
    }

    #[test]
    fn embedding_lookup_definition() {
        let cfg = tiny_config();
        let params = ModelParams::<f64>::init(&cfg, 7).unwrap();
        let tape = GradTape::new();
        let vars = params.bind(&tape);
        let x = embed(&[0], 1, 1, &vars.embedding, &vars.positional)
            .unwrap()
            .value();
        for j in 0..cfg.d_model {
            let expect = params.embedding.data()[j] + params.positional.data()[j];
            assert!((x.data()[j] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_embedding_leaves_positional() {
        let cfg = tiny_config();
        let mut params = ModelParams::<f64>::init(&cfg, 7).unwrap();
        params.embedding = Tensor::zeros(&[cfg.vocab_size, cfg.d_model]);
        let tape = GradTape::new();
        let vars = params.bind(&tape);
        let x = embed(&[3, 9], 1, 2, &vars.embedding, &vars.positional)
            .unwrap()
            .value();
        for s in 0..2 {
            for j in 0..cfg.d_model {
                assert_eq!(
                    x.data()[s * cfg.d_model + j],
                    params.positional.data()[s * cfg.d_model + j]
                );
            }
        }
    }

    #[test]
    fn out_of_range_id_is_a_data_error() {
        let cfg = tiny_config();
        let params = ModelParams::<f64>::init(&cfg, 7).unwrap();
        let batch = batch_of(vec![cfg.vocab_size as u32], &[1], 1, 2);
        let err = forward(&batch, &params).unwrap_err();
        assert!(matches!(err, Error::Data(_)), "{err}");
        assert!(err.to_string().contains("20"), "{err}");
    }

    #[test]
    fn parameter_count_is_head_independent() {
        let bins_a = BinConfig::new(4, 8, 16).unwrap();
        let mut bins_b = bins_a.clone();
        bins_b.heads = [1, 2, 4];
        let a = ModelConfig::new(8, 2, 16, 20, bins_a).unwrap();
        let b = ModelConfig::new(8, 2, 16, 20, bins_b).unwrap();
        assert_eq!(a.trainable_param_count(), b.trainable_param_count());

        // and the actual tensors agree with the formula
        let params = ModelParams::<f64>::init(&a, 0).unwrap();
        let total: usize = params.trainable().iter().map(|t| t.len()).sum();
        assert_eq!(total, a.trainable_param_count());
    }

    #[test]
    fn padding_invariance_in_f64() {
        // same document, raw length vs padded to pad_len: logits must agree
        let cfg = tiny_config();
        let params = ModelParams::<f64>::init(&cfg, 9).unwrap();
        let ids_raw = vec![2, 3, 4];
        let raw = batch_of(ids_raw.clone(), &[3], 3, 2);
        let mut ids_pad = ids_raw;
        ids_pad.extend([0, 0, 0, 0, 0]);
        let padded = batch_of(ids_pad, &[3], 8, 2);
        let a = forward(&raw, &params).unwrap();
        let b = forward(&padded, &params).unwrap();
        assert!(a.logits.max_abs_diff(&b.logits) < 1e-10);
    }

    #[test]
    fn permuting_positions_permutes_outputs_without_positional() {
        // with the positional table zeroed the encoder is permutation-covariant
        let cfg = tiny_config();
        let mut params = ModelParams::<f64>::init(&cfg, 11).unwrap();
        params.positional = Tensor::zeros(&[cfg.max_pad_len(), cfg.d_model]);

        let ids = vec![2u32, 3, 4, 5];
        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<u32> = perm.iter().map(|&i| ids[i]).collect();

        let tape = GradTape::new();
        let vars = params.bind(&tape);
        let bias = attention_bias(&Tensor::filled(&[1, 4], 1.0));
        let eps = cfg_eps();
        let run = |ids: &[u32]| -> Tensor<f64> {
            let mut x = embed(ids, 1, 4, &vars.embedding, &vars.positional).unwrap();
            for layer in &vars.layers {
                x = encoder_layer(&x, 2, layer, Some(&bias), eps).unwrap();
            }
            x.value()
        };
        let base = run(&ids);
        let shuffled = run(&permuted);
        let d = cfg.d_model;
        for (pos, &src) in perm.iter().enumerate() {
            for j in 0..d {
                let a = shuffled.data()[pos * d + j];
                let b = base.data()[src * d + j];
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    fn cfg_eps() -> f64 {
        LAYER_NORM_EPS
    }

    #[test]
    fn full_model_gradient_check_tiny() {
        use crate::numcore::grad_check;
        // d_model=8, n_layers=2, d_ff=16, vocab=50, seq=12
        let bins = BinConfig::new(6, 9, 12).unwrap();
        let cfg = ModelConfig::new(8, 2, 16, 50, bins).unwrap();
        let params = ModelParams::<f64>::init(&cfg, 21).unwrap();
        let batch = {
            let ids: Vec<u32> = (0..24).map(|i| (i % 49 + 1) as u32).collect();
            batch_of(ids, &[10, 12], 12, 2)
        };
        let point: Vec<Tensor<f64>> =
            params.trainable().into_iter().cloned().collect();
        let positional = params.positional.clone();
        let err = grad_check(
            |_tape, vars| {
                let model_vars = ModelVars::from_trainable(vars, &positional, 2);
                let (probs, _logits) = forward_on_tape(&model_vars, &batch)?;
                probs.cross_entropy(&batch.labels)
            },
            &point,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "full-model max rel error {err}");
    }
}
