use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor, Var};

/// The shared q/k/v projections plus the output projection. The same four
/// matrices serve every head count: adaptivity only changes how their
/// output is reshaped into heads.
pub struct AttentionVars<T> {
    pub wq: Var<T>,
    pub wk: Var<T>,
    pub wv: Var<T>,
    pub wo: Var<T>,
}

/// Scaled dot-product attention over per-head tensors `[batch, heads, seq, d_k]`.
///
/// Returns `(output, weights)` where `weights = softmax(QKᵀ/√d_k + mask_bias)`
/// is row-stochastic over valid key columns; masked columns receive a large
/// negative bias and end up with weight 0.
pub fn scaled_dot_product_attention<T: Scalar>(
    q: &Var<T>,
    k: &Var<T>,
    v: &Var<T>,
    mask_bias: Option<&Tensor<T>>,
) -> Result<(Var<T>, Var<T>)> {
    let shape = q.shape();
    if shape.len() != 4 {
        return Err(Error::Dimension(format!(
            "attention expects [batch, heads, seq, d_k], got {:?}",
            shape
        )));
    }
    let d_k = shape[3];
    let scale = T::one() / T::from_usize(d_k).sqrt();
    let mut scores = q.matmul_t(k)?.scale(scale);
    if let Some(bias) = mask_bias {
        scores = scores.add_key_mask(bias)?;
    }
    let weights = scores.softmax(3)?;
    let output = weights.matmul(v)?;
    Ok((output, weights))
}

/// Multi-head self-attention with a runtime head count.
///
/// Projects `x` through the shared Wq/Wk/Wv, reshapes each projection into
/// `heads` subspaces of width `d_model/heads`, applies scaled dot-product
/// attention per head, concatenates and applies Wo.
pub fn multi_head_attention<T: Scalar>(
    x: &Var<T>,
    heads: usize,
    p: &AttentionVars<T>,
    mask_bias: Option<&Tensor<T>>,
) -> Result<Var<T>> {
    let q = x.matmul(&p.wq)?.split_heads(heads)?;
    let k = x.matmul(&p.wk)?.split_heads(heads)?;
    let v = x.matmul(&p.wv)?.split_heads(heads)?;
    let (context, _weights) = scaled_dot_product_attention(&q, &k, &v, mask_bias)?;
    context.merge_heads()?.matmul(&p.wo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::GradTape;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn identity(n: usize) -> Tensor<f64> {
        let mut m = Tensor::zeros(&[n, n]);
        for i in 0..n {
            m.data_mut()[i * n + i] = 1.0;
        }
        m
    }

    #[test]
    fn singleton_sequence_passes_value_through() {
        let tape = GradTape::new();
        let q = tape.leaf(t(&[1, 1, 1, 2], &[0.3, -0.7]));
        let k = tape.leaf(t(&[1, 1, 1, 2], &[1.0, 2.0]));
        let v = tape.leaf(t(&[1, 1, 1, 2], &[5.0, 6.0]));
        let (out, weights) = scaled_dot_product_attention(&q, &k, &v, None).unwrap();
        assert_eq!(weights.value().data(), &[1.0]);
        assert_eq!(out.value().data(), &[5.0, 6.0]);
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let tape = GradTape::new();
        // both key rows equal -> softmax is uniform for every query row
        let q = tape.leaf(t(&[1, 1, 2, 2], &[0.5, 0.5, 0.5, 0.5]));
        let k = tape.leaf(t(&[1, 1, 2, 2], &[1.0, 2.0, 1.0, 2.0]));
        let v = tape.leaf(t(&[1, 1, 2, 2], &[0.0, 4.0, 2.0, 0.0]));
        let (out, weights) = scaled_dot_product_attention(&q, &k, &v, None).unwrap();
        let w = weights.value();
        assert!((w.data()[0] - 0.5).abs() < 1e-12);
        assert!((w.data()[1] - 0.5).abs() < 1e-12);
        // output is the mean of the value rows
        let o = out.value();
        assert!((o.data()[0] - 1.0).abs() < 1e-12);
        assert!((o.data()[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_matches_exp_normalize_oracle() {
        // brute-force oracle: compute scores, exponentiate, normalize by hand
        let qd = [1.0, 0.0, 0.0, 1.0];
        let kd = [0.5, -0.5, 1.0, 2.0];
        let vd = [1.0, 2.0, 3.0, 4.0];
        let d_k = 2.0f64;

        let mut expect = [0.0f64; 4];
        let mut wexp = [0.0f64; 4];
        for qi in 0..2 {
            let mut scores = [0.0f64; 2];
            for ki in 0..2 {
                let mut dot = 0.0;
                for d in 0..2 {
                    dot += qd[qi * 2 + d] * kd[ki * 2 + d];
                }
                scores[ki] = dot / d_k.sqrt();
            }
            let m = scores[0].max(scores[1]);
            let e = [(scores[0] - m).exp(), (scores[1] - m).exp()];
            let z = e[0] + e[1];
            for ki in 0..2 {
                wexp[qi * 2 + ki] = e[ki] / z;
                for d in 0..2 {
                    expect[qi * 2 + d] += e[ki] / z * vd[ki * 2 + d];
                }
            }
        }

        let tape = GradTape::new();
        let q = tape.leaf(t(&[1, 1, 2, 2], &qd));
        let k = tape.leaf(t(&[1, 1, 2, 2], &kd));
        let v = tape.leaf(t(&[1, 1, 2, 2], &vd));
        let (out, weights) = scaled_dot_product_attention(&q, &k, &v, None).unwrap();
        for (a, b) in out.value().data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in weights.value().data().iter().zip(&wexp) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn single_head_reduces_to_plain_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x_t = Tensor::<f64>::uniform(&[1, 3, 4], 1.0, &mut rng);
        let wq_t = Tensor::<f64>::uniform(&[4, 4], 0.5, &mut rng);
        let wk_t = Tensor::<f64>::uniform(&[4, 4], 0.5, &mut rng);
        let wv_t = Tensor::<f64>::uniform(&[4, 4], 0.5, &mut rng);
        let wo_t = Tensor::<f64>::uniform(&[4, 4], 0.5, &mut rng);

        let tape = GradTape::new();
        let x = tape.leaf(x_t);
        let p = AttentionVars {
            wq: tape.leaf(wq_t),
            wk: tape.leaf(wk_t),
            wv: tape.leaf(wv_t),
            wo: tape.leaf(wo_t),
        };
        let mha = multi_head_attention(&x, 1, &p, None).unwrap();

        // full-width attention followed by Wo
        let q = x.matmul(&p.wq).unwrap().split_heads(1).unwrap();
        let k = x.matmul(&p.wk).unwrap().split_heads(1).unwrap();
        let v = x.matmul(&p.wv).unwrap().split_heads(1).unwrap();
        let (ctx, _) = scaled_dot_product_attention(&q, &k, &v, None).unwrap();
        let plain = ctx.merge_heads().unwrap().matmul(&p.wo).unwrap();

        assert!(mha.value().max_abs_diff(&plain.value()) < 1e-15);
    }

    #[test]
    fn identity_projections_on_single_position() {
        // seq = 1 attention is the identity, so identity weights return x
        let tape = GradTape::new();
        let x = tape.leaf(t(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let p = AttentionVars {
            wq: tape.leaf(identity(4)),
            wk: tape.leaf(identity(4)),
            wv: tape.leaf(identity(4)),
            wo: tape.leaf(identity(4)),
        };
        let out = multi_head_attention(&x, 2, &p, None).unwrap();
        assert!(out.value().max_abs_diff(&x.value()) < 1e-12);
    }

    #[test]
    fn non_divisible_head_count_rejected() {
        let tape = GradTape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 2, 6]));
        let p = AttentionVars {
            wq: tape.leaf(identity(6)),
            wk: tape.leaf(identity(6)),
            wv: tape.leaf(identity(6)),
            wo: tape.leaf(identity(6)),
        };
        assert!(matches!(
            multi_head_attention(&x, 4, &p, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn weights_are_row_stochastic_over_valid_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let tape = GradTape::new();
        let q = tape.leaf(Tensor::<f64>::uniform(&[2, 2, 4, 3], 1.0, &mut rng));
        let k = tape.leaf(Tensor::<f64>::uniform(&[2, 2, 4, 3], 1.0, &mut rng));
        let v = tape.leaf(Tensor::<f64>::uniform(&[2, 2, 4, 3], 1.0, &mut rng));
        // last key position of the second item masked out
        let mut bias = Tensor::zeros(&[2, 4]);
        bias.data_mut()[7] = crate::numcore::MASK_BIAS;
        let (_, weights) = scaled_dot_product_attention(&q, &k, &v, Some(&bias)).unwrap();
        let w = weights.value();
        for row in w.data().chunks(4) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&x| x >= 0.0));
        }
        // masked column carries no weight in any head or query row
        for bh in 2..4 {
            for qi in 0..4 {
                assert!(w.data()[(bh * 4 + qi) * 4 + 3] < 1e-30);
            }
        }
    }
}
