use super::attention::{multi_head_attention, AttentionVars};
use crate::error::Result;
use crate::numcore::{linear, Scalar, Tensor, Var};

/// Tape-bound parameters of one encoder layer.
pub struct EncoderLayerVars<T> {
    pub attention: AttentionVars<T>,
    pub ff_in: Var<T>,
    pub ff_b_in: Var<T>,
    pub ff_out: Var<T>,
    pub ff_b_out: Var<T>,
    pub norm1_gamma: Var<T>,
    pub norm1_beta: Var<T>,
    pub norm2_gamma: Var<T>,
    pub norm2_beta: Var<T>,
}

/// One post-norm encoder layer:
/// `y1 = layer_norm(x + attention(x))`, `y = layer_norm(y1 + ffn(y1))`.
pub fn encoder_layer<T: Scalar>(
    x: &Var<T>,
    heads: usize,
    p: &EncoderLayerVars<T>,
    mask_bias: Option<&Tensor<T>>,
    eps: T,
) -> Result<Var<T>> {
    let attn = multi_head_attention(x, heads, &p.attention, mask_bias)?;
    let y1 = x
        .add(&attn)?
        .layer_norm(&p.norm1_gamma, &p.norm1_beta, eps)?;
    let hidden = linear(&y1, &p.ff_in, Some(&p.ff_b_in))?.relu();
    let ff = linear(&hidden, &p.ff_out, Some(&p.ff_b_out))?;
    y1.add(&ff)?.layer_norm(&p.norm2_gamma, &p.norm2_beta, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::GradTape;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn layer_vars(
        tape: &GradTape<f64>,
        d: usize,
        d_ff: usize,
        rng: &mut ChaCha8Rng,
        zero_weights: bool,
    ) -> EncoderLayerVars<f64> {
        let mat = |shape: &[usize], rng: &mut ChaCha8Rng| {
            if zero_weights {
                Tensor::zeros(shape)
            } else {
                Tensor::uniform(shape, 0.5, rng)
            }
        };
        EncoderLayerVars {
            attention: AttentionVars {
                wq: tape.leaf(mat(&[d, d], rng)),
                wk: tape.leaf(mat(&[d, d], rng)),
                wv: tape.leaf(mat(&[d, d], rng)),
                wo: tape.leaf(mat(&[d, d], rng)),
            },
            ff_in: tape.leaf(mat(&[d, d_ff], rng)),
            ff_b_in: tape.leaf(Tensor::zeros(&[d_ff])),
            ff_out: tape.leaf(mat(&[d_ff, d], rng)),
            ff_b_out: tape.leaf(Tensor::zeros(&[d])),
            norm1_gamma: tape.leaf(Tensor::filled(&[d], 1.0)),
            norm1_beta: tape.leaf(Tensor::zeros(&[d])),
            norm2_gamma: tape.leaf(Tensor::filled(&[d], 1.0)),
            norm2_beta: tape.leaf(Tensor::zeros(&[d])),
        }
    }

    #[test]
    fn preserves_shape_for_every_head_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(batch, seq, heads) in &[(1, 2, 1), (2, 3, 2), (3, 5, 4), (1, 4, 8)] {
            let tape = GradTape::new();
            let x = tape.leaf(Tensor::<f64>::uniform(&[batch, seq, 8], 1.0, &mut rng));
            let p = layer_vars(&tape, 8, 16, &mut rng, false);
            let y = encoder_layer(&x, heads, &p, None, 1e-5).unwrap();
            assert_eq!(y.shape(), vec![batch, seq, 8]);
        }
    }

    #[test]
    fn zero_weights_reduce_to_double_layer_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tape = GradTape::new();
        let x_t = Tensor::<f64>::uniform(&[2, 3, 4], 1.0, &mut rng);
        let x = tape.leaf(x_t.clone());
        let p = layer_vars(&tape, 4, 8, &mut rng, true);
        let y = encoder_layer(&x, 2, &p, None, 1e-5).unwrap();

        let gamma = tape.leaf(Tensor::filled(&[4], 1.0));
        let beta = tape.leaf(Tensor::zeros(&[4]));
        let expect = tape
            .leaf(x_t)
            .layer_norm(&gamma, &beta, 1e-5)
            .unwrap()
            .layer_norm(&gamma, &beta, 1e-5)
            .unwrap();
        assert!(y.value().max_abs_diff(&expect.value()) < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        use crate::numcore::grad_check;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = 8;
        let d_ff = 12;
        let x = Tensor::<f64>::uniform(&[1, 3, d], 1.0, &mut rng);
        let mut point = vec![x];
        for shape in [[d, d]; 4] {
            point.push(Tensor::uniform(&shape, 0.4, &mut rng));
        }
        point.push(Tensor::uniform(&[d, d_ff], 0.4, &mut rng));
        point.push(Tensor::uniform(&[d_ff], 0.2, &mut rng));
        point.push(Tensor::uniform(&[d_ff, d], 0.4, &mut rng));
        point.push(Tensor::uniform(&[d], 0.2, &mut rng));
        point.push(Tensor::filled(&[d], 1.0));
        point.push(Tensor::zeros(&[d]));
        point.push(Tensor::filled(&[d], 1.0));
        point.push(Tensor::zeros(&[d]));

        let err = grad_check(
            |_tape, vars| {
                let p = EncoderLayerVars {
                    attention: AttentionVars {
                        wq: vars[1].clone(),
                        wk: vars[2].clone(),
                        wv: vars[3].clone(),
                        wo: vars[4].clone(),
                    },
                    ff_in: vars[5].clone(),
                    ff_b_in: vars[6].clone(),
                    ff_out: vars[7].clone(),
                    ff_b_out: vars[8].clone(),
                    norm1_gamma: vars[9].clone(),
                    norm1_beta: vars[10].clone(),
                    norm2_gamma: vars[11].clone(),
                    norm2_beta: vars[12].clone(),
                };
                let y = encoder_layer(&vars[0], 2, &p, None, 1e-5)?;
                Ok(y.mul(&y)?.sum())
            },
            &point,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "max rel error {err}");
    }
}
