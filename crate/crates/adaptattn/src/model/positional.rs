use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};

/// Sinusoidal position table: sine at even columns, cosine at odd columns,
/// frequency `10000^(-2i/d_model)` for column pair `i`. All entries lie in
/// `[-1, 1]` and the table is deterministic.
pub fn positional_encoding<T: Scalar>(max_len: usize, d_model: usize) -> Result<Tensor<T>> {
    if d_model % 2 != 0 {
        return Err(Error::Config(format!(
            "positional encoding requires an even embedding size, got {d_model}"
        )));
    }
    let mut table = Tensor::zeros(&[max_len, d_model]);
    let data = table.data_mut();
    for pos in 0..max_len {
        for col in 0..d_model {
            let pair = (col / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d_model as f64);
            let v = if col % 2 == 0 { angle.sin() } else { angle.cos() };
            data[pos * d_model + col] = T::from_f64(v);
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_zero_alternates_zero_one() {
        let t = positional_encoding::<f64>(4, 6).unwrap();
        for col in 0..6 {
            let expect = if col % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(t.data()[col], expect);
        }
    }

    #[test]
    fn values_bounded_by_one() {
        let t = positional_encoding::<f64>(64, 16).unwrap();
        assert!(t.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn hand_evaluated_entry() {
        // position 1, column 0, d_model = 4: sin(1 / 10000^0) = sin(1)
        let t = positional_encoding::<f64>(2, 4).unwrap();
        assert!((t.data()[4] - 1f64.sin()).abs() < 1e-12);
        assert!((t.data()[4] - 0.841471).abs() < 1e-6);
    }

    #[test]
    fn odd_width_rejected() {
        assert!(matches!(
            positional_encoding::<f64>(4, 5),
            Err(Error::Config(_))
        ));
    }
}
