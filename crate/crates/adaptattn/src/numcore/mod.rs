//! Dense tensors with forward operations and reverse-mode gradients.
//!
//! Everything the encoder needs — batched matrix products, softmax, layer
//! normalization, rectifier, embedding lookup, masked pooling and the
//! cross-entropy loss — is recorded on a [`GradTape`] and differentiated by a
//! single reverse sweep. [`grad_check`] validates any composition against
//! central finite differences.

mod gradcheck;
mod scalar;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use scalar::Scalar;
pub use tape::{linear, GradTape, Var, MASK_BIAS, PROB_CLAMP};
pub use tensor::Tensor;
