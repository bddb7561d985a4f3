//! Reverse-mode gradient tape over dense tensors.
//!
//! Forward operations append nodes to a [`GradTape`]; because operands are
//! always created before their results, the node list is already in
//! topological order and [`GradTape::backward`] is a single reverse sweep.
//! Gradients accumulate additively across repeated backward calls until
//! [`GradTape::reset_grads`] is invoked.

use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{mm_nn, mm_nt, mm_tn, shape_str};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Additive bias applied to masked key columns before the attention softmax.
/// Large enough to zero the resulting weight, small enough to stay finite in f32.
pub const MASK_BIAS: f64 = -1e9;

/// Probabilities are clamped to this floor inside the cross-entropy loss.
pub const PROB_CLAMP: f64 = 1e-12;

enum Op<T> {
    Leaf,
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, factor: T },
    AddBias { a: usize, bias: usize },
    MatMul { a: usize, b: usize, trans_b: bool },
    Relu { a: usize },
    Softmax { a: usize, axis: usize },
    LayerNorm { a: usize, gamma: usize, beta: usize, eps: T },
    SplitHeads { a: usize, heads: usize },
    MergeHeads { a: usize },
    // bias and positional table are consumed during the forward computation;
    // their gradients pass straight through to the operand
    AddKeyMask { a: usize },
    AddPositional { a: usize },
    Gather { table: usize, ids: Vec<usize> },
    MaskedMeanPool { a: usize, mask: Tensor<T>, counts: Vec<T> },
    Sum { a: usize },
    CrossEntropy { probs: usize, labels: Vec<usize> },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
}

struct TapeInner<T> {
    nodes: Vec<Node<T>>,
}

/// Recorded operation graph with per-node accumulated gradients.
///
/// A tape is single-owner: it is recorded and walked by one logical thread.
pub struct GradTape<T> {
    inner: Rc<RefCell<TapeInner<T>>>,
}

impl<T> Clone for GradTape<T> {
    fn clone(&self) -> Self {
        GradTape {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> Default for GradTape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> GradTape<T> {
    pub fn new() -> Self {
        GradTape {
            inner: Rc::new(RefCell::new(TapeInner { nodes: Vec::new() })),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers `value` as a differentiable leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Var<T> {
        self.push(value, Op::Leaf)
    }

    /// Clears every accumulated gradient.
    pub fn reset_grads(&self) {
        for node in self.inner.borrow_mut().nodes.iter_mut() {
            node.grad = None;
        }
    }

    /// Backpropagates from a scalar `loss` node, adding the resulting
    /// adjoints onto every node's stored gradient.
    pub fn backward(&self, loss: &Var<T>) -> Result<()> {
        assert!(
            Rc::ptr_eq(&self.inner, &loss.tape.inner),
            "loss recorded on a different tape"
        );
        {
            let inner = self.inner.borrow();
            let out = &inner.nodes[loss.idx];
            if out.value.len() != 1 {
                return Err(Error::Contract(format!(
                    "backward requires a scalar loss, got shape {}",
                    shape_str(out.value.shape())
                )));
            }
        }

        let n = self.len();
        let mut adjoints: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        adjoints[loss.idx] = Some(Tensor::scalar(T::one()));

        {
            let inner = self.inner.borrow();
            for idx in (0..n).rev() {
                let adj = match adjoints[idx].take() {
                    Some(adj) => adj,
                    None => continue,
                };
                propagate(&inner.nodes, idx, &adj, &mut adjoints);
                // restore: the node's own adjoint still accumulates into grad
                adjoints[idx] = Some(adj);
            }
        }

        let mut inner = self.inner.borrow_mut();
        for (node, adj) in inner.nodes.iter_mut().zip(adjoints) {
            if let Some(adj) = adj {
                match &mut node.grad {
                    Some(g) => g.add_assign(&adj),
                    None => node.grad = Some(adj),
                }
            }
        }
        Ok(())
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<T> {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            grad: None,
            op,
        });
        Var {
            tape: self.clone(),
            idx,
        }
    }
}

/// Handle to a node on a [`GradTape`].
pub struct Var<T> {
    tape: GradTape<T>,
    idx: usize,
}

impl<T> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var {
            tape: self.tape.clone(),
            idx: self.idx,
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.idx, self.shape())
    }
}

impl<T: Scalar> Var<T> {
    pub fn value(&self) -> Tensor<T> {
        self.tape.inner.borrow().nodes[self.idx].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.idx]
            .value
            .shape()
            .to_vec()
    }

    /// Accumulated gradient; zeros if this node was never reached by backward.
    pub fn grad(&self) -> Tensor<T> {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.idx];
        match &node.grad {
            Some(g) => g.clone(),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    fn same_tape(&self, other: &Var<T>) {
        assert!(
            Rc::ptr_eq(&self.tape.inner, &other.tape.inner),
            "variables recorded on different tapes"
        );
    }

    fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.tape.inner.borrow().nodes[self.idx].value)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, other: &Var<T>) -> Result<Var<T>> {
        self.same_tape(other);
        let value = {
            let inner = self.tape.inner.borrow();
            let (va, vb) = (&inner.nodes[self.idx].value, &inner.nodes[other.idx].value);
            if va.shape() != vb.shape() {
                return Err(Error::Dimension(format!(
                    "add: {} vs {}",
                    shape_str(va.shape()),
                    shape_str(vb.shape())
                )));
            }
            let mut out = va.clone();
            out.add_assign(vb);
            out
        };
        Ok(self.tape.push(
            value,
            Op::Add {
                a: self.idx,
                b: other.idx,
            },
        ))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&self, other: &Var<T>) -> Result<Var<T>> {
        self.same_tape(other);
        let value = {
            let inner = self.tape.inner.borrow();
            let (va, vb) = (&inner.nodes[self.idx].value, &inner.nodes[other.idx].value);
            if va.shape() != vb.shape() {
                return Err(Error::Dimension(format!(
                    "mul: {} vs {}",
                    shape_str(va.shape()),
                    shape_str(vb.shape())
                )));
            }
            let data = va
                .data()
                .iter()
                .zip(vb.data())
                .map(|(&x, &y)| x * y)
                .collect();
            Tensor::new(va.shape().to_vec(), data)?
        };
        Ok(self.tape.push(
            value,
            Op::Mul {
                a: self.idx,
                b: other.idx,
            },
        ))
    }

    pub fn scale(&self, factor: T) -> Var<T> {
        let value = self.with_value(|v| v.map(|x| x * factor));
        self.tape.push(
            value,
            Op::Scale {
                a: self.idx,
                factor,
            },
        )
    }

    /// Broadcast-adds a rank-1 bias over the last axis.
    pub fn add_bias(&self, bias: &Var<T>) -> Result<Var<T>> {
        self.same_tape(bias);
        let value = {
            let inner = self.tape.inner.borrow();
            let (va, vb) = (&inner.nodes[self.idx].value, &inner.nodes[bias.idx].value);
            let m = *va.shape().last().unwrap_or(&0);
            if vb.rank() != 1 || vb.len() != m {
                return Err(Error::Dimension(format!(
                    "add_bias: {} vs bias {}",
                    shape_str(va.shape()),
                    shape_str(vb.shape())
                )));
            }
            let mut out = va.clone();
            for row in out.data_mut().chunks_mut(m) {
                for (o, &b) in row.iter_mut().zip(vb.data()) {
                    *o += b;
                }
            }
            out
        };
        Ok(self.tape.push(
            value,
            Op::AddBias {
                a: self.idx,
                bias: bias.idx,
            },
        ))
    }

    /// Matrix product batched over leading dimensions.
    ///
    /// Either `other` is rank 2 and broadcast across `self`'s leading
    /// dimensions, or both operands share identical leading dimensions and
    /// are multiplied batch by batch.
    pub fn matmul(&self, other: &Var<T>) -> Result<Var<T>> {
        self.matmul_impl(other, false)
    }

    /// Like [`Var::matmul`] with the last two axes of `other` transposed.
    pub fn matmul_t(&self, other: &Var<T>) -> Result<Var<T>> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(&self, other: &Var<T>, trans_b: bool) -> Result<Var<T>> {
        self.same_tape(other);
        let value = {
            let inner = self.tape.inner.borrow();
            let (va, vb) = (&inner.nodes[self.idx].value, &inner.nodes[other.idx].value);
            matmul_forward(va, vb, trans_b)?
        };
        Ok(self.tape.push(
            value,
            Op::MatMul {
                a: self.idx,
                b: other.idx,
                trans_b,
            },
        ))
    }

    /// Elementwise `max(0, x)`; subgradient 0 at 0.
    pub fn relu(&self) -> Var<T> {
        let value = self.with_value(|v| v.map(|x| if x > T::zero() { x } else { T::zero() }));
        self.tape.push(value, Op::Relu { a: self.idx })
    }

    /// Softmax along `axis`, computed with max-subtraction for stability.
    pub fn softmax(&self, axis: usize) -> Result<Var<T>> {
        let value = {
            let inner = self.tape.inner.borrow();
            let va = &inner.nodes[self.idx].value;
            if axis >= va.rank() {
                return Err(Error::Dimension(format!(
                    "softmax: axis {} out of range for shape {}",
                    axis,
                    shape_str(va.shape())
                )));
            }
            let (outer, len, inner_dim) = lane_dims(va.shape(), axis);
            let mut out = va.clone();
            let data = out.data_mut();
            for o in 0..outer {
                for i in 0..inner_dim {
                    let base = o * len * inner_dim + i;
                    let mut mx = T::neg_infinity();
                    for j in 0..len {
                        let v = data[base + j * inner_dim];
                        if v > mx {
                            mx = v;
                        }
                    }
                    let mut sum = T::zero();
                    for j in 0..len {
                        let e = (data[base + j * inner_dim] - mx).exp();
                        data[base + j * inner_dim] = e;
                        sum += e;
                    }
                    for j in 0..len {
                        data[base + j * inner_dim] = data[base + j * inner_dim] / sum;
                    }
                }
            }
            out
        };
        Ok(self
            .tape
            .push(value, Op::Softmax { a: self.idx, axis }))
    }

    /// Standardizes the last axis, then scales by `gamma` and shifts by `beta`.
    pub fn layer_norm(&self, gamma: &Var<T>, beta: &Var<T>, eps: T) -> Result<Var<T>> {
        self.same_tape(gamma);
        self.same_tape(beta);
        let value = {
            let inner = self.tape.inner.borrow();
            let va = &inner.nodes[self.idx].value;
            let vg = &inner.nodes[gamma.idx].value;
            let vb = &inner.nodes[beta.idx].value;
            let d = *va.shape().last().unwrap_or(&0);
            if vg.rank() != 1 || vg.len() != d || vb.rank() != 1 || vb.len() != d {
                return Err(Error::Dimension(format!(
                    "layer_norm: {} vs gamma {} / beta {}",
                    shape_str(va.shape()),
                    shape_str(vg.shape()),
                    shape_str(vb.shape())
                )));
            }
            let mut out = va.clone();
            for row in out.data_mut().chunks_mut(d) {
                let (mu, sigma) = row_moments(row, eps);
                for (x, (&g, &b)) in row.iter_mut().zip(vg.data().iter().zip(vb.data())) {
                    *x = (*x - mu) / sigma * g + b;
                }
            }
            out
        };
        Ok(self.tape.push(
            value,
            Op::LayerNorm {
                a: self.idx,
                gamma: gamma.idx,
                beta: beta.idx,
                eps,
            },
        ))
    }

    /// Reshapes `[batch, seq, d_model]` into per-head `[batch, heads, seq, d_model/heads]`.
    pub fn split_heads(&self, heads: usize) -> Result<Var<T>> {
        let value = {
            let inner = self.tape.inner.borrow();
            let va = &inner.nodes[self.idx].value;
            let shape = va.shape();
            if shape.len() != 3 {
                return Err(Error::Dimension(format!(
                    "split_heads expects rank 3, got {}",
                    shape_str(shape)
                )));
            }
            let (b, s, d) = (shape[0], shape[1], shape[2]);
            if heads == 0 || d % heads != 0 {
                return Err(Error::Config(format!(
                    "head count {} does not divide model width {}",
                    heads, d
                )));
            }
            let dk = d / heads;
            let mut out = Tensor::zeros(&[b, heads, s, dk]);
            let (src, dst) = (va.data(), out.data_mut());
            for bi in 0..b {
                for h in 0..heads {
                    for si in 0..s {
                        let src_base = (bi * s + si) * d + h * dk;
                        let dst_base = ((bi * heads + h) * s + si) * dk;
                        dst[dst_base..dst_base + dk]
                            .copy_from_slice(&src[src_base..src_base + dk]);
                    }
                }
            }
            out
        };
        Ok(self
            .tape
            .push(value, Op::SplitHeads { a: self.idx, heads }))
    }

    /// Inverse of [`Var::split_heads`]: concatenates heads back to `[batch, seq, d_model]`.
    pub fn merge_heads(&self) -> Result<Var<T>> {
        let value = {
            let inner = self.tape.inner.borrow();
            let va = &inner.nodes[self.idx].value;
            let shape = va.shape();
            if shape.len() != 4 {
                return Err(Error::Dimension(format!(
                    "merge_heads expects rank 4, got {}",
                    shape_str(shape)
                )));
            }
            let (b, h, s, dk) = (shape[0], shape[1], shape[2], shape[3]);
            let d = h * dk;
            let mut out = Tensor::zeros(&[b, s, d]);
            let (src, dst) = (va.data(), out.data_mut());
            for bi in 0..b {
                for hi in 0..h {
                    for si in 0..s {
                        let src_base = ((bi * h + hi) * s + si) * dk;
                        let dst_base = (bi * s + si) * d + hi * dk;
                        dst[dst_base..dst_base + dk]
                            .copy_from_slice(&src[src_base..src_base + dk]);
                    }
                }
            }
            out
        };
        Ok(self.tape.push(value, Op::MergeHeads { a: self.idx }))
    }

    /// Adds `bias[b, k]` to every `[b, ·, ·, k]` entry of attention scores,
    /// broadcasting over heads and query positions.
    pub fn add_key_mask(&self, bias: &Tensor<T>) -> Result<Var<T>> {
        let value = {
            let inner = self.tape.inner.borrow();
            let va = &inner.nodes[self.idx].value;
            let shape = va.shape();
            if shape.len() != 4 || bias.rank() != 2 || bias.shape() != [shape[0], shape[3]] {
                return Err(Error::Dimension(format!(
                    "add_key_mask: scores {} vs bias {}",
                    shape_str(shape),
                    shape_str(bias.shape())
                )));
            }
            let (b, h, q, k) = (shape[0], shape[1], shape[2], shape[3]);
            let mut out = va.clone();
            let dst = out.data_mut();
            for bi in 0..b {
                let brow = &bias.data()[bi * k..(bi + 1) * k];
                for hq in 0..h * q {
                    let base = (bi * h * q + hq) * k;
                    for (o, &bv) in dst[base..base + k].iter_mut().zip(brow) {
                        *o += bv;
                    }
                }
            }
            out
        };
        Ok(self.tape.push(value, Op::AddKeyMask { a: self.idx }))
    }

    /// Adds row `s` of a fixed `[max_len, d]` table to every `[·, s, ·]` slice.
    pub fn add_positional(&self, table: &Tensor<T>) -> Result<Var<T>> {
        let value = {
            let inner = self.tape.inner.borrow();
            let va = &inner.nodes[self.idx].value;
            let shape = va.shape();
            if shape.len() != 3
                || table.rank() != 2
                || table.shape()[0] < shape[1]
                || table.shape()[1] != shape[2]
            {
                return Err(Error::Dimension(format!(
                    "add_positional: {} vs table {}",
                    shape_str(shape),
                    shape_str(table.shape())
                )));
            }
            let (b, s, d) = (shape[0], shape[1], shape[2]);
            let mut out = va.clone();
            let dst = out.data_mut();
            for bi in 0..b {
                for si in 0..s {
                    let base = (bi * s + si) * d;
                    let row = &table.data()[si * d..(si + 1) * d];
                    for (o, &p) in dst[base..base + d].iter_mut().zip(row) {
                        *o += p;
                    }
                }
            }
            out
        };
        Ok(self.tape.push(value, Op::AddPositional { a: self.idx }))
    }

    /// Embedding lookup: `self` is a `[vocab, d]` table, `ids` index its rows.
    /// Output shape is `[batch, seq, d]`.
    pub fn gather(&self, ids: &[u32], batch: usize, seq: usize) -> Result<Var<T>> {
        let value = {
            let inner = self.tape.inner.borrow();
            let table = &inner.nodes[self.idx].value;
            if table.rank() != 2 {
                return Err(Error::Dimension(format!(
                    "gather expects a rank-2 table, got {}",
                    shape_str(table.shape())
                )));
            }
            if ids.len() != batch * seq {
                return Err(Error::Dimension(format!(
                    "gather: {} ids for batch {} x seq {}",
                    ids.len(),
                    batch,
                    seq
                )));
            }
            let (v, d) = (table.shape()[0], table.shape()[1]);
            let mut out = Tensor::zeros(&[batch, seq, d]);
            let dst = out.data_mut();
            for (n, &id) in ids.iter().enumerate() {
                let id = id as usize;
                if id >= v {
                    return Err(Error::Data(format!(
                        "token id {} out of range for vocabulary of size {}",
                        id, v
                    )));
                }
                dst[n * d..(n + 1) * d].copy_from_slice(&table.data()[id * d..(id + 1) * d]);
            }
            out
        };
        Ok(self.tape.push(
            value,
            Op::Gather {
                table: self.idx,
                ids: ids.iter().map(|&i| i as usize).collect(),
            },
        ))
    }

    /// Mean over the sequence axis restricted to mask-1 positions.
    pub fn masked_mean_pool(&self, mask: &Tensor<T>) -> Result<Var<T>> {
        let (value, counts) = {
            let inner = self.tape.inner.borrow();
            let va = &inner.nodes[self.idx].value;
            let shape = va.shape();
            if shape.len() != 3 || mask.rank() != 2 || mask.shape() != [shape[0], shape[1]] {
                return Err(Error::Dimension(format!(
                    "masked_mean_pool: {} vs mask {}",
                    shape_str(shape),
                    shape_str(mask.shape())
                )));
            }
            let (b, s, d) = (shape[0], shape[1], shape[2]);
            let mut out = Tensor::zeros(&[b, d]);
            let mut counts = vec![T::zero(); b];
            for bi in 0..b {
                let mut count = T::zero();
                let orow = &mut out.data_mut()[bi * d..(bi + 1) * d];
                for si in 0..s {
                    let mv = mask.data()[bi * s + si];
                    if mv != T::zero() {
                        count += mv;
                        let row = &va.data()[(bi * s + si) * d..(bi * s + si + 1) * d];
                        for (o, &x) in orow.iter_mut().zip(row) {
                            *o += mv * x;
                        }
                    }
                }
                if count == T::zero() {
                    return Err(Error::Data(format!(
                        "empty document reached the model: mask row {} is all zero",
                        bi
                    )));
                }
                for o in orow.iter_mut() {
                    *o = *o / count;
                }
                counts[bi] = count;
            }
            (out, counts)
        };
        Ok(self.tape.push(
            value,
            Op::MaskedMeanPool {
                a: self.idx,
                mask: mask.clone(),
                counts,
            },
        ))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&self) -> Var<T> {
        let value = self.with_value(|v| Tensor::scalar(v.data().iter().copied().sum()));
        self.tape.push(value, Op::Sum { a: self.idx })
    }

    /// Mean of `-ln(p[true class])` over the batch, with probabilities
    /// clamped at [`PROB_CLAMP`]. `self` must be `[batch, 2]` probabilities.
    pub fn cross_entropy(&self, labels: &[u8]) -> Result<Var<T>> {
        let value = {
            let inner = self.tape.inner.borrow();
            let vp = &inner.nodes[self.idx].value;
            if vp.rank() != 2 {
                return Err(Error::Dimension(format!(
                    "cross_entropy expects rank-2 probabilities, got {}",
                    shape_str(vp.shape())
                )));
            }
            let (b, c) = (vp.shape()[0], vp.shape()[1]);
            if labels.len() != b {
                return Err(Error::Dimension(format!(
                    "cross_entropy: {} labels for batch of {}",
                    labels.len(),
                    b
                )));
            }
            let clamp = T::from_f64(PROB_CLAMP);
            let mut acc = T::zero();
            for (bi, &label) in labels.iter().enumerate() {
                if label as usize >= c {
                    return Err(Error::Data(format!(
                        "label {} outside {{0, 1}}",
                        label
                    )));
                }
                let p = vp.data()[bi * c + label as usize];
                acc += -(p.max(clamp)).ln();
            }
            Tensor::scalar(acc / T::from_usize(b))
        };
        Ok(self.tape.push(
            value,
            Op::CrossEntropy {
                probs: self.idx,
                labels: labels.iter().map(|&l| l as usize).collect(),
            },
        ))
    }
}

/// `y = x·W + b`, batched over the leading dimensions of `x`.
pub fn linear<T: Scalar>(x: &Var<T>, w: &Var<T>, b: Option<&Var<T>>) -> Result<Var<T>> {
    let y = x.matmul(w)?;
    match b {
        Some(b) => y.add_bias(b),
        None => Ok(y),
    }
}

fn lane_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn row_moments<T: Scalar>(row: &[T], eps: T) -> (T, T) {
    let d = T::from_usize(row.len());
    let mu = row.iter().copied().sum::<T>() / d;
    let var = row
        .iter()
        .map(|&x| (x - mu) * (x - mu))
        .sum::<T>()
        / d;
    (mu, (var + eps).sqrt())
}

fn matmul_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, trans_b: bool) -> Result<Tensor<T>> {
    let mismatch = || {
        Error::Dimension(format!(
            "matmul{}: {} vs {}",
            if trans_b { "_t" } else { "" },
            shape_str(a.shape()),
            shape_str(b.shape())
        ))
    };
    if b.rank() == 2 {
        if a.rank() < 1 {
            return Err(mismatch());
        }
        let k = *a.shape().last().unwrap();
        let (bk, m) = if trans_b {
            (b.shape()[1], b.shape()[0])
        } else {
            (b.shape()[0], b.shape()[1])
        };
        if k != bk {
            return Err(mismatch());
        }
        let rows = a.len() / k.max(1);
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let mut out = Tensor::zeros(&shape);
        if trans_b {
            mm_nt(a.data(), b.data(), out.data_mut(), rows, k, m);
        } else {
            mm_nn(a.data(), b.data(), out.data_mut(), rows, k, m);
        }
        Ok(out)
    } else if a.rank() == b.rank() && a.rank() >= 3 {
        let r = a.rank();
        if a.shape()[..r - 2] != b.shape()[..r - 2] {
            return Err(mismatch());
        }
        let (n, k) = (a.shape()[r - 2], a.shape()[r - 1]);
        let (bk, m) = if trans_b {
            (b.shape()[r - 1], b.shape()[r - 2])
        } else {
            (b.shape()[r - 2], b.shape()[r - 1])
        };
        if k != bk {
            return Err(mismatch());
        }
        let batches: usize = a.shape()[..r - 2].iter().product();
        let mut shape = a.shape().to_vec();
        shape[r - 2] = n;
        shape[r - 1] = m;
        let mut out = Tensor::zeros(&shape);
        for i in 0..batches {
            let asl = &a.data()[i * n * k..(i + 1) * n * k];
            let bsl = &b.data()[i * k * m..(i + 1) * k * m];
            let osl = &mut out.data_mut()[i * n * m..(i + 1) * n * m];
            if trans_b {
                mm_nt(asl, bsl, osl, n, k, m);
            } else {
                mm_nn(asl, bsl, osl, n, k, m);
            }
        }
        Ok(out)
    } else {
        Err(mismatch())
    }
}

fn accum<T: Scalar>(
    adjoints: &mut [Option<Tensor<T>>],
    idx: usize,
    shape: &[usize],
    f: impl FnOnce(&mut Tensor<T>),
) {
    let slot = adjoints[idx].get_or_insert_with(|| Tensor::zeros(shape));
    f(slot);
}

fn propagate<T: Scalar>(
    nodes: &[Node<T>],
    idx: usize,
    adj: &Tensor<T>,
    adjoints: &mut [Option<Tensor<T>>],
) {
    match &nodes[idx].op {
        Op::Leaf => {}
        Op::Add { a, b } => {
            accum(adjoints, *a, adj.shape(), |g| g.add_assign(adj));
            accum(adjoints, *b, adj.shape(), |g| g.add_assign(adj));
        }
        Op::Mul { a, b } => {
            let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
            accum(adjoints, *a, va.shape(), |g| {
                for ((g, &go), &y) in g.data_mut().iter_mut().zip(adj.data()).zip(vb.data()) {
                    *g += go * y;
                }
            });
            accum(adjoints, *b, vb.shape(), |g| {
                for ((g, &go), &x) in g.data_mut().iter_mut().zip(adj.data()).zip(va.data()) {
                    *g += go * x;
                }
            });
        }
        Op::Scale { a, factor } => {
            let factor = *factor;
            accum(adjoints, *a, adj.shape(), |g| {
                for (g, &go) in g.data_mut().iter_mut().zip(adj.data()) {
                    *g += go * factor;
                }
            });
        }
        Op::AddBias { a, bias } => {
            let m = nodes[*bias].value.len();
            accum(adjoints, *a, adj.shape(), |g| g.add_assign(adj));
            accum(adjoints, *bias, &[m], |g| {
                for row in adj.data().chunks(m) {
                    for (g, &go) in g.data_mut().iter_mut().zip(row) {
                        *g += go;
                    }
                }
            });
        }
        Op::MatMul { a, b, trans_b } => {
            matmul_backward(nodes, *a, *b, *trans_b, adj, adjoints);
        }
        Op::Relu { a } => {
            let va = &nodes[*a].value;
            accum(adjoints, *a, va.shape(), |g| {
                for ((g, &go), &x) in g.data_mut().iter_mut().zip(adj.data()).zip(va.data()) {
                    if x > T::zero() {
                        *g += go;
                    }
                }
            });
        }
        Op::Softmax { a, axis } => {
            let y = &nodes[idx].value;
            let (outer, len, inner_dim) = lane_dims(y.shape(), *axis);
            accum(adjoints, *a, y.shape(), |g| {
                let gd = g.data_mut();
                for o in 0..outer {
                    for i in 0..inner_dim {
                        let base = o * len * inner_dim + i;
                        let mut dot = T::zero();
                        for j in 0..len {
                            let p = base + j * inner_dim;
                            dot += adj.data()[p] * y.data()[p];
                        }
                        for j in 0..len {
                            let p = base + j * inner_dim;
                            gd[p] += y.data()[p] * (adj.data()[p] - dot);
                        }
                    }
                }
            });
        }
        Op::LayerNorm {
            a,
            gamma,
            beta,
            eps,
        } => {
            let va = &nodes[*a].value;
            let vg = &nodes[*gamma].value;
            let d = vg.len();
            let dt = T::from_usize(d);
            // gamma / beta gradients
            accum(adjoints, *beta, &[d], |g| {
                for row in adj.data().chunks(d) {
                    for (g, &go) in g.data_mut().iter_mut().zip(row) {
                        *g += go;
                    }
                }
            });
            accum(adjoints, *gamma, &[d], |g| {
                for (xrow, grow) in va.data().chunks(d).zip(adj.data().chunks(d)) {
                    let (mu, sigma) = row_moments(xrow, *eps);
                    for ((g, &go), &x) in g.data_mut().iter_mut().zip(grow).zip(xrow) {
                        *g += go * (x - mu) / sigma;
                    }
                }
            });
            accum(adjoints, *a, va.shape(), |g| {
                for ((xrow, grow), gout) in va
                    .data()
                    .chunks(d)
                    .zip(adj.data().chunks(d))
                    .zip(g.data_mut().chunks_mut(d))
                {
                    let (mu, sigma) = row_moments(xrow, *eps);
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for ((&go, &x), &gam) in grow.iter().zip(xrow).zip(vg.data()) {
                        let h = go * gam;
                        m1 += h;
                        m2 += h * (x - mu) / sigma;
                    }
                    m1 = m1 / dt;
                    m2 = m2 / dt;
                    for ((go_out, (&go, &x)), &gam) in gout
                        .iter_mut()
                        .zip(grow.iter().zip(xrow))
                        .zip(vg.data())
                    {
                        let xhat = (x - mu) / sigma;
                        *go_out += (go * gam - m1 - xhat * m2) / sigma;
                    }
                }
            });
        }
        Op::SplitHeads { a, heads } => {
            let shape = nodes[*a].value.shape().to_vec();
            let (b, s, d) = (shape[0], shape[1], shape[2]);
            let dk = d / heads;
            accum(adjoints, *a, &shape, |g| {
                let gd = g.data_mut();
                for bi in 0..b {
                    for h in 0..*heads {
                        for si in 0..s {
                            let src_base = ((bi * heads + h) * s + si) * dk;
                            let dst_base = (bi * s + si) * d + h * dk;
                            for t in 0..dk {
                                gd[dst_base + t] += adj.data()[src_base + t];
                            }
                        }
                    }
                }
            });
        }
        Op::MergeHeads { a } => {
            let shape = nodes[*a].value.shape().to_vec();
            let (b, h, s, dk) = (shape[0], shape[1], shape[2], shape[3]);
            let d = h * dk;
            accum(adjoints, *a, &shape, |g| {
                let gd = g.data_mut();
                for bi in 0..b {
                    for hi in 0..h {
                        for si in 0..s {
                            let src_base = (bi * s + si) * d + hi * dk;
                            let dst_base = ((bi * h + hi) * s + si) * dk;
                            for t in 0..dk {
                                gd[dst_base + t] += adj.data()[src_base + t];
                            }
                        }
                    }
                }
            });
        }
        Op::AddKeyMask { a } => {
            accum(adjoints, *a, adj.shape(), |g| g.add_assign(adj));
        }
        Op::AddPositional { a } => {
            accum(adjoints, *a, adj.shape(), |g| g.add_assign(adj));
        }
        Op::Gather { table, ids } => {
            let vt = &nodes[*table].value;
            let d = vt.shape()[1];
            accum(adjoints, *table, vt.shape(), |g| {
                let gd = g.data_mut();
                for (n, &id) in ids.iter().enumerate() {
                    let row = &adj.data()[n * d..(n + 1) * d];
                    for (g, &go) in gd[id * d..(id + 1) * d].iter_mut().zip(row) {
                        *g += go;
                    }
                }
            });
        }
        Op::MaskedMeanPool { a, mask, counts } => {
            let shape = nodes[*a].value.shape().to_vec();
            let (b, s, d) = (shape[0], shape[1], shape[2]);
            accum(adjoints, *a, &shape, |g| {
                let gd = g.data_mut();
                for bi in 0..b {
                    let grow = &adj.data()[bi * d..(bi + 1) * d];
                    let count = counts[bi];
                    for si in 0..s {
                        let mv = mask.data()[bi * s + si];
                        if mv != T::zero() {
                            let w = mv / count;
                            let base = (bi * s + si) * d;
                            for (g, &go) in gd[base..base + d].iter_mut().zip(grow) {
                                *g += w * go;
                            }
                        }
                    }
                }
            });
        }
        Op::Sum { a } => {
            let go = adj.item();
            let shape = nodes[*a].value.shape().to_vec();
            accum(adjoints, *a, &shape, |g| {
                for g in g.data_mut() {
                    *g += go;
                }
            });
        }
        Op::CrossEntropy { probs, labels } => {
            let vp = &nodes[*probs].value;
            let c = vp.shape()[1];
            let batch = T::from_usize(labels.len());
            let clamp = T::from_f64(PROB_CLAMP);
            let go = adj.item();
            accum(adjoints, *probs, vp.shape(), |g| {
                let gd = g.data_mut();
                for (bi, &label) in labels.iter().enumerate() {
                    let p = vp.data()[bi * c + label];
                    if p > clamp {
                        gd[bi * c + label] += -go / (batch * p);
                    }
                }
            });
        }
    }
}

fn matmul_backward<T: Scalar>(
    nodes: &[Node<T>],
    a: usize,
    b: usize,
    trans_b: bool,
    adj: &Tensor<T>,
    adjoints: &mut [Option<Tensor<T>>],
) {
    let va = &nodes[a].value;
    let vb = &nodes[b].value;
    if vb.rank() == 2 {
        let k = *va.shape().last().unwrap();
        let m = if trans_b { vb.shape()[0] } else { vb.shape()[1] };
        let rows = va.len() / k.max(1);
        accum(adjoints, a, va.shape(), |g| {
            if trans_b {
                // gA += GO · B, B stored (m×k)
                mm_nn(adj.data(), vb.data(), g.data_mut(), rows, m, k);
            } else {
                // gA += GO · Bᵀ, B stored (k×m)
                mm_nt(adj.data(), vb.data(), g.data_mut(), rows, m, k);
            }
        });
        accum(adjoints, b, vb.shape(), |g| {
            if trans_b {
                // gB (m×k) += GOᵀ · A
                mm_tn(adj.data(), va.data(), g.data_mut(), m, rows, k);
            } else {
                // gB (k×m) += Aᵀ · GO
                mm_tn(va.data(), adj.data(), g.data_mut(), k, rows, m);
            }
        });
    } else {
        let r = va.rank();
        let (n, k) = (va.shape()[r - 2], va.shape()[r - 1]);
        let m = if trans_b {
            vb.shape()[r - 2]
        } else {
            vb.shape()[r - 1]
        };
        let batches: usize = va.shape()[..r - 2].iter().product();
        accum(adjoints, a, va.shape(), |g| {
            for i in 0..batches {
                let gsl = &mut g.data_mut()[i * n * k..(i + 1) * n * k];
                let osl = &adj.data()[i * n * m..(i + 1) * n * m];
                let bsl = &vb.data()[i * k * m..(i + 1) * k * m];
                if trans_b {
                    mm_nn(osl, bsl, gsl, n, m, k);
                } else {
                    mm_nt(osl, bsl, gsl, n, m, k);
                }
            }
        });
        accum(adjoints, b, vb.shape(), |g| {
            for i in 0..batches {
                let gsl = &mut g.data_mut()[i * k * m..(i + 1) * k * m];
                let osl = &adj.data()[i * n * m..(i + 1) * n * m];
                let asl = &va.data()[i * n * k..(i + 1) * n * k];
                if trans_b {
                    mm_tn(osl, asl, gsl, m, n, k);
                } else {
                    mm_tn(asl, osl, gsl, k, n, m);
                }
            }
        });
    }
}
