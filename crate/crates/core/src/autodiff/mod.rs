//! Reverse-mode differentiation over an append-only tape.
//!
//! Every operation appends one node holding its forward value. `backward`
//! walks the nodes in exact reverse recording order, so a node's gradient is
//! complete before it is propagated to its inputs.

mod attention;
mod ops;

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub use ops::UnaryKind;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation with a hand-written backward pass that lives outside this
/// module (the differentiable rasterizer, for example).
pub trait CustomOp<T: Real> {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, in input order. `None` means no
    /// gradient flows to that input.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &[T]) -> Vec<Option<Vec<T>>>;
}

pub(crate) enum Op<T: Real> {
    Leaf,
    MatMul(Var, Var),
    Binary(ops::BinaryKind, Var, Var),
    Unary(UnaryKind, Var),
    Scale(Var, T),
    AddScalar(Var),
    Clamp(Var, T, T),
    Reshape(Var),
    Transpose(Var),
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    Gather { x: Var, idx: Vec<usize> },
    GatherRows { x: Var, idx: Vec<usize> },
    ScatterRows { base: Var, idx: Vec<usize>, update: Var },
    Sum(Var),
    Mean(Var),
    MeanLast(Var),
    LayerNorm { x: Var, scale: Var, rstd: Vec<T> },
    RmsNorm { x: Var, scale: Var, rstd: Vec<T> },
    Softmax(Var),
    Attention { q: Var, k: Var, v: Var, heads: usize, scale: T },
    NormalizeRows { x: Var, norms: Vec<T>, eps: T },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp<T>> },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Ordered record of tensor operations.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node. Values bound from a parameter store are
    /// copies, so the store itself is untouched.
    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    /// Trainable leaf.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a trainable leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Resets leaf gradients; values are left as they are.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Records a custom operation whose output was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor<T>, op: Box<dyn CustomOp<T>>) -> Var {
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        self.push_node(output, Op::Custom { inputs: inputs.to_vec(), op }, rg)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        self.push_node(value, op, rg)
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Propagates `d loss / d leaf` into every trainable leaf reachable from
    /// `loss`. Calling it again without [`Tape::zero_grad`] accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::Contract(alloc::format!("loss {:?} is not on this tape", loss)))?;
        if root.value.numel() != 1 {
            return Err(Error::Contract(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            for (input, gi) in self.input_grads(i, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(())
    }
}
