//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every forward op appends a node holding its value and the inputs it was
//! computed from. Nodes are appended in evaluation order, so the tape is
//! already a topological order and `backward` walks it in reverse.
//! Gradients accumulate additively, so fan-out is handled for free.

mod backward;
mod ops;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use ops::GATHER_ZERO;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) enum Op<S> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias {
        x: Var,
        bias: Var,
    },
    Scale(Var, S),
    Sum(Var),
    Reshape(Var),
    Gather {
        x: Var,
        index: Vec<usize>,
    },
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    Gelu(Var),
    Conv2d {
        x: Var,
        kernel: Var,
        h: usize,
        w: usize,
        cin: usize,
        cout: usize,
        k: usize,
    },
    EmbedKernel {
        small: Var,
        k_small: usize,
        k_big: usize,
        channels: usize,
    },
    WeightedSum {
        branches: Vec<Var>,
        weights: Var,
    },
    Amplitude {
        x: Var,
        t: usize,
        d: usize,
        bins: Vec<usize>,
        re: Vec<S>,
        im: Vec<S>,
    },
}

#[derive(Debug)]
pub(crate) struct Node<S> {
    pub(crate) value: Tensor<S>,
    pub(crate) op: Op<S>,
    pub(crate) requires_grad: bool,
}

/// Recording of a forward computation.
#[derive(Debug, Default)]
pub struct Tape<S> {
    pub(crate) nodes: Vec<Node<S>>,
}

/// Gradients produced by [`Tape::backward`], indexed by the `Var`s of the
/// tape they came from.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
    shapes: Vec<Vec<usize>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn tensor(&self, v: Var) -> Option<Tensor<S>> {
        let g = self.get(v)?;
        Tensor::new(&self.shapes[v.0], g.to_vec()).ok()
    }

    pub(crate) fn take(&mut self, v: Var) -> Option<Vec<S>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Its `requires_grad` flag decides whether it receives
    /// a gradient.
    pub fn leaf(&mut self, t: Tensor<S>) -> Var {
        let requires_grad = t.requires_grad;
        self.push(t, Op::Leaf, requires_grad)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor<S>) -> Var {
        t.requires_grad = false;
        self.push(t, Op::Leaf, false)
    }

    /// Records a leaf that receives a gradient.
    pub fn param(&mut self, t: &Tensor<S>) -> Var {
        let mut t = Tensor::new(t.shape(), t.data().to_vec()).expect("valid tensor");
        t.requires_grad = true;
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub(crate) fn push(&mut self, mut value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        value.grad = None;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Back-propagates from a scalar `loss`, then clears the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<S>> {
        let loss_node = self
            .nodes
            .get(loss.0)
            .ok_or(Error::Index { index: loss.0, len: self.nodes.len() })?;
        if loss_node.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            backward::propagate(&self.nodes, i, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        // only leaves keep their gradient
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                *g = None;
            }
        }
        self.nodes.clear();
        Ok(Gradients { grads, shapes })
    }
}

pub(crate) fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, contrib: Vec<S>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
        None => *slot = Some(contrib),
    }
}
