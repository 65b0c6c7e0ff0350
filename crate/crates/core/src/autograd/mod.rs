//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation in execution order, so the tape is
//! topologically sorted by construction. [`Graph::backward`] walks it once in
//! reverse and hands each input edge its contribution exactly once.

mod kernels;
mod ops;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub use kernels::Padding;
pub(crate) use kernels::{reflect_index, ConvGeometry};
pub use ops::{BinaryOp, UnaryOp};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geometry: Box<ConvGeometry>,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geometry: Box<ConvGeometry>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Unary {
        input: Var,
        op: UnaryOp,
    },
    Binary {
        lhs: Var,
        rhs: Var,
        op: BinaryOp,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
    MeanSpatial {
        input: Var,
    },
    Reshape {
        input: Var,
    },
    LowerBound {
        input: Var,
        bound: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::Dense { .. } => "dense_channelwise",
            Op::Unary { op, .. } => op.name(),
            Op::Binary { op, .. } => op.name(),
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::MeanSpatial { .. } => "mean_spatial",
            Op::Reshape { .. } => "reshape",
            Op::LowerBound { .. } => "lower_bound",
        }
    }
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

/// Single-owner record of a forward computation.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    differentiated: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every recorded node so the graph can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.differentiated = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> Shape {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Operation names in recording order, leaves included.
    pub fn op_names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.nodes.iter().map(|n| n.op.name())
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        value.ensure_finite("leaf")?;
        Ok(self.push_unchecked(value, requires_grad, Op::Leaf))
    }

    /// Records a trainable input.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Records a constant input.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn push_unchecked(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, inputs: &[Var], op: Op) -> Result<Var> {
        if self.differentiated {
            return Err(Error::StaleGraph);
        }
        value.ensure_finite(op.name())?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, requires_grad, op))
    }

    /// Computes d`loss`/d`v` for every recorded `v` that requires a gradient.
    ///
    /// A graph can be differentiated once; further calls fail with
    /// [`Error::StaleGraph`] until [`reset`](Self::reset).
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.differentiated {
            return Err(Error::StaleGraph);
        }
        let loss_shape = self.shape(loss);
        if loss_shape.numel() != 1 {
            return Err(Error::config(format!(
                "backward needs a scalar loss, got shape {loss_shape}"
            )));
        }
        self.differentiated = true;

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(loss_shape, 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let contributions = ops::backward_rule(self, idx, &grad)?;
            for (input, g) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                g.ensure_finite(&format!("backward of {}", node.op.name()))?;
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        // Only leaves keep their gradient; intermediate buffers were released above.
        Ok(Gradients { grads })
    }
}
