use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Operation tag kept on every node, mostly for introspection and tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    AddRow,
    MulRow,
    MatMul,
    MatMulNt,
    Transpose,
    Reshape,
    Sum,
    Mean,
    Sigmoid,
    Swish,
    Relu,
    Glu,
    Softmax,
    LogSoftmax,
    SliceRows,
    SliceCols,
    ConcatCols,
    RepeatRows,
    Embedding,
    Dropout,
    LayerNorm,
    BatchNorm,
    Conv1d,
    Conv2d,
    RelPosScores,
    CtcLoss,
    Custom,
}

/// What a backward closure gets to see: the gradient flowing into the node,
/// the node's own forward value and the values of its inputs.
pub struct BackwardArgs<'a> {
    pub grad: &'a [f64],
    pub out: &'a Tensor,
    pub inputs: Vec<&'a Tensor>,
    /// `needs[i]` is false when input `i` does not require a gradient; the
    /// closure may return `None` for it.
    pub needs: Vec<bool>,
}

/// Vector-Jacobian product: one optional gradient per input, in input order.
pub type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Vec<Option<Vec<f64>>>>;

struct Node {
    kind: OpKind,
    inputs: Vec<Var>,
    value: Tensor,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// A recording of one forward computation, in execution order.
///
/// Nodes are appended as ops run, so every node's inputs precede it and a
/// single reverse sweep is a valid backward traversal.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    macs: u64,
}

/// Gradients of a scalar loss with respect to every leaf that required one.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
    visited: usize,
}

impl Gradients {
    /// Gradient for `v`, or `None` if `v` is not a leaf reached by the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        self.get(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.lens[v.0]])
    }

    /// Number of nodes the backward sweep propagated through.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates executed by matmul/conv/attention-score ops so far.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub(crate) fn add_macs(&mut self, n: u64) {
        self.macs += n;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].kind
    }

    pub fn inputs(&self, v: Var) -> &[Var] {
        &self.nodes[v.0].inputs
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record an input tensor; it requires a gradient iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let requires_grad = t.requires_grad();
        self.nodes.push(Node {
            kind: OpKind::Leaf,
            inputs: Vec::new(),
            value: t,
            requires_grad,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record a constant (never differentiated).
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.set_requires_grad(false);
        self.leaf(t)
    }

    /// Record the result of an op. The node requires a gradient iff any input
    /// does; otherwise the backward closure is dropped right away.
    pub fn record(&mut self, kind: OpKind, inputs: &[Var], value: Tensor, backward: BackwardFn) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let mut value = value;
        value.set_requires_grad(requires_grad);
        self.nodes.push(Node {
            kind,
            inputs: inputs.to_vec(),
            value,
            requires_grad,
            backward: requires_grad.then_some(backward),
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let out = &self.nodes[loss.0].value;
        if !out.is_scalar() {
            return Err(Error::NonScalarLoss(out.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        let lens = self.nodes.iter().map(|n| n.value.numel()).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut visited = 0;

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = None;
                continue;
            }
            let Some(backward) = &node.backward else {
                // leaf: keep the accumulated gradient
                if grads[id].is_some() {
                    visited += 1;
                }
                continue;
            };
            let Some(g) = grads[id].take() else { continue };
            visited += 1;
            let args = BackwardArgs {
                grad: &g,
                out: &node.value,
                inputs: node.inputs.iter().map(|v| &self.nodes[v.0].value).collect(),
                needs: node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect(),
            };
            let parent_grads = backward(&args);
            debug_assert_eq!(parent_grads.len(), node.inputs.len());
            for (input, pg) in node.inputs.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.len(), self.nodes[input.0].value.numel());
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads, lens, visited })
    }
}
