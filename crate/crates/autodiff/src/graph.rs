use crate::error::{AdError, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradient flowing from a node into one of its parents.
pub enum Contribution {
    /// Full-size gradient for the parent.
    Dense(Vec<f64>),
    /// Gradient for the contiguous range `offset..offset + values.len()` of the
    /// parent; the rest is zero.
    Range { offset: usize, values: Vec<f64> },
}

/// Everything a backward closure may read.
pub struct BackwardArgs<'a> {
    pub out: &'a Tensor,
    pub grad: &'a [f64],
    pub inputs: Vec<&'a Tensor>,
    /// Whether each parent needs a gradient. Closures may skip work for `false`.
    pub needs: Vec<bool>,
}

pub(crate) type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Vec<Option<Contribution>>>;

/// Numeric precision of recorded values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    /// Every op output is rounded to the nearest `f32`; used for inference.
    F32,
}

struct Node {
    op: &'static str,
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    is_leaf: bool,
}

/// Operation tape. Nodes are stored in creation order, which is a valid
/// topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
    precision: Precision,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self {
            precision,
            ..Self::default()
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, mut value: Tensor, requires_grad: bool) -> Var {
        if self.precision == Precision::F32 {
            round_f32(value.data_mut());
        }
        self.nodes.push(Node {
            op: "leaf",
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
            is_leaf: true,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.leaf_grads[v.0].as_deref()
    }

    /// Gradient of a leaf as a tensor of the leaf's shape (zeros if unreached).
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let shape = self.shape(v).to_vec();
        match self.grad(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("grad matches shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.leaf_grads {
            *g = None;
        }
    }

    /// Appends an op node. The backward closure is dropped when no parent
    /// requires a gradient.
    pub(crate) fn push(
        &mut self,
        op: &'static str,
        mut value: Tensor,
        parents: &[Var],
        backward: BackwardFn,
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(AdError::NonFinite { op });
        }
        if self.precision == Precision::F32 {
            round_f32(value.data_mut());
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            parents: parents.iter().map(|p| p.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
            is_leaf: false,
        });
        self.leaf_grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse pass from a scalar `loss`. Leaf gradients accumulate across
    /// calls until [`Graph::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.nodes[loss.0].value.numel();
        if n != 1 {
            return Err(AdError::NotScalar(self.nodes[loss.0].value.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if node.is_leaf {
                if node.requires_grad {
                    accumulate(&mut self.leaf_grads[i], Contribution::Dense(grad), 0);
                }
                continue;
            }
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let args = BackwardArgs {
                out: &node.value,
                grad: &grad,
                inputs: node.parents.iter().map(|&p| &self.nodes[p].value).collect(),
                needs: node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect(),
            };
            let contributions = backward(&args);
            debug_assert_eq!(contributions.len(), node.parents.len(), "{}", node.op);
            for (k, contribution) in contributions.into_iter().enumerate() {
                let p = node.parents[k];
                if !self.nodes[p].requires_grad {
                    continue;
                }
                if let Some(c) = contribution {
                    let numel = self.nodes[p].value.numel();
                    accumulate(&mut grads[p], c, numel);
                }
            }
        }
        for g in self.leaf_grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(AdError::NonFinite { op: "backward" });
            }
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, c: Contribution, numel: usize) {
    match (slot.as_mut(), c) {
        (None, Contribution::Dense(v)) => *slot = Some(v),
        (Some(acc), Contribution::Dense(v)) => {
            for (a, b) in acc.iter_mut().zip(&v) {
                *a += b;
            }
        }
        (existing, Contribution::Range { offset, values }) => {
            let acc = match existing {
                Some(acc) => acc,
                None => slot.insert(vec![0.0; numel]),
            };
            for (a, b) in acc[offset..offset + values.len()].iter_mut().zip(&values) {
                *a += b;
            }
        }
    }
}

fn round_f32(data: &mut [f64]) {
    for v in data {
        *v = *v as f32 as f64;
    }
}
