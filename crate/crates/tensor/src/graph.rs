use std::collections::HashMap;

use crate::error::{config_err, Result};
use crate::ops;
use crate::param::{GradBuffer, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, mul: T },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Reshape(Var),
    Permute { x: Var, perm: Vec<usize> },
    Expand(Var),
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Linear { x: Var, w: Var, b: Option<Var> },
    BatchMatMul(Var, Var),
    Conv2d { x: Var, k: Var, stride: usize, pad: usize },
    AvgPool2d { x: Var, window: usize },
    Upsample(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        affine: Option<(Var, Var)>,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    ChannelAffine { x: Var, gamma: Var, beta: Var },
    MeanAll(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    L1 { pred: Var, target: Vec<T> },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub needs_grad: bool,
}

/// Arena of forward values. Node order is insertion order.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    frozen: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            frozen: false,
        }
    }

    /// While set, [`Graph::param`] inserts parameters as constants.
    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is retained after [`Graph::backward`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Inserts a parameter. Repeated calls for the same id return the same
    /// node so gradients from every use accumulate in one buffer.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if self.frozen {
            return self.frozen_param(store, id);
        }
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let value = store.get(id).tensor.clone();
        let v = self.push(value, Op::Param, true);
        self.params.insert(id, v);
        v
    }

    /// Inserts a parameter as a constant: used for frozen sub-networks.
    pub fn frozen_param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.input(store.get(id).tensor.clone())
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub(crate) fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a single-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.numel() != 1 {
            return config_err("backward", "loss must be a single element");
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut kept: Vec<Option<Vec<T>>> = Vec::new();
        kept.resize_with(self.nodes.len(), || None);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf | Op::Param => kept[i] = Some(g),
                _ => ops::backward(self, i, &g, &mut grads),
            }
        }
        let params = self
            .params
            .iter()
            .map(|(&id, &v)| (id, v))
            .collect::<Vec<_>>();
        Ok(Gradients {
            by_node: kept,
            params,
        })
    }
}

/// Gradients retained for leaves and parameters after a reverse pass.
pub struct Gradients<T> {
    by_node: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, Var)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a leaf or parameter node; `None` when the
    /// node was unreachable from the loss.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.by_node.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, v)| self.wrt(*v))
    }

    /// Adds every parameter gradient into `buf`, in parameter-id order.
    pub fn accumulate(&self, buf: &mut GradBuffer<T>) {
        let mut ordered = self.params.clone();
        ordered.sort_by_key(|(p, _)| p.index());
        for (id, v) in ordered {
            if let Some(g) = self.wrt(v) {
                for (dst, &src) in buf.get_mut(id).iter_mut().zip(g) {
                    *dst = *dst + src;
                }
            }
        }
    }
}

/// Adds `f`'s contribution into the gradient slot of `v`, allocating zeros
/// on first touch.
pub(crate) fn accumulate<T: Real>(
    grads: &mut [Option<Vec<T>>],
    graph: &Graph<T>,
    v: Var,
    f: impl FnOnce(&mut [T]),
) {
    if !graph.nodes[v.0].needs_grad {
        return;
    }
    let len = graph.nodes[v.0].value.numel();
    let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
    f(slot);
}
