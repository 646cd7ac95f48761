//! Forward definitions live in `impl Graph` blocks per family; the reverse
//! rules are dispatched from [`backward`].

mod conv;
mod elementwise;
mod linalg;
mod loss;
mod norm;
mod shape;

use crate::graph::{Graph, Op};
use crate::tensor::Real;

pub(crate) fn backward<T: Real>(
    graph: &Graph<T>,
    index: usize,
    grad: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let node = &graph.nodes[index];
    match &node.op {
        Op::Leaf | Op::Param => {}
        Op::Add(..)
        | Op::Sub(..)
        | Op::Mul(..)
        | Op::Affine { .. }
        | Op::Relu(_)
        | Op::Sigmoid(_)
        | Op::Tanh(_) => elementwise::backward(graph, index, grad, grads),
        Op::Reshape(_)
        | Op::Permute { .. }
        | Op::Expand(_)
        | Op::Concat { .. }
        | Op::Slice { .. } => shape::backward(graph, index, grad, grads),
        Op::Linear { .. } | Op::BatchMatMul(..) => linalg::backward(graph, index, grad, grads),
        Op::Conv2d { .. } | Op::AvgPool2d { .. } | Op::Upsample(_) | Op::ChannelAffine { .. } => {
            conv::backward(graph, index, grad, grads)
        }
        Op::Softmax(_) | Op::LayerNorm { .. } => norm::backward(graph, index, grad, grads),
        Op::MeanAll(_) | Op::CrossEntropy { .. } | Op::L1 { .. } => {
            loss::backward(graph, index, grad, grads)
        }
    }
}
