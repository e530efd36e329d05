mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod shape;

pub use conv::{conv_output_extent, deconv_output_extent};
pub use norm::{BatchStats, NORM_EPS};

use crate::error::Result;
use crate::graph::{Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) fn backward_node<T: Scalar>(g: &Graph<T>, i: usize, grad: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
    if let Op::Custom { inputs, op } = g.op(i) {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| g.value(v)).collect();
        let grads = op.backward(&values, g.node_value(i), grad)?;
        return Ok(inputs
            .iter()
            .zip(grads)
            .filter_map(|(&v, gr)| gr.map(|t| (v, t)))
            .collect());
    }
    let res = elementwise::backward(g, i, grad)
        .or_else(|| shape::backward(g, i, grad))
        .or_else(|| reduce::backward(g, i, grad))
        .or_else(|| linalg::backward(g, i, grad))
        .or_else(|| conv::backward(g, i, grad))
        .or_else(|| norm::backward(g, i, grad))
        .expect("every non-leaf op has a backward rule");
    Ok(res)
}

pub(crate) use elementwise::sigmoid;
