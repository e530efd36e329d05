//! Reverse-mode automatic differentiation over dense CPU tensors.
//!
//! Operations are recorded on a [`Graph`] and differentiated with
//! [`Graph::backward`]. Kernels run single-threaded in a fixed order, so
//! results are bitwise reproducible for a given dtype.

mod attention;
mod error;
mod gemm;
mod gradcheck;
mod graph;
mod ops;
mod optim;
mod scalar;
mod tensor;

pub use attention::{AttentionBlockVars, MhaVars};
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{CustomOp, Graph, Var};
pub use ops::{conv_output_extent, deconv_output_extent, BatchStats, NORM_EPS};
pub use optim::{AdamState, ParamId, ParamKind, ParamStore, Parameter};
pub use scalar::{DType, Scalar};
pub use tensor::{numel, Tensor};

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    ops::sigmoid(x)
}
