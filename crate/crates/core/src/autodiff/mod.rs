//! Minimal reverse-mode automatic differentiation over dense matrices, with
//! sparse-dense products and an Adam optimizer.

mod adam;
mod kernels;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use tape::{
    invert_permutation, sigmoid_scalar, softplus_scalar, validate_permutation, CustomOp, Gradients,
    Tape, Var,
};
pub use tensor::Tensor;

pub(crate) use tape::abs_pearson_value;

#[cfg(test)]
pub(crate) mod tests;
