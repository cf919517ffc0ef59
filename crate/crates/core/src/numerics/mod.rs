//! Dense `f64` kernels used by the encoder, decoder and trainers.
//!
//! Gradients are derived by hand per layer; [`grad_check`] is the contract that
//! keeps them honest.

mod adam;
mod gradcheck;
mod matrix;
mod ops;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_with_floor, GradCheckReport, NOISE_FLOOR};
pub use matrix::{axpy, dot, Matrix};
pub use ops::{
    grouped_softmax, grouped_softmax_backward, l1_distance, leaky_relu, leaky_relu_grad,
    leaky_relu_scalar, normalize_rows, normalize_rows_backward, sigmoid, sign, softplus,
    Activation, GroupIndex,
};
pub(crate) use ops::softmax_into;
