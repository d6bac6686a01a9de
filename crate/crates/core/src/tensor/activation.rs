use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Negative-side slope used throughout the network.
pub const LEAKY_SLOPE: f64 = 0.1;

pub fn leaky_relu<T: Scalar>(input: &Tensor<T>, slope: T) -> Tensor<T> {
    input.map(|v| if v >= T::zero() { v } else { slope * v })
}

/// Leaky ReLU whose piece is chosen by the sign of `reference` instead of the
/// input itself, i.e. the linearization around `reference`'s activation pattern.
pub fn leaky_relu_pinned<T: Scalar>(input: &Tensor<T>, reference: &Tensor<T>, slope: T) -> Result<Tensor<T>> {
    if input.shape() != reference.shape() {
        return Err(Error::ShapeMismatch {
            expected: reference.shape().to_vec(),
            actual: input.shape().to_vec(),
        });
    }
    let data = input
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&v, &r)| if r >= T::zero() { v } else { slope * v })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Gradient through a leaky ReLU given its pre-activation input.
pub fn leaky_relu_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    pre_activation: &Tensor<T>,
    slope: T,
) -> Result<Tensor<T>> {
    if grad_out.shape() != pre_activation.shape() {
        return Err(Error::ShapeMismatch {
            expected: pre_activation.shape().to_vec(),
            actual: grad_out.shape().to_vec(),
        });
    }
    let data = grad_out
        .data()
        .iter()
        .zip(pre_activation.data())
        .map(|(&g, &x)| if x >= T::zero() { g } else { slope * g })
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}
