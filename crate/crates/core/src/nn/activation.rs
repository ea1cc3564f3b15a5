use super::{Matrix, NnError};
use crate::scalar::Scalar;

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Elementwise `x · σ(x)`.
pub fn swish<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.map(|v| v * sigmoid(v))
}

#[inline]
pub fn swish_derivative<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s + x * s * (T::one() - s)
}

/// Gradient through swish given the pre-activation input.
pub fn swish_backward<T: Scalar>(x: &Matrix<T>, grad_out: &Matrix<T>) -> Result<Matrix<T>, NnError> {
    x.map(swish_derivative).hadamard(grad_out)
}

pub fn leaky_relu<T: Scalar>(x: &Matrix<T>, slope: T) -> Matrix<T> {
    x.map(|v| if v > T::zero() { v } else { slope * v })
}

pub fn leaky_relu_backward<T: Scalar>(x: &Matrix<T>, grad_out: &Matrix<T>, slope: T) -> Result<Matrix<T>, NnError> {
    x.map(|v| if v > T::zero() { T::one() } else { slope }).hadamard(grad_out)
}
