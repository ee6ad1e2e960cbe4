use crate::tensor::{Float, Tensor};

#[inline]
pub fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn relu_forward<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient is passed where the input was strictly positive.
pub fn relu_backward<T: Float>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    x.zip_map(dy, |v, g| if v > T::zero() { g } else { T::zero() })
        .expect("same shape")
}

pub fn sigmoid_forward<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid)
}

/// Uses the forward output: `σ' = σ (1 - σ)`.
pub fn sigmoid_backward<T: Float>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    y.zip_map(dy, |s, g| g * s * (T::one() - s))
        .expect("same shape")
}

/// Smallest `|x|` over the tensor; distance of the batch to the ReLU kink.
pub fn kink_distance<T: Float>(x: &Tensor<T>) -> f64 {
    x.data()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.as_f64().abs()))
}
