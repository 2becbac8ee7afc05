use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let zero = T::zero();
    x.map(|v| if v > zero { v } else { zero })
}

/// Masks the upstream gradient by `x > 0`.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_shape(x.shape())?;
    let zero = T::zero();
    let data = grad_out
        .data()
        .iter()
        .zip(x.data())
        .map(|(&g, &v)| if v > zero { g } else { zero })
        .collect();
    Tensor::from_vec(x.shape(), data)
}
