use crate::error::{shape_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    relu_inplace(&mut y);
    y
}

pub fn relu_inplace<T: Real>(x: &mut Tensor<T>) {
    let zero = T::zero();
    for v in x.data_mut() {
        *v = if *v > zero { *v } else { zero };
    }
}

/// Gradient of ReLU given its input or output (`x > 0` iff `relu(x) > 0`); the
/// subgradient at 0 is 0.
pub fn relu_backward<T: Real>(x_or_y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let mut dx = dy.clone();
    relu_backward_inplace(x_or_y, &mut dx)?;
    Ok(dx)
}

pub fn relu_backward_inplace<T: Real>(x_or_y: &Tensor<T>, dy: &mut Tensor<T>) -> Result<()> {
    if x_or_y.shape() != dy.shape() {
        return Err(shape_err("relu gradient shape"));
    }
    let zero = T::zero();
    for (g, &v) in dy.data_mut().iter_mut().zip(x_or_y.data()) {
        *g = if v > zero { *g } else { zero };
    }
    Ok(())
}
