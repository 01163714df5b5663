use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::scalar::Real;
use crate::tensor::Tensor;

/// Read-only view of a trainable tensor.
pub struct ParamRef<'a, T> {
    pub name: String,
    pub value: &'a Tensor<T>,
}

/// A trainable tensor with its gradient accumulator.
pub struct ParamMut<'a, T> {
    pub name: String,
    pub value: &'a mut Tensor<T>,
    pub grad: &'a mut Tensor<T>,
}

/// Non-trainable state (batch-norm running statistics).
pub struct BufferRef<'a, T> {
    pub name: String,
    pub value: &'a Tensor<T>,
}

pub struct BufferMut<'a, T> {
    pub name: String,
    pub value: &'a mut Tensor<T>,
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}/{name}")
    }
}

/// Named access to parameters and buffers, in a fixed traversal order.
pub trait Module<T: Real> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>);

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>);

    fn buffers<'a>(&'a self, _prefix: &str, _out: &mut Vec<BufferRef<'a, T>>) {}

    fn buffers_mut<'a>(&'a mut self, _prefix: &str, _out: &mut Vec<BufferMut<'a, T>>) {}

    fn params_vec(&self) -> Vec<ParamRef<'_, T>> {
        let mut ps = Vec::new();
        self.params("", &mut ps);
        ps
    }

    fn params_mut_vec(&mut self) -> Vec<ParamMut<'_, T>> {
        let mut ps = Vec::new();
        self.params_mut("", &mut ps);
        ps
    }

    fn zero_grad(&mut self) {
        let mut ps = Vec::new();
        self.params_mut("", &mut ps);
        for p in ps {
            p.grad.fill(T::zero());
        }
    }

    fn num_params(&self) -> usize {
        let mut ps = Vec::new();
        self.params("", &mut ps);
        ps.iter().map(|p| p.value.len()).sum()
    }
}
