use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::param::{join, Module, ParamMut, ParamRef};
use super::tt_linear::TtLinear;
use super::Mode;
use crate::error::{shape_err, Error, Result};
use crate::linalg::{gemm, Op};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Dense affine map `Y = X W + b` with `W` stored `in x out`.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    grad_weight: Tensor<T>,
    grad_bias: Tensor<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    /// He-normal weights (`std = sqrt(2 / in)`), zero bias.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let std = libm::sqrt(2.0 / in_dim.max(1) as f64);
        Self::from_parts(Tensor::randn(&[in_dim, out_dim], std, rng), Tensor::zeros(&[out_dim]))
            .expect("consistent shapes")
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.ndim() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(shape_err(format!(
                "linear weight {:?} and bias {:?} disagree",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weight,
            bias,
            input: None,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (rows, cols) = x.rows_cols();
        if x.ndim() < 2 || cols != self.in_dim() {
            return Err(shape_err(format!("linear input {:?}, expected [.., {}]", x.shape(), self.in_dim())));
        }
        let out = self.out_dim();
        let mut y = Vec::with_capacity(rows * out);
        for _ in 0..rows {
            y.extend_from_slice(self.bias.data());
        }
        gemm(rows, out, cols, x.data(), Op::N, self.weight.data(), Op::N, T::one(), &mut y);
        let mut shape = x.shape().to_vec();
        *shape.last_mut().expect("ndim >= 2") = out;
        self.input = (mode == Mode::Train).then(|| x.clone());
        Tensor::from_vec(&shape, y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.input.take().ok_or(Error::NoCache("linear"))?;
        let (rows, cols) = x.rows_cols();
        let out = self.out_dim();
        if dy.rows_cols() != (rows, out) {
            return Err(shape_err(format!("linear dY {:?}", dy.shape())));
        }
        gemm(cols, out, rows, x.data(), Op::T, dy.data(), Op::N, T::one(), self.grad_weight.data_mut());
        let gb = self.grad_bias.data_mut();
        for row in dy.data().chunks_exact(out) {
            for (acc, &v) in gb.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(rows, cols, out, dy.data(), Op::N, self.weight.data(), Op::T, T::zero(), dx.data_mut());
        Ok(dx)
    }

    pub fn grad_weight(&self) -> &Tensor<T> {
        &self.grad_weight
    }

    pub fn grad_bias(&self) -> &Tensor<T> {
        &self.grad_bias
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(ParamRef { name: join(prefix, "weight"), value: &self.weight });
        out.push(ParamRef { name: join(prefix, "bias"), value: &self.bias });
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        out.push(ParamMut {
            name: join(prefix, "weight"),
            value: &mut self.weight,
            grad: &mut self.grad_weight,
        });
        out.push(ParamMut {
            name: join(prefix, "bias"),
            value: &mut self.bias,
            grad: &mut self.grad_bias,
        });
    }
}

/// A linear map realized either densely or as a TT matrix.
#[derive(Clone, Debug)]
pub enum Projection<T> {
    Dense(Linear<T>),
    Tt(TtLinear<T>),
}

impl<T: Real> Projection<T> {
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            Projection::Dense(l) => l.forward(x, mode),
            Projection::Tt(l) => l.forward(x, mode),
        }
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Projection::Dense(l) => l.backward(dy),
            Projection::Tt(l) => l.backward(dy),
        }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Projection::Dense(l) => l.in_dim(),
            Projection::Tt(l) => l.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Projection::Dense(l) => l.out_dim(),
            Projection::Tt(l) => l.out_dim(),
        }
    }

    pub fn is_tt(&self) -> bool {
        matches!(self, Projection::Tt(_))
    }

    /// Weight and bias parameters.
    pub fn param_count(&self) -> usize {
        self.num_params()
    }

    /// Multiply-adds for `rows` input rows.
    pub fn forward_macs(&self, rows: usize) -> u64 {
        match self {
            Projection::Dense(l) => (rows * l.in_dim() * l.out_dim()) as u64,
            Projection::Tt(l) => l.cores().shape().forward_macs(rows),
        }
    }

    /// Dense layer computing the same function.
    pub fn to_dense(&self) -> Linear<T> {
        match self {
            Projection::Dense(l) => Linear::from_parts(l.weight.clone(), l.bias.clone()).expect("valid dense layer"),
            Projection::Tt(l) => l.to_dense(),
        }
    }
}

impl<T: Real> Module<T> for Projection<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        match self {
            Projection::Dense(l) => l.params(prefix, out),
            Projection::Tt(l) => l.params(prefix, out),
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        match self {
            Projection::Dense(l) => l.params_mut(prefix, out),
            Projection::Tt(l) => l.params_mut(prefix, out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn hand_arithmetic() {
        let w = Tensor::from_vec(&[2, 2], vec![2.0, 0.0, 0.0, 3.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![1.0, 1.0]).unwrap();
        let mut l = Linear::from_parts(w, b).unwrap();
        let x = Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap();
        assert_eq!(l.forward(&x, Mode::Eval).unwrap().data(), [3.0, 7.0]);
    }

    #[test]
    fn identity_weight() {
        let w = Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let mut l = Linear::from_parts(w, Tensor::zeros(&[3])).unwrap();
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        assert_eq!(l.forward(&x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn backward_requires_cache_and_shapes() {
        let mut l = Linear::<f64>::from_parts(Tensor::zeros(&[2, 3]), Tensor::zeros(&[3])).unwrap();
        assert!(l.backward(&Tensor::zeros(&[1, 3])).is_err());
        assert!(l.forward(&Tensor::zeros(&[1, 4]), Mode::Train).is_err());
    }
}
