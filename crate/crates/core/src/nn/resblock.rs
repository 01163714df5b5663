use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::activation::{relu_backward_inplace, relu_inplace};
use super::batchnorm::BatchNorm;
use super::linear::{Linear, Projection};
use super::param::{join, BufferMut, BufferRef, Module, ParamMut, ParamRef};
use super::tt_linear::TtLinear;
use super::Mode;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// `Y = relu(X + BN2(L2(relu(BN1(L1 X)))))` at a fixed channel width.
#[derive(Clone, Debug)]
pub struct ResBlock<T> {
    pub l1: Projection<T>,
    pub bn1: BatchNorm<T>,
    pub l2: Projection<T>,
    pub bn2: BatchNorm<T>,
    cache: Option<(Tensor<T>, Tensor<T>)>,
}

fn projection<T: Real, R: Rng + ?Sized>(width: usize, rank: usize, rng: &mut R) -> Result<Projection<T>> {
    if rank == 0 {
        Ok(Projection::Dense(Linear::new(width, width, rng)))
    } else {
        TtLinear::new(width, width, rank, rng).map(Projection::Tt)
    }
}

impl<T: Real> ResBlock<T> {
    /// Dense layers when `rank == 0`, TT layers otherwise.
    pub fn new<R: Rng + ?Sized>(width: usize, rank: usize, rng: &mut R) -> Result<Self> {
        let l1 = projection(width, rank, rng)?;
        let l2 = projection(width, rank, rng)?;
        Self::from_parts(l1, l2)
    }

    pub fn from_parts(l1: Projection<T>, l2: Projection<T>) -> Result<Self> {
        let w = l1.in_dim();
        if l1.out_dim() != w || l2.in_dim() != w || l2.out_dim() != w {
            return Err(shape_err(format!(
                "residual block needs equal widths, got {}->{} and {}->{}",
                l1.in_dim(),
                l1.out_dim(),
                l2.in_dim(),
                l2.out_dim()
            )));
        }
        Ok(Self { l1, bn1: BatchNorm::new(w), l2, bn2: BatchNorm::new(w), cache: None })
    }

    pub fn width(&self) -> usize {
        self.l1.in_dim()
    }

    pub fn is_tt(&self) -> bool {
        self.l1.is_tt()
    }

    /// Same block with both projections densified.
    pub fn to_dense(&self) -> Self {
        Self {
            l1: Projection::Dense(self.l1.to_dense()),
            bn1: self.bn1.clone(),
            l2: Projection::Dense(self.l2.to_dense()),
            bn2: self.bn2.clone(),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.rows_cols().1 != self.width() {
            return Err(shape_err(format!("block of width {} got {:?}", self.width(), x.shape())));
        }
        let mut h = self.l1.forward(x, mode)?;
        h = self.bn1.forward(&h, mode)?;
        relu_inplace(&mut h);
        let mut y = self.l2.forward(&h, mode)?;
        y = self.bn2.forward(&y, mode)?;
        y.add_assign(x)?;
        relu_inplace(&mut y);
        if mode == Mode::Train {
            self.cache = Some((y.clone(), h));
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (y, h) = self.cache.take().ok_or(Error::NoCache("residual block"))?;
        let mut g = dy.clone();
        relu_backward_inplace(&y, &mut g)?;
        let skip = g.clone();
        let mut g = self.bn2.backward(&g)?;
        g = self.l2.backward(&g)?;
        relu_backward_inplace(&h, &mut g)?;
        g = self.bn1.backward(&g)?;
        let mut dx = self.l1.backward(&g)?;
        dx.add_assign(&skip)?;
        Ok(dx)
    }
}

impl<T: Real> Module<T> for ResBlock<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.l1.params(&join(prefix, "l1"), out);
        self.bn1.params(&join(prefix, "bn1"), out);
        self.l2.params(&join(prefix, "l2"), out);
        self.bn2.params(&join(prefix, "bn2"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        self.l1.params_mut(&join(prefix, "l1"), out);
        self.bn1.params_mut(&join(prefix, "bn1"), out);
        self.l2.params_mut(&join(prefix, "l2"), out);
        self.bn2.params_mut(&join(prefix, "bn2"), out);
    }

    fn buffers<'a>(&'a self, prefix: &str, out: &mut Vec<BufferRef<'a, T>>) {
        self.bn1.buffers(&join(prefix, "bn1"), out);
        self.bn2.buffers(&join(prefix, "bn2"), out);
    }

    fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<BufferMut<'a, T>>) {
        self.bn1.buffers_mut(&join(prefix, "bn1"), out);
        self.bn2.buffers_mut(&join(prefix, "bn2"), out);
    }
}
