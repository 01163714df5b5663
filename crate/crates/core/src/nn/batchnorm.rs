use alloc::vec;
use alloc::vec::Vec;

use super::param::{join, BufferMut, BufferRef, Module, ParamMut, ParamRef};
use super::Mode;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization over every axis except the trailing channel axis.
///
/// Running statistics follow `running = (1 - momentum) * running + momentum * batch`
/// with the unbiased batch variance.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
    grad_gamma: Tensor<T>,
    grad_beta: Tensor<T>,
    cache: Option<(Tensor<T>, Vec<T>)>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::full(&[channels], T::one()),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
            grad_gamma: Tensor::zeros(&[channels]),
            grad_beta: Tensor::zeros(&[channels]),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let c = self.channels();
        let (rows, cols) = x.rows_cols();
        if cols != c {
            return Err(shape_err(alloc::format!("batch norm over {c} channels got {:?}", x.shape())));
        }
        let gamma = self.gamma.data();
        let beta = self.beta.data();
        match mode {
            Mode::Eval => {
                let scale: Vec<T> = (0..c)
                    .map(|j| gamma[j] / T::of(libm::sqrt(self.running_var.data()[j].as_f64() + self.eps)))
                    .collect();
                let shift: Vec<T> = (0..c).map(|j| beta[j] - self.running_mean.data()[j] * scale[j]).collect();
                let mut y = Vec::with_capacity(x.len());
                for row in x.data().chunks_exact(c) {
                    y.extend(row.iter().zip(&scale).zip(&shift).map(|((&v, &a), &b)| v * a + b));
                }
                let y = Tensor::from_vec(x.shape(), y)?;
                Ok(y)
            }
            Mode::Train => {
                if rows < 2 {
                    return Err(Error::DegenerateBatch);
                }
                let mut mean = vec![0.0f64; c];
                for row in x.data().chunks_exact(c) {
                    for (m, &v) in mean.iter_mut().zip(row) {
                        *m += v.as_f64();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= rows as f64);
                let mut var = vec![0.0f64; c];
                for row in x.data().chunks_exact(c) {
                    for ((acc, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v.as_f64() - m;
                        *acc += d * d;
                    }
                }
                let inv_std: Vec<T> = var.iter().map(|&v| T::of(1.0 / libm::sqrt(v / rows as f64 + self.eps))).collect();
                let mean_t: Vec<T> = mean.iter().map(|&m| T::of(m)).collect();
                let mut xhat = vec![T::zero(); x.len()];
                let mut y = vec![T::zero(); x.len()];
                for ((row, hrow), yrow) in x.data().chunks_exact(c).zip(xhat.chunks_exact_mut(c)).zip(y.chunks_exact_mut(c)) {
                    for (((((&v, &m), &is), &g), &b), (h, yv)) in
                        row.iter().zip(&mean_t).zip(&inv_std).zip(gamma).zip(beta).zip(hrow.iter_mut().zip(yrow.iter_mut()))
                    {
                        *h = (v - m) * is;
                        *yv = *h * g + b;
                    }
                }
                let xhat = Tensor::from_vec(x.shape(), xhat)?;
                let y = Tensor::from_vec(x.shape(), y)?;
                let m = self.momentum;
                let unbias = rows as f64 / (rows as f64 - 1.0);
                for j in 0..c {
                    let rm = &mut self.running_mean.data_mut()[j];
                    *rm = T::of((1.0 - m) * rm.as_f64() + m * mean[j]);
                    let rv = &mut self.running_var.data_mut()[j];
                    *rv = T::of((1.0 - m) * rv.as_f64() + m * var[j] / rows as f64 * unbias);
                }
                self.cache = Some((xhat, inv_std));
                Ok(y)
            }
        }
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (xhat, inv_std) = self.cache.take().ok_or(Error::NoCache("batch norm"))?;
        if dy.shape() != xhat.shape() {
            return Err(shape_err("batch norm dY shape"));
        }
        let c = self.channels();
        let rows = xhat.rows_cols().0;
        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for (g, xh) in dy.data().chunks_exact(c).zip(xhat.data().chunks_exact(c)) {
            for (((sd, sdx), &gv), &h) in sum_dy.iter_mut().zip(sum_dy_xhat.iter_mut()).zip(g).zip(xh) {
                *sd += gv.as_f64();
                *sdx += (gv * h).as_f64();
            }
        }
        for j in 0..c {
            self.grad_gamma.data_mut()[j] += T::of(sum_dy_xhat[j]);
            self.grad_beta.data_mut()[j] += T::of(sum_dy[j]);
        }
        let n = rows as f64;
        let gamma = self.gamma.data();
        let scale: Vec<T> = (0..c).map(|j| gamma[j] * inv_std[j]).collect();
        let mean_dy: Vec<T> = sum_dy.iter().map(|&s| T::of(s / n)).collect();
        let mean_dy_xhat: Vec<T> = sum_dy_xhat.iter().map(|&s| T::of(s / n)).collect();
        let mut dx = xhat;
        for (row, g) in dx.data_mut().chunks_exact_mut(c).zip(dy.data().chunks_exact(c)) {
            for ((((h, &gv), &a), &md), &mdx) in row.iter_mut().zip(g).zip(&scale).zip(&mean_dy).zip(&mean_dy_xhat) {
                *h = a * (gv - md - *h * mdx);
            }
        }
        Ok(dx)
    }

    pub fn grad_gamma(&self) -> &Tensor<T> {
        &self.grad_gamma
    }

    pub fn grad_beta(&self) -> &Tensor<T> {
        &self.grad_beta
    }
}

impl<T: Real> Module<T> for BatchNorm<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(ParamRef { name: join(prefix, "gamma"), value: &self.gamma });
        out.push(ParamRef { name: join(prefix, "beta"), value: &self.beta });
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        out.push(ParamMut {
            name: join(prefix, "gamma"),
            value: &mut self.gamma,
            grad: &mut self.grad_gamma,
        });
        out.push(ParamMut {
            name: join(prefix, "beta"),
            value: &mut self.beta,
            grad: &mut self.grad_beta,
        });
    }

    fn buffers<'a>(&'a self, prefix: &str, out: &mut Vec<BufferRef<'a, T>>) {
        out.push(BufferRef { name: join(prefix, "running_mean"), value: &self.running_mean });
        out.push(BufferRef { name: join(prefix, "running_var"), value: &self.running_var });
    }

    fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<BufferMut<'a, T>>) {
        out.push(BufferMut { name: join(prefix, "running_mean"), value: &mut self.running_mean });
        out.push(BufferMut { name: join(prefix, "running_var"), value: &mut self.running_var });
    }
}
