use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::linear::Linear;
use super::param::{join, Module, ParamMut, ParamRef};
use super::Mode;
use crate::error::{shape_err, Error, Result};
use crate::linalg::{gemm, Op};
use crate::scalar::Real;
use crate::tensor::Tensor;
use crate::ttcore::{
    init_cores, make_plan, reconstruct_dense, reconstruct_dense_backward, tt_backward_traced, tt_forward_traced,
    TtCores, TtTrace,
};

/// How a TT layer evaluates `X W`.
///
/// Both routes compute the same function with exact gradients. `Sequential`
/// contracts the input with one core at a time and never forms `W`;
/// `Materialized` rebuilds `W` from the cores once per call, which is cheaper
/// when the number of rows dwarfs the size of `W`. `Auto` picks whichever needs
/// fewer multiply-adds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum TtExecution {
    Sequential,
    Materialized,
    #[default]
    Auto,
}

#[derive(Clone, Debug)]
enum Cache<T> {
    Sequential(TtTrace<T>),
    Materialized { input: Tensor<T>, weight: Tensor<T> },
}

/// Linear layer whose weight is a TT matrix.
#[derive(Clone, Debug)]
pub struct TtLinear<T> {
    cores: TtCores<T>,
    core_grads: Vec<Tensor<T>>,
    pub bias: Tensor<T>,
    grad_bias: Tensor<T>,
    pub execution: TtExecution,
    cache: Option<Cache<T>>,
}

impl<T: Real> TtLinear<T> {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rank: usize, rng: &mut R) -> Result<Self> {
        let cores = init_cores(make_plan(in_dim, out_dim)?, rank, rng)?;
        let bias = Tensor::zeros(&[out_dim]);
        Self::from_parts(cores, bias)
    }

    pub fn from_parts(cores: TtCores<T>, bias: Tensor<T>) -> Result<Self> {
        if bias.shape() != [cores.out_dim()] {
            return Err(shape_err(format!("TT bias {:?}, expected [{}]", bias.shape(), cores.out_dim())));
        }
        Ok(Self {
            core_grads: cores.cores().iter().map(|c| Tensor::zeros(c.shape())).collect(),
            grad_bias: Tensor::zeros(bias.shape()),
            cores,
            bias,
            execution: TtExecution::Auto,
            cache: None,
        })
    }

    pub fn cores(&self) -> &TtCores<T> {
        &self.cores
    }

    pub fn core_grads(&self) -> &[Tensor<T>] {
        &self.core_grads
    }

    pub fn grad_bias(&self) -> &Tensor<T> {
        &self.grad_bias
    }

    pub fn in_dim(&self) -> usize {
        self.cores.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.cores.out_dim()
    }

    fn materialize_for(&self, rows: usize) -> bool {
        match self.execution {
            TtExecution::Sequential => false,
            TtExecution::Materialized => true,
            TtExecution::Auto => {
                let shape = self.cores.shape();
                let dense = (rows * self.in_dim() * self.out_dim()) as u64;
                // Rebuilding W costs about one pass over it per core.
                let rebuild = (shape.order() * self.in_dim() * self.out_dim() * shape.ranks.iter().max().copied().unwrap_or(1)) as u64;
                dense + rebuild < shape.forward_macs(rows)
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if x.ndim() != 2 {
            // Leading axes are flattened into rows and restored afterwards.
            let (rows, cols) = x.rows_cols();
            let flat = x.clone().reshape(&[rows, cols])?;
            let mut shape = x.shape().to_vec();
            *shape.last_mut().ok_or(Error::Empty("tt input"))? = self.out_dim();
            let y = self.forward(&flat, mode)?;
            return y.reshape(&shape);
        }
        let (rows, cols) = x.rows_cols();
        if cols != self.in_dim() {
            return Err(shape_err(format!("TT input {:?}, expected [.., {}]", x.shape(), self.in_dim())));
        }
        if self.materialize_for(rows) {
            let weight = reconstruct_dense(&self.cores);
            let out = self.out_dim();
            let mut y = Vec::with_capacity(rows * out);
            for _ in 0..rows {
                y.extend_from_slice(self.bias.data());
            }
            gemm(rows, out, cols, x.data(), Op::N, weight.data(), Op::N, T::one(), &mut y);
            self.cache = (mode == Mode::Train).then(|| Cache::Materialized { input: x.clone(), weight });
            Tensor::from_vec(&[rows, out], y)
        } else {
            let (y, trace) = tt_forward_traced(&self.cores, x, self.bias.data())?;
            self.cache = (mode == Mode::Train).then_some(Cache::Sequential(trace));
            Ok(y)
        }
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        if dy.ndim() != 2 {
            let (rows, cols) = dy.rows_cols();
            let mut shape = dy.shape().to_vec();
            *shape.last_mut().ok_or(Error::Empty("tt gradient"))? = self.in_dim();
            let dx = self.backward(&dy.clone().reshape(&[rows, cols])?)?;
            return dx.reshape(&shape);
        }
        let cache = self.cache.take().ok_or(Error::NoCache("tt linear"))?;
        let (dx, dcores, dbias) = match cache {
            Cache::Sequential(trace) => tt_backward_traced(&self.cores, &trace, dy)?,
            Cache::Materialized { input, weight } => {
                let (rows, cols) = input.rows_cols();
                let out = self.out_dim();
                if dy.shape() != [rows, out] {
                    return Err(shape_err(format!("TT dY {:?}", dy.shape())));
                }
                let mut dw = Tensor::zeros(&[cols, out]);
                gemm(cols, out, rows, input.data(), Op::T, dy.data(), Op::N, T::zero(), dw.data_mut());
                let dcores = reconstruct_dense_backward(&self.cores, &dw)?;
                let mut dbias = alloc::vec![T::zero(); out];
                for row in dy.data().chunks_exact(out) {
                    for (acc, &v) in dbias.iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                let mut dx = Tensor::zeros(&[rows, cols]);
                gemm(rows, cols, out, dy.data(), Op::N, weight.data(), Op::T, T::zero(), dx.data_mut());
                (dx, dcores, dbias)
            }
        };
        for (acc, g) in self.core_grads.iter_mut().zip(&dcores) {
            acc.add_assign(g)?;
        }
        for (acc, &g) in self.grad_bias.data_mut().iter_mut().zip(&dbias) {
            *acc += g;
        }
        Ok(dx)
    }

    /// Dense layer with `W = reconstruct_dense(cores)` and the same bias.
    pub fn to_dense(&self) -> Linear<T> {
        Linear::from_parts(reconstruct_dense(&self.cores), self.bias.clone()).expect("reconstructed shapes agree")
    }
}

impl<T: Real> Module<T> for TtLinear<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        for (m, c) in self.cores.cores().iter().enumerate() {
            out.push(ParamRef { name: join(prefix, &format!("core{m}")), value: c });
        }
        out.push(ParamRef { name: join(prefix, "bias"), value: &self.bias });
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        for (m, (c, g)) in self.cores.cores_mut().iter_mut().zip(self.core_grads.iter_mut()).enumerate() {
            out.push(ParamMut {
                name: join(prefix, &format!("core{m}")),
                value: c,
                grad: g,
            });
        }
        out.push(ParamMut {
            name: join(prefix, "bias"),
            value: &mut self.bias,
            grad: &mut self.grad_bias,
        });
    }
}
