use alloc::format;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Winning position along the pooled axis for each output element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndex {
    input_shape: Vec<usize>,
    argmax: Vec<u32>,
}

impl PoolIndex {
    pub fn argmax(&self) -> &[u32] {
        &self.argmax
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }
}

/// Max over the second-to-last axis: `[.., K, D] -> [.., D]`.
///
/// Ties resolve to the first occurrence.
pub fn max_pool_groups<T: Real>(x: &Tensor<T>) -> Result<(Tensor<T>, PoolIndex)> {
    let shape = x.shape();
    if shape.len() < 2 || shape[shape.len() - 2] == 0 {
        return Err(shape_err(format!("cannot pool over {:?}", shape)));
    }
    let d = shape[shape.len() - 1];
    let k = shape[shape.len() - 2];
    let groups: usize = shape[..shape.len() - 2].iter().product();
    let mut out = Vec::with_capacity(groups * d);
    let mut argmax = Vec::with_capacity(groups * d);
    for g in x.data().chunks_exact(k * d) {
        let first = &g[..d];
        let start = out.len();
        out.extend_from_slice(first);
        argmax.extend(core::iter::repeat_n(0u32, d));
        for (j, row) in g.chunks_exact(d).enumerate().skip(1) {
            for c in 0..d {
                if row[c] > out[start + c] {
                    out[start + c] = row[c];
                    argmax[start + c] = j as u32;
                }
            }
        }
    }
    let mut out_shape = shape[..shape.len() - 2].to_vec();
    out_shape.push(d);
    let y = Tensor::from_vec(&out_shape, out)?;
    Ok((y, PoolIndex { input_shape: shape.to_vec(), argmax }))
}

/// Routes each output gradient back to its winning input.
pub fn max_pool_backward<T: Real>(dy: &Tensor<T>, index: &PoolIndex) -> Result<Tensor<T>> {
    if dy.len() != index.argmax.len() {
        return Err(shape_err(format!("pool gradient {:?} vs input {:?}", dy.shape(), index.input_shape)));
    }
    let n = index.input_shape.len();
    let d = index.input_shape[n - 1];
    let k = index.input_shape[n - 2];
    let mut dx = Tensor::zeros(&index.input_shape);
    let out = dx.data_mut();
    for (g, (gy, am)) in dy.data().chunks_exact(d).zip(index.argmax.chunks_exact(d)).enumerate() {
        let base = g * k * d;
        for c in 0..d {
            out[base + am[c] as usize * d + c] += gy[c];
        }
    }
    Ok(dx)
}
