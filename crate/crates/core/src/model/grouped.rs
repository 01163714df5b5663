use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::linalg::{gemm, Op};
use crate::nn::{join, Linear, Mode, Module, ParamMut, ParamRef};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Linear map applied to grouped `[feature, offset]` rows without building them.
///
/// Equal to `Linear(D + 3 -> C)` over the output of
/// [`gather_group_features`](crate::geometry::gather_group_features): the weight
/// is `(D + 3) x C`, the first `D` rows act on the neighbour's features and the
/// last 3 on its offset. Features are projected once per source point and then
/// gathered, so the cost scales with the number of points instead of the number
/// of neighbour slots.
#[derive(Clone, Debug)]
pub struct GroupedLinear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    grad_weight: Tensor<T>,
    grad_bias: Tensor<T>,
    cache: Option<GroupedCache<T>>,
}

#[derive(Clone, Debug)]
struct GroupedCache<T> {
    features: Tensor<T>,
    offsets: Vec<T>,
    sources: Vec<usize>,
}

impl<T: Real> GroupedLinear<T> {
    pub fn new<R: Rng + ?Sized>(feature_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let l = Linear::new(feature_dim + 3, out_dim, rng);
        Self::from_linear(l)
    }

    pub fn from_linear(l: Linear<T>) -> Self {
        Self {
            grad_weight: Tensor::zeros(l.weight.shape()),
            grad_bias: Tensor::zeros(l.bias.shape()),
            weight: l.weight,
            bias: l.bias,
            cache: None,
        }
    }

    pub fn to_linear(&self) -> Linear<T> {
        Linear::from_parts(self.weight.clone(), self.bias.clone()).expect("grouped layer shapes are consistent")
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.shape()[0] - 3
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// `features` is `[P, D]`; row `r` of the output uses source point
    /// `sources[r]` and offset `offsets[3r..3r+3]`.
    pub fn forward(&mut self, features: &Tensor<T>, offsets: &[T], sources: &[usize], mode: Mode) -> Result<Tensor<T>> {
        let d = self.feature_dim();
        let c = self.out_dim();
        let (np, fd) = features.rows_cols();
        if fd != d || features.ndim() != 2 {
            return Err(shape_err(format!("grouped layer expects [.., {d}] features, got {:?}", features.shape())));
        }
        let rows = sources.len();
        if offsets.len() != 3 * rows {
            return Err(shape_err(format!("{} offsets for {rows} rows", offsets.len())));
        }
        if let Some(&bad) = sources.iter().find(|&&j| j >= np) {
            return Err(shape_err(format!("source {bad} outside {np} points")));
        }
        let (wf, wr) = self.weight.data().split_at(d * c);
        let mut projected = vec![T::zero(); np * c];
        gemm(np, c, d, features.data(), Op::N, wf, Op::N, T::zero(), &mut projected);
        let mut out = Vec::with_capacity(rows * c);
        let b = self.bias.data();
        for &j in sources {
            out.extend(projected[j * c..(j + 1) * c].iter().zip(b).map(|(&p, &bb)| p + bb));
        }
        gemm(rows, c, 3, offsets, Op::N, wr, Op::N, T::one(), &mut out);
        if mode == Mode::Train {
            self.cache = Some(GroupedCache {
                features: features.clone(),
                offsets: offsets.to_vec(),
                sources: sources.to_vec(),
            });
        }
        Tensor::from_vec(&[rows, c], out)
    }

    /// Returns the gradient with respect to the source features.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(Error::NoCache("grouped linear"))?;
        let d = self.feature_dim();
        let c = self.out_dim();
        let rows = cache.sources.len();
        if dy.shape() != [rows, c] {
            return Err(shape_err(format!("grouped dY {:?}, expected [{rows}, {c}]", dy.shape())));
        }
        let np = cache.features.shape()[0];
        for row in dy.data().chunks_exact(c) {
            for (acc, &g) in self.grad_bias.data_mut().iter_mut().zip(row) {
                *acc += g;
            }
        }
        let mut dprojected = vec![T::zero(); np * c];
        for (row, &j) in dy.data().chunks_exact(c).zip(&cache.sources) {
            for (acc, &g) in dprojected[j * c..(j + 1) * c].iter_mut().zip(row) {
                *acc += g;
            }
        }
        let (gwf, gwr) = self.grad_weight.data_mut().split_at_mut(d * c);
        gemm(3, c, rows, &cache.offsets, Op::T, dy.data(), Op::N, T::one(), gwr);
        gemm(d, c, np, cache.features.data(), Op::T, &dprojected, Op::N, T::one(), gwf);
        let wf = &self.weight.data()[..d * c];
        let mut dx = vec![T::zero(); np * d];
        gemm(np, d, c, &dprojected, Op::N, wf, Op::T, T::zero(), &mut dx);
        Tensor::from_vec(&[np, d], dx)
    }

    pub fn grad_weight(&self) -> &Tensor<T> {
        &self.grad_weight
    }
}

impl<T: Real> Module<T> for GroupedLinear<T> {
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{farthest_point_sampling, gather_group_features, gather_group_features_backward, knn_group};
    use crate::rng::DetRng;
    use rand::SeedableRng;

    #[test]
    fn matches_linear_over_gathered_rows() {
        let mut rng = DetRng::seed_from_u64(3);
        let n = 30;
        let pts: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let feats = Tensor::<f64>::randn(&[n, 5], 1.0, &mut rng);
        let centers = farthest_point_sampling(&pts, 8, 0).unwrap();
        let groups = knn_group(&pts, &centers, 4).unwrap();
        let mut sources = Vec::new();
        let mut offsets = Vec::new();
        for (g, &c) in groups.centers.iter().enumerate() {
            for &j in groups.row(g) {
                sources.push(j);
                offsets.extend((0..3).map(|a| pts[j][a] - pts[c][a]));
            }
        }
        let mut fused = GroupedLinear::new(5, 7, &mut rng);
        fused.bias = Tensor::randn(&[7], 1.0, &mut rng);
        let mut plain = fused.to_linear();
        let y1 = fused.forward(&feats, &offsets, &sources, Mode::Train).unwrap();
        let grouped = gather_group_features(Some(&feats), &pts, &groups).unwrap();
        let y2 = plain.forward(&grouped.clone().reshape(&[32, 8]).unwrap(), Mode::Train).unwrap();
        for (a, b) in y1.data().iter().zip(y2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let dy = Tensor::randn(&[32, 7], 1.0, &mut rng);
        let dx1 = fused.backward(&dy).unwrap();
        let dg = plain.backward(&dy).unwrap().reshape(&[8, 4, 8]).unwrap();
        let dx2 = gather_group_features_backward(&dg, n, &groups).unwrap();
        for (a, b) in dx1.data().iter().zip(dx2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in fused.grad_weight().data().iter().zip(plain.grad_weight().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
