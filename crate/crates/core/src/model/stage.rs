use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::config::{ExtractorMode, StageConfig};
use super::grouped::GroupedLinear;
use crate::error::{Error, Result};
use crate::geometry::{farthest_point_sampling, knn_group};
use crate::nn::{
    join, max_pool_backward, max_pool_groups, relu_backward_inplace, relu_inplace, BatchNorm, BufferMut, BufferRef,
    Linear, Mode, Module, ParamMut, ParamRef, PoolIndex, ResBlock, TtExecution,
};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Point coordinates of every clip in a batch.
pub type Coords<T> = Vec<Vec<[T; 3]>>;

/// One hierarchy level: group, transfer, local blocks, pool, lift, global blocks.
#[derive(Clone, Debug)]
pub struct Stage<T> {
    pub config: StageConfig,
    pub transfer: GroupedLinear<T>,
    pub transfer_bn: BatchNorm<T>,
    pub local: Vec<ResBlock<T>>,
    pub lift: Linear<T>,
    pub lift_bn: BatchNorm<T>,
    pub global: Vec<ResBlock<T>>,
    cache: Option<StageCache<T>>,
}

#[derive(Clone, Debug)]
struct StageCache<T> {
    transfer_out: Tensor<T>,
    pool: PoolIndex,
    lift_out: Tensor<T>,
}

pub(crate) fn set_execution<T: Real>(blocks: &mut [ResBlock<T>], exec: TtExecution) {
    for b in blocks {
        for p in [&mut b.l1, &mut b.l2] {
            if let crate::nn::Projection::Tt(t) = p {
                t.execution = exec;
            }
        }
    }
}

impl<T: Real> Stage<T> {
    pub fn new<R: Rng + ?Sized>(
        config: &StageConfig,
        in_features: usize,
        rank: usize,
        mode: ExtractorMode,
        rng: &mut R,
    ) -> Result<Self> {
        let transfer = GroupedLinear::new(in_features, config.in_channels, rng);
        let local_count = if mode.uses_local() { config.local_blocks } else { 0 };
        let local = (0..local_count)
            .map(|_| ResBlock::new(config.in_channels, rank, rng))
            .collect::<Result<Vec<_>>>()?;
        let lift = Linear::new(config.in_channels, config.out_channels, rng);
        let global_count = if mode.uses_global() { config.global_blocks } else { 0 };
        let global = (0..global_count)
            .map(|_| ResBlock::new(config.out_channels, rank, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            transfer,
            transfer_bn: BatchNorm::new(config.in_channels),
            local,
            lift,
            lift_bn: BatchNorm::new(config.out_channels),
            global,
            cache: None,
        })
    }

    pub fn to_dense(&self) -> Self {
        Self {
            config: self.config.clone(),
            transfer: self.transfer.clone(),
            transfer_bn: self.transfer_bn.clone(),
            local: self.local.iter().map(ResBlock::to_dense).collect(),
            lift: self.lift.clone(),
            lift_bn: self.lift_bn.clone(),
            global: self.global.iter().map(ResBlock::to_dense).collect(),
            cache: None,
        }
    }

    /// `features` holds one row per input point, clip-major. Returns the center
    /// coordinates and one feature row per group.
    pub fn forward(
        &mut self,
        coords: &Coords<T>,
        features: &Tensor<T>,
        fps_start: usize,
        mode: Mode,
    ) -> Result<(Coords<T>, Tensor<T>)> {
        let (s, k) = (self.config.num_groups, self.config.neighbors);
        let b = coords.len();
        let np = coords.first().map_or(0, Vec::len);
        if coords.iter().any(|c| c.len() != np) || features.rows_cols().0 != b * np {
            return Err(crate::error::shape_err(format!(
                "stage input: {b} clips of {np} points vs features {:?}",
                features.shape()
            )));
        }
        let mut sources = Vec::with_capacity(b * s * k);
        let mut offsets = Vec::with_capacity(b * s * k * 3);
        let mut centers_out = Vec::with_capacity(b);
        for (ci, pts) in coords.iter().enumerate() {
            let centers = farthest_point_sampling(pts, s, fps_start)?;
            let groups = knn_group(pts, &centers, k)?;
            for (g, &c) in groups.centers.iter().enumerate() {
                let cp = pts[c];
                for &j in groups.row(g) {
                    sources.push(ci * np + j);
                    let p = pts[j];
                    offsets.extend_from_slice(&[p[0] - cp[0], p[1] - cp[1], p[2] - cp[2]]);
                }
            }
            centers_out.push(centers.iter().map(|&c| pts[c]).collect());
        }
        let mut h = self.transfer.forward(features, &offsets, &sources, mode)?;
        drop(offsets);
        h = self.transfer_bn.forward(&h, mode)?;
        relu_inplace(&mut h);
        let transfer_out = (mode == Mode::Train).then(|| h.clone());
        for blk in &mut self.local {
            h = blk.forward(&h, mode)?;
        }
        let c_in = self.config.in_channels;
        let (pooled, pool) = max_pool_groups(&h.reshape(&[b * s, k, c_in])?)?;
        let mut u = self.lift.forward(&pooled, mode)?;
        u = self.lift_bn.forward(&u, mode)?;
        relu_inplace(&mut u);
        let lift_out = (mode == Mode::Train).then(|| u.clone());
        for blk in &mut self.global {
            u = blk.forward(&u, mode)?;
        }
        self.cache = match (transfer_out, lift_out) {
            (Some(transfer_out), Some(lift_out)) => Some(StageCache { transfer_out, pool, lift_out }),
            _ => None,
        };
        Ok((centers_out, u))
    }

    /// Gradient with respect to the stage input features.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or(Error::NoCache("stage"))?;
        let mut g = dy.clone();
        for blk in self.global.iter_mut().rev() {
            g = blk.backward(&g)?;
        }
        relu_backward_inplace(&cache.lift_out, &mut g)?;
        g = self.lift_bn.backward(&g)?;
        g = self.lift.backward(&g)?;
        let shape = cache.pool.input_shape().to_vec();
        g = max_pool_backward(&g, &cache.pool)?;
        g = g.reshape(&[shape[0] * shape[1], shape[2]])?;
        for blk in self.local.iter_mut().rev() {
            g = blk.backward(&g)?;
        }
        relu_backward_inplace(&cache.transfer_out, &mut g)?;
        g = self.transfer_bn.backward(&g)?;
        self.transfer.backward(&g)
    }
}

impl<T: Real> Module<T> for Stage<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.transfer.params(&join(prefix, "transfer"), out);
        self.transfer_bn.params(&join(prefix, "transfer_bn"), out);
        for (i, b) in self.local.iter().enumerate() {
            b.params(&join(prefix, &format!("local{i}")), out);
        }
        self.lift.params(&join(prefix, "lift"), out);
        self.lift_bn.params(&join(prefix, "lift_bn"), out);
        for (i, b) in self.global.iter().enumerate() {
            b.params(&join(prefix, &format!("global{i}")), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        self.transfer.params_mut(&join(prefix, "transfer"), out);
        self.transfer_bn.params_mut(&join(prefix, "transfer_bn"), out);
        for (i, b) in self.local.iter_mut().enumerate() {
            b.params_mut(&join(prefix, &format!("local{i}")), out);
        }
        self.lift.params_mut(&join(prefix, "lift"), out);
        self.lift_bn.params_mut(&join(prefix, "lift_bn"), out);
        for (i, b) in self.global.iter_mut().enumerate() {
            b.params_mut(&join(prefix, &format!("global{i}")), out);
        }
    }

    fn buffers<'a>(&'a self, prefix: &str, out: &mut Vec<BufferRef<'a, T>>) {
        self.transfer_bn.buffers(&join(prefix, "transfer_bn"), out);
        for (i, b) in self.local.iter().enumerate() {
            b.buffers(&join(prefix, &format!("local{i}")), out);
        }
        self.lift_bn.buffers(&join(prefix, "lift_bn"), out);
        for (i, b) in self.global.iter().enumerate() {
            b.buffers(&join(prefix, &format!("global{i}")), out);
        }
    }

    fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<BufferMut<'a, T>>) {
        self.transfer_bn.buffers_mut(&join(prefix, "transfer_bn"), out);
        for (i, b) in self.local.iter_mut().enumerate() {
            b.buffers_mut(&join(prefix, &format!("local{i}")), out);
        }
        self.lift_bn.buffers_mut(&join(prefix, "lift_bn"), out);
        for (i, b) in self.global.iter_mut().enumerate() {
            b.buffers_mut(&join(prefix, &format!("global{i}")), out);
        }
    }
}
