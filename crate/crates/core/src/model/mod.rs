//! The four-stage point network.
//!
//! Layer order for a batch of `B` clips with `N` points:
//!
//! 1. `embed`: dense `3 -> E`, batch norm, relu on every point.
//! 2. Per stage: farthest point sampling picks `S` centers, each center takes
//!    its `K` nearest points, the grouped `[feature, offset]` rows go through
//!    a transfer layer (`D + 3 -> C_in`, batch norm, relu), the local residual
//!    blocks run on all `B S K` rows, a max over the `K` neighbours leaves one
//!    row per center, a lift (`C_in -> C_out`, batch norm, relu) widens it and
//!    the global residual blocks run on the `B S` rows. Centers keep their
//!    coordinates for the next stage.
//! 3. A max over the last stage's groups, then the classifier: hidden layers of
//!    dense, batch norm, relu and a final dense layer to the class logits.
//!
//! Only the residual-block projections are TT layers.

mod complexity;
mod config;
mod grouped;
mod stage;
mod voting;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

pub use complexity::{report_complexity, ComplexityReport, LayerComplexity, LayerKind, REFERENCE_GFLOPS, REFERENCE_PARAMS};
pub use config::{ExtractorMode, ModelConfig, StageConfig, NUM_STAGES, REFERENCE_NAME};
pub use grouped::GroupedLinear;
pub use stage::{Coords, Stage};
pub use voting::{predict_probabilities, predict_with_voting, vote};

use crate::error::{shape_err, Error, Result};
use crate::events::ClipSample;
use crate::nn::{
    join, max_pool_backward, max_pool_groups, relu_backward_inplace, relu_inplace, BatchNorm, BufferMut, BufferRef,
    Linear, Mode, Module, ParamMut, ParamRef, PoolIndex,
};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct HiddenLayer<T> {
    pub linear: Linear<T>,
    pub bn: BatchNorm<T>,
}

#[derive(Clone, Debug)]
struct HeadCache<T> {
    embed_out: Tensor<T>,
    pool: PoolIndex,
    hidden_out: Vec<Tensor<T>>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    pub embed: Linear<T>,
    pub embed_bn: BatchNorm<T>,
    pub stages: Vec<Stage<T>>,
    pub hidden: Vec<HiddenLayer<T>>,
    pub output: Linear<T>,
    cache: Option<HeadCache<T>>,
    shapes: Vec<(String, Vec<usize>)>,
}

/// Packs clips into a `[B, N, 3]` tensor.
pub fn clips_to_tensor<T: Real>(clips: &[&ClipSample]) -> Result<Tensor<T>> {
    let n = clips.first().map_or(0, |c| c.points.len());
    if clips.is_empty() {
        return Err(Error::Empty("clip batch"));
    }
    let mut data = Vec::with_capacity(clips.len() * n * 3);
    for c in clips {
        if c.points.len() != n {
            return Err(shape_err(format!("clip with {} points in a batch of {n}", c.points.len())));
        }
        data.extend(c.points.iter().flat_map(|p| p.iter().map(|&v| T::of(v as f64))));
    }
    Tensor::from_vec(&[clips.len(), n, 3], data)
}

impl<T: Real> Model<T> {
    pub fn build<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let embed = Linear::new(3, config.embed_channels, rng);
        let mut stages = Vec::with_capacity(config.stages.len());
        let mut width = config.embed_channels;
        for sc in &config.stages {
            let mut st = Stage::new(sc, width, config.rank, config.extractor_mode, rng)?;
            stage::set_execution(&mut st.local, config.tt_execution);
            stage::set_execution(&mut st.global, config.tt_execution);
            stages.push(st);
            width = sc.out_channels;
        }
        let (&classes, hidden_dims) = config.classifier_dims.split_last().ok_or(Error::Empty("classifier"))?;
        let mut hidden = Vec::with_capacity(hidden_dims.len());
        for &h in hidden_dims {
            hidden.push(HiddenLayer { linear: Linear::new(width, h, rng), bn: BatchNorm::new(h) });
            width = h;
        }
        // A tenth of the usual scale keeps the first predictions near uniform.
        let mut output = Linear::new(width, classes, rng);
        output.weight.data_mut().iter_mut().for_each(|w| *w = *w * T::of(0.1));
        Ok(Self {
            config: config.clone(),
            embed,
            embed_bn: BatchNorm::new(config.embed_channels),
            stages,
            hidden,
            output,
            cache: None,
            shapes: Vec::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Rank-0 model computing the same function: every TT projection is
    /// replaced by its reconstructed dense matrix.
    pub fn to_dense(&self) -> Self {
        let mut config = self.config.clone();
        config.rank = 0;
        Self {
            config,
            embed: self.embed.clone(),
            embed_bn: self.embed_bn.clone(),
            stages: self.stages.iter().map(Stage::to_dense).collect(),
            hidden: self.hidden.clone(),
            output: self.output.clone(),
            cache: None,
            shapes: Vec::new(),
        }
    }

    /// Tensor shapes recorded by the most recent forward pass: `input`,
    /// `embed`, `stage1` .. `stage4`, `global_feature` and `logits`.
    pub fn shape_trace(&self) -> &[(String, Vec<usize>)] {
        &self.shapes
    }

    /// `x` is `[B, N, 3]`; returns `[B, C]` logits.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[2] != 3 || shape[1] != self.config.num_points || shape[0] == 0 {
            return Err(shape_err(format!(
                "model expects [B, {}, 3] clips, got {:?}",
                self.config.num_points, shape
            )));
        }
        let (b, n) = (shape[0], shape[1]);
        self.shapes.clear();
        self.shapes.push(("input".into(), shape.to_vec()));
        let mut coords: Coords<T> = x.data().chunks_exact(n * 3).map(|c| c.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect()).collect();
        let pts = x.clone().reshape(&[b * n, 3])?;
        let mut h = self.embed.forward(&pts, mode)?;
        h = self.embed_bn.forward(&h, mode)?;
        relu_inplace(&mut h);
        self.shapes.push(("embed".into(), alloc::vec![b, n, h.shape()[1]]));
        let embed_out = (mode == Mode::Train).then(|| h.clone());
        for (i, st) in self.stages.iter_mut().enumerate() {
            let (next, out) = st.forward(&coords, &h, self.config.fps_start, mode)?;
            coords = next;
            h = out;
            h.debug_check_finite("stage forward");
            self.shapes.push((format!("stage{}", i + 1), alloc::vec![b, st.config.num_groups, h.shape()[1]]));
        }
        let s = self.stages.last().map_or(n, |st| st.config.num_groups);
        let d = h.shape()[1];
        let (mut g, pool) = max_pool_groups(&h.reshape(&[b, s, d])?)?;
        self.shapes.push(("global_feature".into(), g.shape().to_vec()));
        let mut hidden_out = Vec::new();
        for layer in &mut self.hidden {
            g = layer.linear.forward(&g, mode)?;
            g = layer.bn.forward(&g, mode)?;
            relu_inplace(&mut g);
            if mode == Mode::Train {
                hidden_out.push(g.clone());
            }
        }
        let logits = self.output.forward(&g, mode)?;
        logits.debug_check_finite("model forward");
        self.shapes.push(("logits".into(), logits.shape().to_vec()));
        self.cache = embed_out.map(|embed_out| HeadCache { embed_out, pool, hidden_out });
        Ok(logits)
    }

    /// Accumulates parameter gradients for the last training forward pass.
    pub fn backward(&mut self, dlogits: &Tensor<T>) -> Result<()> {
        let cache = self.cache.take().ok_or(Error::NoCache("model"))?;
        let mut g = self.output.backward(dlogits)?;
        for (layer, out) in self.hidden.iter_mut().zip(&cache.hidden_out).rev() {
            relu_backward_inplace(out, &mut g)?;
            g = layer.bn.backward(&g)?;
            g = layer.linear.backward(&g)?;
        }
        g = max_pool_backward(&g, &cache.pool)?;
        let shape = cache.pool.input_shape();
        g = g.reshape(&[shape[0] * shape[1], shape[2]])?;
        for st in self.stages.iter_mut().rev() {
            g = st.backward(&g)?;
        }
        relu_backward_inplace(&cache.embed_out, &mut g)?;
        g = self.embed_bn.backward(&g)?;
        self.embed.backward(&g)?;
        Ok(())
    }
}

impl<T: Real> Module<T> for Model<T> {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.embed.params(&join(prefix, "embed"), out);
        self.embed_bn.params(&join(prefix, "embed_bn"), out);
        for (i, st) in self.stages.iter().enumerate() {
            st.params(&join(prefix, &format!("stage{}", i + 1)), out);
        }
        for (i, l) in self.hidden.iter().enumerate() {
            l.linear.params(&join(prefix, &format!("head/fc{i}")), out);
            l.bn.params(&join(prefix, &format!("head/bn{i}")), out);
        }
        self.output.params(&join(prefix, "head/out"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamMut<'a, T>>) {
        self.embed.params_mut(&join(prefix, "embed"), out);
        self.embed_bn.params_mut(&join(prefix, "embed_bn"), out);
        for (i, st) in self.stages.iter_mut().enumerate() {
            st.params_mut(&join(prefix, &format!("stage{}", i + 1)), out);
        }
        for (i, l) in self.hidden.iter_mut().enumerate() {
            l.linear.params_mut(&join(prefix, &format!("head/fc{i}")), out);
            l.bn.params_mut(&join(prefix, &format!("head/bn{i}")), out);
        }
        self.output.params_mut(&join(prefix, "head/out"), out);
    }

    fn buffers<'a>(&'a self, prefix: &str, out: &mut Vec<BufferRef<'a, T>>) {
        self.embed_bn.buffers(&join(prefix, "embed_bn"), out);
        for (i, st) in self.stages.iter().enumerate() {
            st.buffers(&join(prefix, &format!("stage{}", i + 1)), out);
        }
        for (i, l) in self.hidden.iter().enumerate() {
            l.bn.buffers(&join(prefix, &format!("head/bn{i}")), out);
        }
    }

    fn buffers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<BufferMut<'a, T>>) {
        self.embed_bn.buffers_mut(&join(prefix, "embed_bn"), out);
        for (i, st) in self.stages.iter_mut().enumerate() {
            st.buffers_mut(&join(prefix, &format!("stage{}", i + 1)), out);
        }
        for (i, l) in self.hidden.iter_mut().enumerate() {
            l.bn.buffers_mut(&join(prefix, &format!("head/bn{i}")), out);
        }
    }
}
