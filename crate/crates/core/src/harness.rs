//! Training, evaluation and ablation drivers.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::events::{stream_to_clips, ClipSample, EventStream, WindowConfig};
use crate::model::{clips_to_tensor, report_complexity, vote, ExtractorMode, Model, ModelConfig};
use crate::nn::{softmax, softmax_cross_entropy, Mode, Module};
use crate::rng::rng_from;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Stream tags mixed into the master seed.
pub const SEED_MODEL_INIT: u64 = 1;
pub const SEED_SHUFFLE: u64 = 2;
pub const SEED_SAMPLING: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Evaluate every this many epochs; the last epoch is always evaluated.
    pub eval_every: usize,
    pub checkpoint_path: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 50,
            lr0: 0.1,
            momentum: 0.9,
            seed: 0,
            eval_every: 1,
            checkpoint_path: "best.ttpt".into(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch_size and eval_every must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// `0.5 * lr0 * (1 + cos(pi * epoch / epochs))`.
pub fn cosine_lr(epoch: usize, epochs: usize, lr0: f64) -> f64 {
    0.5 * lr0 * (1.0 + libm::cos(core::f64::consts::PI * epoch as f64 / epochs as f64))
}

/// Heavy-ball SGD: `v = mu v + g`, `p = p - lr v`.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdMomentum<T> {
    pub momentum: f64,
    velocity: Vec<(String, Tensor<T>)>,
}

impl<T: Real> SgdMomentum<T> {
    pub fn new(momentum: f64) -> Self {
        Self { momentum, velocity: Vec::new() }
    }

    pub fn velocities(&self) -> &[(String, Tensor<T>)] {
        &self.velocity
    }

    /// Replaces the velocity buffers (e.g. from a checkpoint).
    pub fn set_velocities(&mut self, v: Vec<(String, Tensor<T>)>) {
        self.velocity = v;
    }

    /// Applies one update to every parameter of `module`. Nothing is changed
    /// when any gradient is non-finite.
    pub fn step<M: Module<T> + ?Sized>(&mut self, module: &mut M, lr: f64) -> Result<()> {
        let mut params = Vec::new();
        module.params_mut("", &mut params);
        if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
            log::error!("non-finite gradient in {}, step skipped", p.name);
            return Err(Error::NonFiniteGradient(p.name.clone()));
        }
        if self.velocity.len() != params.len()
            || self.velocity.iter().zip(&params).any(|((n, v), p)| *n != p.name || v.shape() != p.value.shape())
        {
            self.velocity = params.iter().map(|p| (p.name.clone(), Tensor::zeros(p.value.shape()))).collect();
        }
        let mu = T::of(self.momentum);
        let lr = T::of(lr);
        for (p, (_, v)) in params.iter_mut().zip(self.velocity.iter_mut()) {
            for ((w, vel), &g) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(p.grad.data()) {
                *vel = mu * *vel + g;
                *w -= lr * *vel;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub loss: f64,
    pub window_acc: f64,
    pub voted_acc: f64,
    pub clips: usize,
    pub streams: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub window_acc: Option<f64>,
    pub voted_acc: Option<f64>,
    /// Clock reading at the end of the epoch, relative to the start of training.
    pub seconds: f64,
}

fn check_clips(clips: &[ClipSample], cfg: &ModelConfig) -> Result<Vec<usize>> {
    clips
        .iter()
        .map(|c| {
            if c.points.len() != cfg.num_points {
                return Err(crate::error::shape_err(format!(
                    "clip from source {} has {} points, model expects {}",
                    c.source_id,
                    c.points.len(),
                    cfg.num_points
                )));
            }
            let label = c.label.ok_or(Error::Config(format!("clip from source {} is unlabeled", c.source_id)))?;
            if label as usize >= cfg.num_classes {
                return Err(Error::LabelOutOfRange { label: label as usize, classes: cfg.num_classes });
            }
            Ok(label as usize)
        })
        .collect()
}

/// Softmax outputs for every clip.
pub fn clip_probabilities<T: Real>(model: &mut Model<T>, clips: &[ClipSample], batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(batch.max(1)) {
        let refs: Vec<&ClipSample> = chunk.iter().collect();
        let logits = model.forward(&clips_to_tensor::<T>(&refs)?, Mode::Eval)?;
        let probs = softmax(&logits)?;
        let c = probs.shape()[1];
        out.extend(probs.data().chunks_exact(c).map(|r| r.iter().map(|v| v.as_f64()).collect::<Vec<_>>()));
    }
    Ok(out)
}

/// Window accuracy (one prediction per clip) and voted accuracy (one per
/// source stream).
pub fn evaluate<T: Real>(model: &mut Model<T>, clips: &[ClipSample], batch: usize) -> Result<EvalMetrics> {
    if clips.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let labels = check_clips(clips, model.config())?;
    let probs = clip_probabilities(model, clips, batch)?;
    Ok(metrics_from_probabilities(clips, &labels, &probs))
}

pub(crate) fn metrics_from_probabilities(clips: &[ClipSample], labels: &[usize], probs: &[Vec<f64>]) -> EvalMetrics {
    let mut correct = 0usize;
    let mut loss = 0.0;
    let mut streams: BTreeMap<u32, (usize, Vec<Vec<f64>>)> = BTreeMap::new();
    for ((clip, &label), p) in clips.iter().zip(labels).zip(probs) {
        if crate::model::vote(core::slice::from_ref(p)).ok() == Some(label) {
            correct += 1;
        }
        loss -= libm::log(p[label].max(1e-300));
        streams.entry(clip.source_id).or_insert_with(|| (label, Vec::new())).1.push(p.clone());
    }
    let voted_correct = streams.values().filter(|(label, ps)| vote(ps).ok() == Some(*label)).count();
    EvalMetrics {
        loss: loss / clips.len() as f64,
        window_acc: correct as f64 / clips.len() as f64,
        voted_acc: voted_correct as f64 / streams.len() as f64,
        clips: clips.len(),
        streams: streams.len(),
    }
}

/// Splits a shuffled index list into batches of `size`. A trailing batch of a
/// single clip is merged into the one before it, since batch statistics need
/// at least two samples.
pub fn make_batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let size = size.max(2);
    let mut batches: Vec<&[usize]> = order.chunks(size).collect();
    if batches.len() >= 2 && batches.last().map(|b| b.len()) == Some(1) {
        batches.pop();
        let start = (batches.len() - 1) * size;
        *batches.last_mut().expect("at least one batch") = &order[start..];
    }
    batches
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Model state after the epoch with the highest voted test accuracy.
    pub best: Model<T>,
    pub best_epoch: usize,
    pub best_metrics: EvalMetrics,
    /// Model state after the final epoch.
    pub last: Model<T>,
    pub optimizer: SgdMomentum<T>,
    pub history: Vec<EpochMetrics>,
}

/// Trains `model` and keeps the state with the best voted accuracy on `test`.
///
/// `clock` returns seconds from any fixed origin; `on_epoch` sees each epoch's
/// metrics as soon as they are available.
pub fn train<T: Real>(
    mut model: Model<T>,
    train_set: &[ClipSample],
    test_set: &[ClipSample],
    cfg: &TrainConfig,
    clock: &mut dyn FnMut() -> f64,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(Error::DegenerateBatch);
    }
    if test_set.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let train_labels = check_clips(train_set, model.config())?;
    let test_labels = check_clips(test_set, model.config())?;
    let mut opt = SgdMomentum::new(cfg.momentum);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(Model<T>, usize, EvalMetrics)> = None;
    let t0 = clock();
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg.epochs, cfg.lr0);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng_from(cfg.seed, &[SEED_SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        for batch in make_batches(&order, cfg.batch_size) {
            let clips: Vec<&ClipSample> = batch.iter().map(|&i| &train_set[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train_labels[i]).collect();
            let x = clips_to_tensor::<T>(&clips)?;
            model.zero_grad();
            let logits = model.forward(&x, Mode::Train)?;
            let (loss, dlogits) = softmax_cross_entropy(&logits, &labels)?;
            model.backward(&dlogits)?;
            opt.step(&mut model, lr)?;
            loss_sum += loss.as_f64() * batch.len() as f64;
        }
        let evaluate_now = (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs;
        let eval = if evaluate_now {
            let probs = clip_probabilities(&mut model, test_set, cfg.batch_size)?;
            Some(metrics_from_probabilities(test_set, &test_labels, &probs))
        } else {
            None
        };
        if let Some(m) = eval {
            if best.as_ref().is_none_or(|(_, _, b)| m.voted_acc > b.voted_acc) {
                best = Some((model.clone(), epoch + 1, m));
            }
        }
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            lr,
            loss: loss_sum / train_set.len() as f64,
            window_acc: eval.map(|m| m.window_acc),
            voted_acc: eval.map(|m| m.voted_acc),
            seconds: clock() - t0,
        };
        log::info!(
            "epoch {} lr {:.5} loss {:.4} window {:?} voted {:?}",
            metrics.epoch,
            metrics.lr,
            metrics.loss,
            metrics.window_acc,
            metrics.voted_acc
        );
        on_epoch(&metrics);
        history.push(metrics);
    }
    let (best, best_epoch, best_metrics) = best.expect("the final epoch is always evaluated");
    Ok(TrainOutcome { best, best_epoch, best_metrics, last: model, optimizer: opt, history })
}

/// Samples every window of every stream; stream `i` gets source id `first_id + i`.
pub fn prepare_clips(streams: &[EventStream], first_id: u32, cfg: &WindowConfig, seed: u64) -> Result<Vec<ClipSample>> {
    let mut out = Vec::new();
    for (i, s) in streams.iter().enumerate() {
        out.extend(stream_to_clips(s, first_id + i as u32, cfg, seed)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationMode {
    SubwindowSweep,
    RankCompare,
    ExtractorCompare,
}

impl AblationMode {
    pub fn name(self) -> &'static str {
        match self {
            AblationMode::SubwindowSweep => "subwindow-sweep",
            AblationMode::RankCompare => "rank-compare",
            AblationMode::ExtractorCompare => "extractor-compare",
        }
    }
}

impl core::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subwindow-sweep" => Ok(Self::SubwindowSweep),
            "rank-compare" => Ok(Self::RankCompare),
            "extractor-compare" => Ok(Self::ExtractorCompare),
            _ => Err(Error::Config(format!("unknown ablation mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub setting: String,
    pub params: usize,
    pub window_acc: f64,
    pub voted_acc: f64,
}

/// Everything a single training run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub window: WindowConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Preprocesses, builds and trains one configuration.
pub fn run_experiment<T: Real>(
    exp: &Experiment,
    train_streams: &[EventStream],
    test_streams: &[EventStream],
    clock: &mut dyn FnMut() -> f64,
) -> Result<(TrainOutcome<T>, AblationRow)> {
    let seed = exp.train.seed;
    let sampling = crate::rng::derive_seed(seed, &[SEED_SAMPLING]);
    let train_clips = prepare_clips(train_streams, 0, &exp.window, sampling)?;
    let test_clips = prepare_clips(test_streams, train_streams.len() as u32, &exp.window, sampling)?;
    let model = Model::<T>::build(&exp.model, &mut rng_from(seed, &[SEED_MODEL_INIT]))?;
    let params = report_complexity(&model).params_total;
    let outcome = train(model, &train_clips, &test_clips, &exp.train, clock, &mut |_| {})?;
    let row = AblationRow {
        setting: String::new(),
        params,
        window_acc: outcome.best_metrics.window_acc,
        voted_acc: outcome.best_metrics.voted_acc,
    };
    Ok((outcome, row))
}

/// Trains every setting of `mode` with shared seeds and data.
pub fn ablate<T: Real>(
    mode: AblationMode,
    base: &Experiment,
    train_streams: &[EventStream],
    test_streams: &[EventStream],
    clock: &mut dyn FnMut() -> f64,
) -> Result<Vec<AblationRow>> {
    let mut variants: Vec<(String, Experiment)> = Vec::new();
    match mode {
        AblationMode::SubwindowSweep => {
            let l = base.window.window_len_us;
            for (name, len) in [("none", 0), ("L/2", l / 2), ("L/4", l / 4), ("L/8", l / 8)] {
                let mut e = base.clone();
                e.window.subwindow_len_us = len;
                variants.push((name.into(), e));
            }
        }
        AblationMode::RankCompare => {
            for rank in [0, 8, 4] {
                let mut e = base.clone();
                e.model.rank = rank;
                variants.push((format!("rank {rank}"), e));
            }
        }
        AblationMode::ExtractorCompare => {
            for m in [ExtractorMode::Both, ExtractorMode::LocalOnly, ExtractorMode::GlobalOnly] {
                let mut e = base.clone();
                e.model.extractor_mode = m;
                variants.push((m.name().into(), e));
            }
        }
    }
    let mut rows = Vec::with_capacity(variants.len());
    for (name, e) in variants {
        log::info!("{}: training {name}", mode.name());
        let (_, mut row) = run_experiment::<T>(&e, train_streams, test_streams, clock)?;
        row.setting = name;
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 50, 0.1), 0.1);
        assert!((cosine_lr(25, 50, 0.1) - 0.05).abs() < 1e-15);
        let last = cosine_lr(49, 50, 0.1);
        assert!(last > 0.0 && last < 1e-3);
    }

    #[test]
    fn batches_never_hold_one_clip() {
        let order: Vec<usize> = (0..17).collect();
        let b = make_batches(&order, 16);
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 17);
        let order: Vec<usize> = (0..33).collect();
        let b = make_batches(&order, 16);
        assert_eq!(b.iter().map(|x| x.len()).collect::<Vec<_>>(), vec![16, 17]);
        let b = make_batches(&order, 1);
        assert!(b.iter().all(|x| x.len() >= 2));
        assert_eq!(b.iter().map(|x| x.len()).sum::<usize>(), 33);
    }

    #[test]
    fn voted_beats_window_when_errors_are_minorities() {
        let clip = |src: u32| ClipSample {
            points: Vec::new(),
            label: Some(0),
            window_start_us: 0,
            window_end_us: 1,
            source_id: src,
        };
        let clips = vec![clip(0), clip(0), clip(0), clip(1), clip(1), clip(1)];
        let right = vec![0.8, 0.2];
        let wrong = vec![0.3, 0.7];
        let probs = vec![right.clone(), right.clone(), wrong.clone(), wrong, right.clone(), right];
        let m = metrics_from_probabilities(&clips, &[0; 6], &probs);
        assert!((m.window_acc - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!(m.voted_acc, 1.0);
    }
}
