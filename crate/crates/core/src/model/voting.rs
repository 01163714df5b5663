use alloc::vec;
use alloc::vec::Vec;

use super::{clips_to_tensor, Model};
use crate::error::{Error, Result};
use crate::events::ClipSample;
use crate::nn::{softmax, Mode};
use crate::scalar::Real;

/// Softmax outputs for every clip, evaluated in batches of `batch`.
pub fn predict_probabilities<T: Real>(model: &mut Model<T>, clips: &[&ClipSample], batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(batch.max(1)) {
        let x = clips_to_tensor::<T>(chunk)?;
        let logits = model.forward(&x, Mode::Eval)?;
        let probs = softmax(&logits)?;
        let c = probs.shape()[1];
        out.extend(probs.data().chunks_exact(c).map(|r| r.iter().map(|v| v.as_f64()).collect()));
    }
    Ok(out)
}

/// Index of the first maximum.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Majority vote over per-clip argmaxes. Ties go to the class with the larger
/// summed probability, then to the lower class id.
pub fn vote(probs: &[Vec<f64>]) -> Result<usize> {
    let c = probs.first().ok_or(Error::Empty("clip sequence"))?.len();
    let mut counts = vec![0usize; c];
    let mut mass = vec![0.0f64; c];
    for row in probs {
        counts[argmax(row)] += 1;
        for (m, &p) in mass.iter_mut().zip(row) {
            *m += p;
        }
    }
    let mut best = 0;
    for k in 1..c {
        if counts[k] > counts[best] || (counts[k] == counts[best] && mass[k] > mass[best]) {
            best = k;
        }
    }
    Ok(best)
}

/// Class of a stream from all of its window clips.
pub fn predict_with_voting<T: Real>(model: &mut Model<T>, clips: &[&ClipSample]) -> Result<usize> {
    if clips.is_empty() {
        return Err(Error::Empty("clip sequence"));
    }
    vote(&predict_probabilities(model, clips, 16)?)
}
