//! Dataset-level metrics and window assembly.

use std::ops::Range;

use crate::data::{batch_tensors, preprocess, window, SampleWindow, SkeletonSequence};
use crate::error::{Error, Result};
use crate::loss::{constant_velocity, mpjpe, tw_mpjpe_value, zero_velocity, LossWeights};
use crate::network::Model;
use crate::scalar::Scalar;

/// Windows per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 64;

/// Preprocesses `seqs[range]` and cuts windows from each. All sequences must
/// keep the same joints after preprocessing.
pub fn build_windows(
    seqs: &[SkeletonSequence],
    range: Range<usize>,
    root: usize,
    frames: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<SampleWindow>> {
    let mut joints: Option<(usize, &str)> = None;
    let mut out = Vec::new();
    for i in range {
        let seq = &seqs[i];
        let (p, _) = preprocess(seq, root)?;
        match joints {
            Some((j, first)) if j != p.joints => {
                return Err(Error::Hyper(format!(
                    "{} keeps {} joints after preprocessing but {first} keeps {j}",
                    seq.name, p.joints
                )))
            }
            None => joints = Some((p.joints, &seq.name)),
            _ => {}
        }
        out.extend(window(&p, i, frames, horizon, stride)?);
    }
    Ok(out)
}

/// MPJPE of the model and both baselines at one prediction step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HorizonErrors {
    /// 1-based prediction step.
    pub frame: usize,
    pub model: f64,
    pub zero_velocity: f64,
    pub constant_velocity: f64,
}

/// Mean per-joint errors over all windows at each requested step.
pub fn horizon_errors<T: Scalar>(
    model: &Model<T>,
    windows: &[SampleWindow],
    steps: &[usize],
) -> Result<Vec<HorizonErrors>> {
    if windows.is_empty() {
        return Err(Error::Config("no evaluation windows".into()));
    }
    let horizon = model.hyper.horizon;
    if let Some(&bad) = steps.iter().find(|&&s| s == 0 || s > horizon) {
        return Err(Error::Config(format!("step {bad} outside 1..={horizon}")));
    }
    let mut sums = vec![[0.0f64; 3]; steps.len()];
    for chunk in windows.chunks(EVAL_CHUNK) {
        let refs: Vec<&SampleWindow> = chunk.iter().collect();
        let (x, y) = batch_tensors::<T>(&refs)?;
        let pred = model.predict(&x)?;
        let zv = zero_velocity(&x, horizon);
        let cv = constant_velocity(&x, horizon)?;
        let n = chunk.len() as f64;
        for (acc, &s) in sums.iter_mut().zip(steps) {
            acc[0] += n * mpjpe(&pred, &y, s)?;
            acc[1] += n * mpjpe(&zv, &y, s)?;
            acc[2] += n * mpjpe(&cv, &y, s)?;
        }
    }
    let total = windows.len() as f64;
    Ok(steps
        .iter()
        .zip(sums)
        .map(|(&frame, [m, z, c])| HorizonErrors {
            frame,
            model: m / total,
            zero_velocity: z / total,
            constant_velocity: c / total,
        })
        .collect())
}

/// Weighted loss averaged over all windows.
pub fn dataset_loss<T: Scalar>(
    model: &Model<T>,
    windows: &[SampleWindow],
    weights: &LossWeights,
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Config("no windows to score".into()));
    }
    let mut sum = 0.0;
    for chunk in windows.chunks(EVAL_CHUNK) {
        let refs: Vec<&SampleWindow> = chunk.iter().collect();
        let (x, y) = batch_tensors::<T>(&refs)?;
        sum += chunk.len() as f64 * tw_mpjpe_value(&model.predict(&x)?, &y, weights)?;
    }
    Ok(sum / windows.len() as f64)
}
