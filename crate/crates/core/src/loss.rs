//! Temporally weighted training loss, MPJPE evaluation and trivial baselines.
//!
//! Pose batches use the tensor layout (batch, step, joint, coordinate).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::Graph;
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::{Dims, Tensor};

/// Milliseconds between consecutive frames.
pub const FRAME_MS: usize = 40;

/// Reporting horizons in milliseconds.
pub const REPORT_HORIZONS_MS: [usize; 6] = [80, 160, 320, 400, 560, 1000];

/// Default decay rate of the exponential step weights.
pub const DEFAULT_ALPHA: f64 = 0.3;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum WeightScheme {
    /// `w_i ∝ exp(−α i)`.
    #[default]
    Exp,
    /// `w_i ∝ T' − i + 1`.
    Linear,
    /// `w_i = 1 / T'`.
    Uniform,
}

impl WeightScheme {
    pub fn code(self) -> u32 {
        match self {
            WeightScheme::Exp => 0,
            WeightScheme::Linear => 1,
            WeightScheme::Uniform => 2,
        }
    }
}

impl FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp" => Ok(WeightScheme::Exp),
            "linear" => Ok(WeightScheme::Linear),
            "uniform" => Ok(WeightScheme::Uniform),
            other => Err(Error::Config(format!(
                "unknown loss variant {other:?} (expected exp, linear or uniform)"
            ))),
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightScheme::Exp => "exp",
            WeightScheme::Linear => "linear",
            WeightScheme::Uniform => "uniform",
        })
    }
}

/// Normalized per-step loss weights.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    pub w: Vec<f64>,
    pub alpha: f64,
}

impl LossWeights {
    pub fn as_scalars<T: Scalar>(&self) -> Vec<T> {
        self.w.iter().map(|&v| T::from_f64_lossy(v)).collect()
    }
}

pub fn temporal_weights(horizon: usize, alpha: f64, scheme: WeightScheme) -> Result<LossWeights> {
    if horizon == 0 {
        return Err(Error::Config("loss weights need at least one step".into()));
    }
    let raw: Vec<f64> = (1..=horizon)
        .map(|i| match scheme {
            WeightScheme::Exp => (-alpha * i as f64).exp(),
            WeightScheme::Linear => (horizon - i + 1) as f64,
            WeightScheme::Uniform => 1.0,
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(LossWeights {
        w: raw.into_iter().map(|v| v / total).collect(),
        alpha,
    })
}

/// `(1 / (B·N_j)) Σ_b Σ_i w_i Σ_j ‖J − Ĵ‖²` on the tape.
pub fn tw_mpjpe_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    pred: Var,
    target: &Tensor<T>,
    weights: &LossWeights,
) -> Result<Var> {
    let d = g.dims(pred);
    let scale = T::one() / T::from_usize(d.batch() * d.joint()).unwrap();
    g.weighted_sq_error(pred, target.clone(), weights.as_scalars(), scale)
}

fn check_pair<T: Scalar>(op: &'static str, pred: &Tensor<T>, gt: &Tensor<T>) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(op, pred.dims(), gt.dims()));
    }
    if pred.dims().coord() != 3 {
        return Err(Error::Contract(format!(
            "{op}: poses must have 3 coordinates, got {}",
            pred.dims()
        )));
    }
    Ok(())
}

/// Loss value computed directly, without a tape.
pub fn tw_mpjpe_value<T: Scalar>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    weights: &LossWeights,
) -> Result<f64> {
    check_pair("tw_mpjpe", pred, gt)?;
    let d = pred.dims();
    if weights.w.len() != d.channel() {
        return Err(Error::Contract(format!(
            "{} weights for {} steps",
            weights.w.len(),
            d.channel()
        )));
    }
    let mut total = 0.0;
    for (i, (p, t)) in pred
        .data()
        .chunks(d.plane())
        .zip(gt.data().chunks(d.plane()))
        .enumerate()
    {
        let sq: f64 = p
            .iter()
            .zip(t)
            .map(|(&a, &b)| (a - b).to_f64_lossy().powi(2))
            .sum();
        total += weights.w[i % d.channel()] * sq;
    }
    Ok(total / (d.batch() * d.joint()) as f64)
}

/// Mean Euclidean joint error at prediction step `step` (1-based), averaged
/// over joints and batch items.
pub fn mpjpe<T: Scalar>(pred: &Tensor<T>, gt: &Tensor<T>, step: usize) -> Result<f64> {
    check_pair("mpjpe", pred, gt)?;
    let d = pred.dims();
    if step == 0 || step > d.channel() {
        return Err(Error::Contract(format!(
            "horizon step {step} outside 1..={}",
            d.channel()
        )));
    }
    let mut total = 0.0;
    for b in 0..d.batch() {
        for j in 0..d.joint() {
            let sq: f64 = (0..3)
                .map(|c| {
                    (pred.at([b, step - 1, j, c]) - gt.at([b, step - 1, j, c]))
                        .to_f64_lossy()
                        .powi(2)
                })
                .sum();
            total += sq.sqrt();
        }
    }
    Ok(total / (d.batch() * d.joint()) as f64)
}

/// Frame index for a horizon in milliseconds, if it lands on a frame.
pub fn horizon_frame(ms: usize) -> Option<usize> {
    (ms > 0 && ms.is_multiple_of(FRAME_MS)).then_some(ms / FRAME_MS)
}

/// Repeats the last observed pose `horizon` times.
pub fn zero_velocity<T: Scalar>(window: &Tensor<T>, horizon: usize) -> Tensor<T> {
    let [b, t, j, c] = window.dims().0;
    Tensor::from_fn(Dims::new(b, horizon, j, c), |[bb, _, jj, cc]| {
        window.at([bb, t - 1, jj, cc])
    })
}

/// Extrapolates the last-frame displacement linearly.
pub fn constant_velocity<T: Scalar>(window: &Tensor<T>, horizon: usize) -> Result<Tensor<T>> {
    let [b, t, j, c] = window.dims().0;
    if t < 2 {
        return Err(Error::Contract(
            "constant velocity needs at least 2 frames".into(),
        ));
    }
    Ok(Tensor::from_fn(
        Dims::new(b, horizon, j, c),
        |[bb, s, jj, cc]| {
            let last = window.at([bb, t - 1, jj, cc]);
            let v = last - window.at([bb, t - 2, jj, cc]);
            last + v * T::from_usize(s + 1).unwrap()
        },
    ))
}
