//! Skeleton motion prediction with semi-decoupled motion-sensitive encoding
//! and a multi-grained trajectory pyramid.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`). Training,
//! inference and checkpoints use `f32`; the aliases below name those
//! instantiations. Gradient verification uses `f64`.

pub mod blocks;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod gradcheck;
pub mod gradsuite;
pub mod init;
pub mod loss;
pub mod network;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod schedule;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use network::{Ablation, Model, ModelHyper};
pub use scalar::Scalar;
pub use tensor::{Dims, Tensor};
pub use train::{TrainConfig, TrainOutcome};

pub type Tensor32 = Tensor<f32>;
pub type Model32 = Model<f32>;
pub type ParamStore32 = params::ParamStore<f32>;
pub type TrainOutcome32 = TrainOutcome<f32>;
