//! Lightweight multimodal vehicle trajectory prediction.
//!
//! The pipeline turns a traffic [`Scenario`] into six weighted future
//! trajectories for its target agent:
//!
//! * [`kinematics`] estimates a smoothed speed/acceleration of the target and
//!   the distance it should cover under constant acceleration;
//! * [`map_prior`] turns nearby lanes into a handful of kinematically
//!   truncated, resampled centerlines plus a cloud of plausible-area points;
//! * [`interaction`] and [`predictor`] hold the LSTM history encoder,
//!   Crystal-GCN + multi-head attention social module and the autoregressive
//!   window decoder, all built on the small reverse-mode engine in [`nn`];
//! * [`training`] and [`metrics`] provide the objective, training loop and
//!   minADE/minFDE evaluation.
//!
//! Network code is generic over [`Scalar`] (`f32` or `f64`); geometry and
//! preprocessing work in `f64`.

pub mod error;
pub mod geometry;
pub mod interaction;
pub mod kinematics;
pub mod map_prior;
pub mod metrics;
pub mod nn;
pub mod predictor;
pub mod scalar;
pub mod scenario;
pub mod training;

pub use error::{Error, Result};
pub use geometry::Point;
pub use scalar::Scalar;
pub use scenario::{Horizon, Scenario};

pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type Tape32 = nn::Tape<f32>;
pub type Tape64 = nn::Tape<f64>;
pub type ParamStore32 = nn::ParamStore<f32>;
pub type ParamStore64 = nn::ParamStore<f64>;
/// Default precision for training and inference.
pub type Model32 = predictor::Model<f32>;
/// Precision used by gradient checks and oracle comparisons.
pub type Model64 = predictor::Model<f64>;
