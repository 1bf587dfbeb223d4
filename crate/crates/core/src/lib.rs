//! Phased distribution matching distillation on low-dimensional toy
//! distributions, checked against closed-form posteriors.
//!
//! Numerics are generic over [`Scalar`] (`f32` or `f64`); schedule algebra and
//! times are always `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distill;
pub mod error;
pub mod experiments;
pub mod net;
pub mod metrics;
pub mod objectives;
pub mod prior;
pub mod rng;
pub mod sampler;
pub mod scalar;
pub mod schedule;

pub use error::{Error, Result};
pub use net::{AdamConfig, AdamState, NetConfig, PredictionKind, Predictor, TimeConditionedNet};
pub use prior::{Atom, ToyPrior};
pub use scalar::Scalar;
pub use schedule::{BridgeCoeffs, NoiseSchedule};

/// Double-precision network, the default for training and checkpoints.
pub type Net = TimeConditionedNet<f64>;
/// Single-precision network.
pub type Net32 = TimeConditionedNet<f32>;
/// A batch of points in `R^d`, one row per sample.
pub type SampleBatch = ndarray::Array2<f64>;
