//! Time-conditioned MLP, its optimizer and its on-disk format.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, FD_STEP, MIN_COORDS, REL_ERROR_FLOOR};
pub use mlp::{
    time_features, ForwardCache, Gradients, Layer, NetConfig, PredictionKind,
    TimeConditionedNet, TIME_FREQ_MAX, TIME_FREQ_MIN,
};

use ndarray::{Array2, ArrayView2};

use crate::error::Result;
use crate::scalar::Scalar;

/// Anything that maps `(x, t)` to a prediction: a network or a closed form.
pub trait Predictor<T>: Sync {
    fn kind(&self) -> PredictionKind;

    fn predict(&self, x: ArrayView2<T>, t: &[f64]) -> Result<Array2<T>>;
}

impl<T: Scalar> Predictor<T> for TimeConditionedNet<T> {
    fn kind(&self) -> PredictionKind {
        self.prediction()
    }

    fn predict(&self, x: ArrayView2<T>, t: &[f64]) -> Result<Array2<T>> {
        self.forward(x, t)
    }
}
