use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::scalar::Scalar;

/// Range of the geometric time-feature frequencies, in radians per unit time.
pub const TIME_FREQ_MIN: f64 = 1.0;
pub const TIME_FREQ_MAX: f64 = 1000.0;

/// What the network output means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionKind {
    /// Flow velocity `eps - x0`.
    #[default]
    Velocity,
    /// Clean sample `x0`.
    Sample,
}

impl PredictionKind {
    pub(crate) fn code(self) -> u32 {
        match self {
            PredictionKind::Velocity => 0,
            PredictionKind::Sample => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(PredictionKind::Velocity),
            1 => Ok(PredictionKind::Sample),
            other => Err(Error::Checkpoint(format!("unknown prediction kind {other}"))),
        }
    }
}

impl fmt::Display for PredictionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PredictionKind::Velocity => "velocity",
            PredictionKind::Sample => "sample",
        })
    }
}

impl FromStr for PredictionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "velocity" => Ok(PredictionKind::Velocity),
            "sample" | "x0" => Ok(PredictionKind::Sample),
            other => Err(Error::Config(format!("unknown prediction kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub data_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Number of sinusoidal time features (even).
    pub time_features: usize,
    pub prediction: PredictionKind,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            data_dim: 1,
            hidden_width: 256,
            hidden_layers: 3,
            time_features: 16,
            prediction: PredictionKind::Velocity,
        }
    }
}

impl NetConfig {
    pub fn with_width(self, hidden_width: usize) -> Self {
        Self {
            hidden_width,
            ..self
        }
    }

    pub fn with_layers(self, hidden_layers: usize) -> Self {
        Self {
            hidden_layers,
            ..self
        }
    }

    pub fn with_prediction(self, prediction: PredictionKind) -> Self {
        Self { prediction, ..self }
    }

    /// Layer widths `[d + F, H, ..., H, d]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.data_dim + self.time_features];
        w.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        w.push(self.data_dim);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_dim == 0 || self.hidden_width == 0 || self.hidden_layers == 0 {
            return Err(Error::invalid(format!("degenerate network {self:?}")));
        }
        if !self.time_features.is_multiple_of(2) {
            return Err(Error::invalid("time_features must be even"));
        }
        Ok(())
    }
}

/// Dense layer `y = x W + b` with `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parameter-shaped tensors: gradients, optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(layers: &[Layer<T>]) -> Self {
        Self {
            layers: layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.sum_sq().sqrt()
    }

    pub fn sum_sq(&self) -> f64 {
        self.values().map(|v| v.as_f64() * v.as_f64()).sum()
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, k: T) {
        for l in &mut self.layers {
            l.weight.mapv_inplace(|v| v * k);
            l.bias.mapv_inplace(|v| v * k);
        }
    }

    /// Flat iteration in checkpoint order (per layer: weights row-major, then bias).
    pub fn values(&self) -> impl Iterator<Item = T> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

/// Activations saved by [`TimeConditionedNet::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Input of every layer; `inputs[0]` is `[x | time features]`.
    inputs: Vec<Array2<T>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<T>>,
}

/// Small MLP on `[x, sinusoidal(t)]` with SiLU hidden activations.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeConditionedNet<T> {
    config: NetConfig,
    layers: Vec<Layer<T>>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[inline]
fn silu<T: Scalar>(z: T) -> T {
    let zf = z.as_f64();
    T::of(zf * sigmoid(zf))
}

#[inline]
fn silu_grad<T: Scalar>(z: T) -> T {
    let zf = z.as_f64();
    let sg = sigmoid(zf);
    T::of(sg * (1.0 + zf * (1.0 - sg)))
}

/// Sinusoidal embedding: `[sin(f_k t)..., cos(f_k t)...]` with `f_k`
/// geometric between [`TIME_FREQ_MIN`] and [`TIME_FREQ_MAX`].
pub fn time_features(t: f64, count: usize) -> Vec<f64> {
    let half = count / 2;
    let mut out = vec![0.0; count];
    for k in 0..half {
        let frac = if half > 1 {
            k as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let freq = TIME_FREQ_MIN * (TIME_FREQ_MAX / TIME_FREQ_MIN).powf(frac);
        out[k] = (freq * t).sin();
        out[half + k] = (freq * t).cos();
    }
    out
}

impl<T: Scalar> TimeConditionedNet<T> {
    /// Uniform `±1/sqrt(fan_in)` weights, zero biases.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, Stream::Init);
        let widths = config.widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut layer = Layer::zeros(w[0], w[1]);
                layer
                    .weight
                    .mapv_inplace(|_| T::of(rng.random_range(-bound..bound)));
                layer
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let widths = config.widths();
        let layers = widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Self { config, layers })
    }

    pub(crate) fn from_parts(config: NetConfig, layers: Vec<Layer<T>>) -> Result<Self> {
        config.validate()?;
        let widths = config.widths();
        if layers.len() + 1 != widths.len() {
            return Err(Error::shape("layer count does not match config"));
        }
        for (l, w) in layers.iter().zip(widths.windows(2)) {
            if l.weight.dim() != (w[0], w[1]) || l.bias.len() != w[1] {
                return Err(Error::shape("layer shape does not match config"));
            }
        }
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn prediction(&self) -> PredictionKind {
        self.config.prediction
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::len).sum()
    }

    fn locate(&self, mut idx: usize) -> (usize, Option<(usize, usize)>, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            if idx < l.weight.len() {
                let cols = l.weight.ncols();
                return (li, Some((idx / cols, idx % cols)), 0);
            }
            idx -= l.weight.len();
            if idx < l.bias.len() {
                return (li, None, idx);
            }
            idx -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Flat parameter access in checkpoint order.
    pub fn param(&self, idx: usize) -> T {
        match self.locate(idx) {
            (li, Some(rc), _) => self.layers[li].weight[rc],
            (li, None, b) => self.layers[li].bias[b],
        }
    }

    pub fn set_param(&mut self, idx: usize, value: T) {
        match self.locate(idx) {
            (li, Some(rc), _) => self.layers[li].weight[rc] = value,
            (li, None, b) => self.layers[li].bias[b] = value,
        }
    }

    fn input(&self, x: ArrayView2<T>, t: &[f64]) -> Result<Array2<T>> {
        let d = self.config.data_dim;
        if x.ncols() != d {
            return Err(Error::shape(format!("expected {d} columns, got {}", x.ncols())));
        }
        if t.len() != x.nrows() {
            return Err(Error::shape(format!(
                "{} times for {} samples",
                t.len(),
                x.nrows()
            )));
        }
        let f = self.config.time_features;
        let mut input = Array2::zeros((x.nrows(), d + f));
        input.slice_mut(s![.., ..d]).assign(&x);
        for (i, &ti) in t.iter().enumerate() {
            if !(0.0..=1.0).contains(&ti) {
                return Err(Error::TimeOutOfRange { t: ti });
            }
            for (k, v) in time_features(ti, f).into_iter().enumerate() {
                input[[i, d + k]] = T::of(v);
            }
        }
        Ok(input)
    }

    pub fn forward(&self, x: ArrayView2<T>, t: &[f64]) -> Result<Array2<T>> {
        Ok(self.forward_cached(x, t)?.0)
    }

    /// Forward pass at a single shared time.
    pub fn forward_at(&self, x: ArrayView2<T>, t: f64) -> Result<Array2<T>> {
        self.forward(x, &vec![t; x.nrows()])
    }

    pub fn forward_cached(
        &self,
        x: ArrayView2<T>,
        t: &[f64],
    ) -> Result<(Array2<T>, ForwardCache<T>)> {
        let mut act = self.input(x, t)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = act.dot(&layer.weight);
            z += &layer.bias;
            inputs.push(act);
            if li == last {
                return Ok((z, ForwardCache { inputs, pre }));
            }
            act = z.mapv(silu);
            pre.push(z);
        }
        unreachable!("network has at least one layer")
    }

    /// Reverse-mode gradients of `<upstream, forward(x, t)>`: parameter
    /// gradients and the gradient with respect to `x`.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        upstream: ArrayView2<T>,
    ) -> Result<(Gradients<T>, Array2<T>)> {
        let n = cache.inputs[0].nrows();
        if upstream.dim() != (n, self.config.data_dim) {
            return Err(Error::shape(format!(
                "upstream {:?}, expected {:?}",
                upstream.dim(),
                (n, self.config.data_dim)
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut dz = upstream.to_owned();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let weight = cache.inputs[li].t().dot(&dz);
            let bias = dz.sum_axis(Axis(0));
            grads.push(Layer { weight, bias });
            let mut da = dz.dot(&layer.weight.t());
            if li > 0 {
                Zip::from(&mut da)
                    .and(&cache.pre[li - 1])
                    .for_each(|g, &z| *g *= silu_grad(z));
            }
            dz = da;
        }
        grads.reverse();
        let d = self.config.data_dim;
        let input_grad = dz.slice(s![.., ..d]).to_owned();
        Ok((Gradients { layers: grads }, input_grad))
    }

    /// Recomputes the forward pass, then runs [`backward`](Self::backward).
    pub fn backward_at(
        &self,
        x: ArrayView2<T>,
        t: &[f64],
        upstream: ArrayView2<T>,
    ) -> Result<(Gradients<T>, Array2<T>)> {
        let (_, cache) = self.forward_cached(x, t)?;
        self.backward(&cache, upstream)
    }

    /// Converts the parameters to another scalar type.
    pub fn cast<U: Scalar>(&self) -> TimeConditionedNet<U> {
        TimeConditionedNet {
            config: self.config,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.mapv(|v| U::of(v.as_f64())),
                    bias: l.bias.mapv(|v| U::of(v.as_f64())),
                })
                .collect(),
        }
    }
}
