use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::trainer::to_velocity;
use super::TIME_MARGIN;
use crate::error::{Error, Result};
use crate::net::{AdamConfig, AdamState, NetConfig, PredictionKind, TimeConditionedNet};
use crate::objectives::{analytic_velocity, flow_target, x_pred_target, RegressionTarget};
use crate::prior::ToyPrior;
use crate::rng::{normal_batch, stream, uniform_times, Stream};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub net: NetConfig,
    pub optimizer: AdamConfig,
    pub steps: usize,
    pub batch_size: usize,
    /// Cosine decay of the learning rate down to this fraction (1: constant).
    pub final_lr_fraction: f64,
    /// Decay of the weight average returned as the teacher (0: last iterate).
    pub ema_decay: f64,
    pub time_margin: f64,
    pub gate_threshold: f64,
    /// Times at which the gate compares against the analytic velocity.
    pub gate_times: Vec<f64>,
    /// Points per time on the spatial grid.
    pub gate_points: usize,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            optimizer: AdamConfig::default().betas(0.9, 0.999).learning_rate(2e-3),
            steps: 40_000,
            batch_size: 256,
            final_lr_fraction: 0.02,
            ema_decay: 0.999,
            time_margin: TIME_MARGIN,
            gate_threshold: 1e-3,
            gate_times: (0..17).map(|i| 0.1 + 0.05 * i as f64).collect(),
            gate_points: 561,
            seed: 0,
        }
    }
}

/// One point of the gate grid; `density` is the (unnormalized) weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationPoint {
    pub t: f64,
    pub x: f64,
    pub learned: f64,
    pub analytic: f64,
    pub density: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedTeacher<T> {
    pub net: TimeConditionedNet<T>,
    /// Density-weighted mean squared deviation from the analytic velocity.
    pub deviation: f64,
    pub threshold: f64,
    pub map: Vec<DeviationPoint>,
    /// Mean training loss over consecutive blocks of 100 steps.
    pub losses: Vec<f64>,
}

impl<T> TrainedTeacher<T> {
    pub fn passed(&self) -> bool {
        self.deviation <= self.threshold
    }

    pub fn require_gate(&self) -> Result<()> {
        if self.passed() {
            Ok(())
        } else {
            Err(Error::GateFailed {
                deviation: self.deviation,
                threshold: self.threshold,
            })
        }
    }
}

fn marginal_density(prior: &ToyPrior, x: f64, alpha: f64, sigma: f64) -> f64 {
    prior
        .atoms()
        .iter()
        .map(|a| {
            let var = alpha * alpha * a.width * a.width + sigma * sigma;
            let r = x - alpha * a.location[0];
            a.probability * (-0.5 * r * r / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
        })
        .sum()
}

/// Learned vs analytic velocity on the gate grid (one-dimensional priors) and
/// the density-weighted mean squared deviation, averaged over times.
pub fn deviation_map<T: Scalar>(
    net: &TimeConditionedNet<T>,
    prior: &ToyPrior,
    schedule: NoiseSchedule,
    times: &[f64],
    points: usize,
) -> Result<(f64, Vec<DeviationPoint>)> {
    if prior.dim() != 1 {
        return Err(Error::invalid("the deviation grid needs a one-dimensional prior"));
    }
    if times.is_empty() || points < 2 {
        return Err(Error::invalid("empty deviation grid"));
    }
    let locs: Vec<f64> = prior.atoms().iter().map(|a| a.location[0]).collect();
    let lo = locs.iter().cloned().fold(f64::INFINITY, f64::min) - 3.5;
    let hi = locs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.5;
    let xs: Array2<T> = Array2::from_shape_fn((points, 1), |(i, _)| {
        T::of(lo + (hi - lo) * i as f64 / (points - 1) as f64)
    });
    let mut map = Vec::with_capacity(times.len() * points);
    let mut total = 0.0;
    for &t in times {
        let ts = vec![t; points];
        let learned = to_velocity(schedule, net.prediction(), net.forward(xs.view(), &ts)?, xs.view(), &ts)?;
        let exact = analytic_velocity(prior, schedule, xs.view(), &ts)?;
        let (alpha, sigma) = schedule.coeffs(t)?;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..points {
            let x = xs[[i, 0]].as_f64();
            let p = marginal_density(prior, x, alpha, sigma);
            let (l, a) = (learned[[i, 0]].as_f64(), exact[[i, 0]].as_f64());
            num += p * (l - a) * (l - a);
            den += p;
            map.push(DeviationPoint {
                t,
                x,
                learned: l,
                analytic: a,
                density: p,
            });
        }
        total += num / den;
    }
    Ok((total / times.len() as f64, map))
}

/// Gate statistic of any network: the grid map for one-dimensional priors,
/// a Monte-Carlo estimate (with an empty map) otherwise.
pub fn gate_deviation<T: Scalar>(
    net: &TimeConditionedNet<T>,
    prior: &ToyPrior,
    schedule: NoiseSchedule,
    cfg: &TeacherConfig,
) -> Result<(f64, Vec<DeviationPoint>)> {
    if prior.dim() == 1 {
        deviation_map(net, prior, schedule, &cfg.gate_times, cfg.gate_points)
    } else {
        Ok((sampled_deviation(net, prior, schedule, &cfg.gate_times, cfg.seed)?, Vec::new()))
    }
}

/// Flow-matching training on prior draws with `t` uniform on
/// `(margin, 1 - margin)`, followed by the analytic-velocity gate.
pub fn pretrain_teacher<T: Scalar>(
    prior: &ToyPrior,
    schedule: NoiseSchedule,
    cfg: &TeacherConfig,
) -> Result<TrainedTeacher<T>> {
    if cfg.net.data_dim != prior.dim() {
        return Err(Error::Config(format!(
            "teacher dimension {} does not match prior dimension {}",
            cfg.net.data_dim,
            prior.dim()
        )));
    }
    let net = TimeConditionedNet::<T>::new(cfg.net, cfg.seed)?;
    let mut data_rng = stream(cfg.seed, Stream::Prior);
    let mut noise_rng = stream(cfg.seed, Stream::Noise);
    let mut time_rng = stream(cfg.seed, Stream::Times);
    let d = prior.dim();
    let schedule_cfg = FitSchedule {
        optimizer: cfg.optimizer,
        steps: cfg.steps,
        final_lr_fraction: cfg.final_lr_fraction,
        ema_decay: cfg.ema_decay,
    };
    let (net, losses) = fit_regression(net, &schedule_cfg, "teacher loss", |_| {
        let x0: Array2<T> = prior.sample(&mut data_rng, cfg.batch_size);
        let eps: Array2<T> = normal_batch(&mut noise_rng, cfg.batch_size, d);
        let ts = uniform_times(&mut time_rng, cfg.batch_size, cfg.time_margin, 1.0 - cfg.time_margin);
        let x_t = schedule.diffuse_from_each(x0.view(), eps.view(), 0.0, &ts)?;
        let target = match cfg.net.prediction {
            PredictionKind::Velocity => flow_target(x0.view(), eps.view())?,
            PredictionKind::Sample => x_pred_target(x0.view()),
        };
        Ok((x_t, ts, target))
    })?;
    let (deviation, map) = gate_deviation(&net, prior, schedule, cfg)?;
    Ok(TrainedTeacher {
        net,
        deviation,
        threshold: cfg.gate_threshold,
        map,
        losses,
    })
}

/// Optimizer, step budget and weight averaging of a regression fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct FitSchedule {
    pub optimizer: AdamConfig,
    pub steps: usize,
    pub final_lr_fraction: f64,
    pub ema_decay: f64,
}

/// Fits `net` to the batches produced by `batch(step)` with a cosine-decayed
/// learning rate. Returns the weight average (or the last iterate when
/// `ema_decay` is 0) and mean losses over blocks of 100 steps.
pub(crate) fn fit_regression<T: Scalar>(
    mut net: TimeConditionedNet<T>,
    cfg: &FitSchedule,
    what: &str,
    mut batch: impl FnMut(usize) -> Result<(Array2<T>, Vec<f64>, RegressionTarget<T>)>,
) -> Result<(TimeConditionedNet<T>, Vec<f64>)> {
    let mut opt = AdamState::new(cfg.optimizer, net.layers());
    let base_lr = cfg.optimizer.learning_rate;
    let mut losses = Vec::new();
    let mut block = 0.0;
    let mut average = net.clone();
    for step in 0..cfg.steps {
        let progress = step as f64 / cfg.steps.max(1) as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        opt.config.learning_rate =
            base_lr * (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * cosine);
        let (x_t, ts, target) = batch(step)?;
        let (pred, cache) = net.forward_cached(x_t.view(), &ts)?;
        let (loss, upstream) = target.loss_and_grad(pred.view())?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: what.into(),
                detail: format!("step {step}: {loss}"),
            });
        }
        let (grads, _) = net.backward(&cache, upstream.view())?;
        opt.step(net.layers_mut(), &grads)?;
        // bias-corrected: early iterates are not dominated by the initialization
        let k = T::of(cfg.ema_decay.min((1.0 + step as f64) / (10.0 + step as f64)));
        for (avg, cur) in average.layers_mut().iter_mut().zip(net.layers()) {
            Zip::from(&mut avg.weight)
                .and(&cur.weight)
                .for_each(|a, &c| *a = k * *a + (T::one() - k) * c);
            Zip::from(&mut avg.bias)
                .and(&cur.bias)
                .for_each(|a, &c| *a = k * *a + (T::one() - k) * c);
        }
        block += loss;
        if (step + 1) % 100 == 0 {
            losses.push(block / 100.0);
            block = 0.0;
        }
    }
    Ok((if cfg.ema_decay > 0.0 { average } else { net }, losses))
}

/// Monte-Carlo form of the gate for priors in more than one dimension.
fn sampled_deviation<T: Scalar>(
    net: &TimeConditionedNet<T>,
    prior: &ToyPrior,
    schedule: NoiseSchedule,
    times: &[f64],
    seed: u64,
) -> Result<f64> {
    let n = 4096;
    let mut rng = stream(seed, Stream::Eval);
    let mut total = 0.0;
    for &t in times {
        let x0: Array2<T> = prior.sample(&mut rng, n);
        let eps: Array2<T> = normal_batch(&mut rng, n, prior.dim());
        let x_t = schedule.diffuse(x0.view(), eps.view(), t)?;
        let ts = vec![t; n];
        let learned = to_velocity(schedule, net.prediction(), net.forward(x_t.view(), &ts)?, x_t.view(), &ts)?;
        let exact = analytic_velocity(prior, schedule, x_t.view(), &ts)?;
        total += learned
            .iter()
            .zip(exact.iter())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
            .sum::<f64>()
            / n as f64;
    }
    Ok(total / times.len() as f64)
}
