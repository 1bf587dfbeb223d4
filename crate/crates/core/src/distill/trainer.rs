use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use super::{GradNormalization, Method, TrainerConfig};
use crate::error::{Error, Result};
use crate::metrics::DistributionReport;
use crate::net::{AdamState, ForwardCache, Gradients, PredictionKind, Predictor, TimeConditionedNet};
use crate::objectives::{
    dmd_weight, flow_target, subinterval_flow_target, subinterval_x_pred_target, x_pred_target,
    AnalyticVelocity, RegressionTarget,
};
use crate::rng::{normal_batch, stream, uniform_times, Stream, StreamRng};
use crate::sampler::{sgts_truncate_in, step_coeffs, StepSpec};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;

/// Score source for the real distribution.
#[derive(Debug, Clone)]
pub enum Teacher<T> {
    Analytic(AnalyticVelocity),
    Learned(TimeConditionedNet<T>),
}

impl<T: Scalar> Predictor<T> for Teacher<T> {
    fn kind(&self) -> PredictionKind {
        match self {
            Teacher::Analytic(_) => PredictionKind::Velocity,
            Teacher::Learned(net) => net.prediction(),
        }
    }

    fn predict(&self, x: ArrayView2<T>, t: &[f64]) -> Result<Array2<T>> {
        match self {
            Teacher::Analytic(a) => a.predict(x, t),
            Teacher::Learned(net) => net.forward(x, t),
        }
    }
}

/// Converts a prediction of either kind into a velocity `eps - x0`.
pub(crate) fn to_velocity<T: Scalar>(
    schedule: NoiseSchedule,
    kind: PredictionKind,
    pred: Array2<T>,
    x: ArrayView2<T>,
    ts: &[f64],
) -> Result<Array2<T>> {
    match kind {
        PredictionKind::Velocity => Ok(pred),
        PredictionKind::Sample => {
            let mut v = pred;
            for (i, &t) in ts.iter().enumerate() {
                let (alpha, sigma) = schedule.coeffs(t)?;
                for j in 0..v.ncols() {
                    let x0 = v[[i, j]].as_f64();
                    v[[i, j]] = T::of((x[[i, j]].as_f64() - alpha * x0) / sigma - x0);
                }
            }
            Ok(v)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub generator_update: usize,
    pub report: DistributionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseReport {
    pub phase: usize,
    pub boundary_time: f64,
    pub generator_updates: usize,
    pub fake_updates: usize,
    /// Mean fake loss between consecutive generator updates.
    pub fake_losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    /// Smallest and largest noise time drawn.
    pub noise_time_range: (f64, f64),
    /// Generator-update counts of each executed step count `j = 1, 2, ...`.
    pub truncation_histogram: Vec<u64>,
    pub snapshots: Vec<Snapshot>,
}

/// Mutable state of one phase: the trainable expert, its fake score network
/// and their optimizers. Earlier experts are borrowed and never modified.
pub struct PhaseState<'a, T> {
    pub index: usize,
    pub expert: TimeConditionedNet<T>,
    pub frozen: &'a [TimeConditionedNet<T>],
    pub fake: TimeConditionedNet<T>,
    pub teacher: &'a Teacher<T>,
    pub fake_optimizer: AdamState<T>,
    pub generator_optimizer: AdamState<T>,
    pub fake_steps: usize,
    pub generator_steps: usize,
    pub truncations: Vec<u64>,
    pub time_range: (f64, f64),
    noise: StreamRng,
    times: StreamRng,
    truncation: StreamRng,
}

/// Seed of phase `k`; phase 0 uses the run seed itself.
pub(crate) fn phase_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

struct TapeEntry<T> {
    cache: ForwardCache<T>,
    x_coeff: f64,
    pred_coeff: f64,
}

struct Rollout<T> {
    x_s: Array2<T>,
    tape: Vec<TapeEntry<T>>,
    steps: usize,
}

impl<'a, T: Scalar> PhaseState<'a, T> {
    pub fn new(
        index: usize,
        expert: TimeConditionedNet<T>,
        frozen: &'a [TimeConditionedNet<T>],
        fake: TimeConditionedNet<T>,
        teacher: &'a Teacher<T>,
        cfg: &TrainerConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        cfg.plan.phase(index)?;
        if frozen.len() < index {
            return Err(Error::invalid(format!(
                "phase {index} needs {index} frozen experts, got {}",
                frozen.len()
            )));
        }
        let seed = phase_seed(cfg.seed, index);
        Ok(Self {
            index,
            fake_optimizer: AdamState::new(cfg.fake_optimizer, fake.layers()),
            generator_optimizer: AdamState::new(cfg.generator_optimizer, expert.layers()),
            expert,
            frozen: &frozen[..index],
            fake,
            teacher,
            fake_steps: 0,
            generator_steps: 0,
            truncations: vec![0; cfg.plan.phase(index)?.len().max(cfg.plan.steps())],
            time_range: (f64::INFINITY, f64::NEG_INFINITY),
            noise: stream(seed, Stream::Noise),
            times: stream(seed, Stream::Times),
            truncation: stream(seed, Stream::Truncation),
        })
    }

    /// Boundary time `s` and noise interval of this phase.
    fn interval(&self, cfg: &TrainerConfig) -> Result<(f64, (f64, f64))> {
        let phase = cfg.plan.phase(self.index)?;
        Ok((cfg.plan.boundary_time(self.index)?, phase.noise_interval))
    }

    fn expert_for(&self, spec: &StepSpec) -> Result<&TimeConditionedNet<T>> {
        if spec.expert == self.index {
            Ok(&self.expert)
        } else {
            self.frozen.get(spec.expert).ok_or_else(|| {
                Error::invalid(format!("no expert {} for step {}", spec.expert, spec.index))
            })
        }
    }

    /// Steps executed in one update and the number of them recorded.
    fn schedule_steps(&mut self, cfg: &TrainerConfig, generator: bool) -> Result<(Vec<StepSpec>, usize)> {
        let plan = &cfg.plan;
        let phase = plan.phase(self.index)?;
        let s = plan.boundary_time(self.index)?;
        let (specs, j) = match cfg.method {
            Method::Dmd => {
                let specs = plan.step_specs(plan.steps(), None)?;
                let n = specs.len();
                return Ok((specs, n));
            }
            Method::Phased => return Ok((plan.step_specs(phase.steps.end, None)?, 1)),
            Method::DmdSgts => {
                let j = sgts_truncate_in(plan.steps(), &mut self.truncation);
                (plan.step_specs(j, Some(0.0))?, j)
            }
            Method::PhasedSgts => {
                let j = sgts_truncate_in(phase.len(), &mut self.truncation);
                (plan.step_specs(phase.steps.start + j, Some(s))?, j)
            }
        };
        if generator {
            self.truncations[j - 1] += 1;
        }
        Ok((specs, 1))
    }

    /// Runs the generator from fresh noise to this phase's boundary, keeping
    /// forward caches of the last `record` steps.
    fn rollout(&mut self, cfg: &TrainerConfig, generator: bool) -> Result<Rollout<T>> {
        let (specs, record) = self.schedule_steps(cfg, generator)?;
        let d = self.expert.config().data_dim;
        let mut x: Array2<T> = normal_batch(&mut self.noise, cfg.batch_size, d);
        let keep_from = if generator { specs.len() - record } else { specs.len() };
        let mut tape = Vec::new();
        for (i, spec) in specs.iter().enumerate() {
            let net = self.expert_for(spec)?;
            let ts = vec![spec.t; x.nrows()];
            let (x_coeff, pred_coeff) = step_coeffs(cfg.schedule, net.prediction(), spec.t, spec.t_next)?;
            let pred = if i >= keep_from {
                let (pred, cache) = net.forward_cached(x.view(), &ts)?;
                tape.push(TapeEntry {
                    cache,
                    x_coeff,
                    pred_coeff,
                });
                pred
            } else {
                net.forward(x.view(), &ts)?
            };
            let (cx, cp) = (T::of(x_coeff), T::of(pred_coeff));
            Zip::from(&mut x).and(&pred).for_each(|xv, &p| *xv = cx * *xv + cp * p);
        }
        Ok(Rollout {
            x_s: x,
            tape,
            steps: specs.len(),
        })
    }

    /// Noise times for one batch and the noised samples.
    fn noise_up(&mut self, cfg: &TrainerConfig, x_s: &Array2<T>) -> Result<(Vec<f64>, Array2<T>, Array2<T>)> {
        let (s, (lo, hi)) = self.interval(cfg)?;
        let n = x_s.nrows();
        let ts = match cfg.fixed_t {
            Some(t) => {
                if t <= s {
                    return Err(Error::Config(format!("fixed_t {t} not above the boundary {s}")));
                }
                vec![t; n]
            }
            None => uniform_times(&mut self.times, n, lo + cfg.time_margin, hi - cfg.time_margin),
        };
        for &t in &ts {
            self.time_range.0 = self.time_range.0.min(t);
            self.time_range.1 = self.time_range.1.max(t);
        }
        let eps: Array2<T> = normal_batch(&mut self.noise, n, x_s.ncols());
        let x_t = cfg.schedule.diffuse_from_each(x_s.view(), eps.view(), s, &ts)?;
        Ok((ts, eps, x_t))
    }
}

fn fake_target<T: Scalar>(
    cfg: &TrainerConfig,
    kind: PredictionKind,
    s: f64,
    x_s: &Array2<T>,
    eps: &Array2<T>,
    ts: &[f64],
) -> Result<RegressionTarget<T>> {
    match (kind, s == 0.0) {
        (PredictionKind::Velocity, true) => flow_target(x_s.view(), eps.view()),
        (PredictionKind::Velocity, false) => {
            subinterval_flow_target(cfg.schedule, x_s.view(), eps.view(), s, ts, cfg.clamp_cap)
        }
        (PredictionKind::Sample, true) => Ok(x_pred_target(x_s.view())),
        (PredictionKind::Sample, false) => {
            subinterval_x_pred_target(cfg.schedule, x_s.view(), eps.view(), s, ts)
        }
    }
}

/// One regression step of the fake network on fresh generator output.
pub fn fake_update<T: Scalar>(state: &mut PhaseState<'_, T>, cfg: &TrainerConfig) -> Result<f64> {
    let roll = state.rollout(cfg, false)?;
    let (s, _) = state.interval(cfg)?;
    let (ts, eps, x_t) = state.noise_up(cfg, &roll.x_s)?;
    let target = fake_target(cfg, state.fake.prediction(), s, &roll.x_s, &eps, &ts)?;
    let (pred, cache) = state.fake.forward_cached(x_t.view(), &ts)?;
    let (loss, upstream) = target.loss_and_grad(pred.view())?;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: format!("fake loss, phase {} update {}", state.index, state.fake_steps),
            detail: format!(
                "loss {loss}; x_s range {:?}",
                range(roll.x_s.iter().map(|v| v.as_f64()))
            ),
        });
    }
    let (grads, _) = state.fake.backward(&cache, upstream.view())?;
    state.fake_optimizer.step(state.fake.layers_mut(), &grads)?;
    state.fake_steps += 1;
    Ok(loss)
}

fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

/// Pseudo-gradient `w_{t|s} (T - F)` of the reverse KL with respect to the
/// generator output, in velocity space.
pub(crate) fn pseudo_gradient<T: Scalar>(
    cfg: &TrainerConfig,
    s: f64,
    fake_v: &Array2<T>,
    teacher_v: &Array2<T>,
    ts: &[f64],
) -> Result<Array2<T>> {
    let mut g = Array2::zeros(fake_v.raw_dim());
    for (i, &t) in ts.iter().enumerate() {
        let w = dmd_weight(cfg.schedule, s, t)?.w;
        for j in 0..g.ncols() {
            g[[i, j]] = T::of(w * (teacher_v[[i, j]].as_f64() - fake_v[[i, j]].as_f64()));
        }
    }
    if cfg.grad_normalization == GradNormalization::PerSampleMeanAbs {
        for mut row in g.rows_mut() {
            let scale = row.iter().map(|v| v.as_f64().abs()).sum::<f64>() / row.len() as f64 + 1e-8;
            row.mapv_inplace(|v| T::of(v.as_f64() / scale));
        }
    }
    Ok(g)
}

/// One generator step: inject the pseudo-gradient at the phase boundary and
/// backpropagate through the recorded steps only. Returns the parameter
/// gradient norm.
pub fn generator_update<T: Scalar>(state: &mut PhaseState<'_, T>, cfg: &TrainerConfig) -> Result<f64> {
    let roll = state.rollout(cfg, true)?;
    let (s, _) = state.interval(cfg)?;
    let (ts, _, x_t) = state.noise_up(cfg, &roll.x_s)?;
    let fake_v = to_velocity(
        cfg.schedule,
        state.fake.prediction(),
        state.fake.forward(x_t.view(), &ts)?,
        x_t.view(),
        &ts,
    )?;
    let teacher_v = to_velocity(
        cfg.schedule,
        state.teacher.kind(),
        state.teacher.predict(x_t.view(), &ts)?,
        x_t.view(),
        &ts,
    )?;
    let g = pseudo_gradient(cfg, s, &fake_v, &teacher_v, &ts)?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("pseudo-gradient, phase {} update {}", state.index, state.generator_steps),
            detail: format!("times {:?}", range(ts.iter().cloned())),
        });
    }
    let n = T::of(roll.x_s.nrows() as f64);
    let mut upstream = if cfg.surrogate_loss {
        // gradient of 0.5 |x - stopgrad(x - g)|^2
        let anchor = &roll.x_s - &g;
        (&roll.x_s - &anchor) / n
    } else {
        g / n
    };

    let mut total: Option<Gradients<T>> = None;
    for (k, entry) in roll.tape.iter().enumerate().rev() {
        let up_pred = upstream.mapv(|u| u * T::of(entry.pred_coeff));
        let (grads, input_grad) = state.expert.backward(&entry.cache, up_pred.view())?;
        match total.as_mut() {
            None => total = Some(grads),
            Some(acc) => acc.add_assign(&grads),
        }
        if k > 0 {
            let cx = T::of(entry.x_coeff);
            upstream = Zip::from(&upstream)
                .and(&input_grad)
                .map_collect(|&u, &gi| cx * u + gi);
        }
    }
    let grads = total.ok_or_else(|| Error::invalid("no recorded step"))?;
    debug_assert!(roll.steps >= roll.tape.len());
    let norm = grads.norm();
    state.generator_optimizer.step(state.expert.layers_mut(), &grads)?;
    state.generator_steps += 1;
    Ok(norm)
}

/// Alternates fake and generator updates for `cfg.generator_updates`
/// iterations. `snapshot` is called every `cfg.snapshot_every` updates.
pub fn run_phase<T: Scalar>(
    state: &mut PhaseState<'_, T>,
    cfg: &TrainerConfig,
    mut snapshot: impl FnMut(&PhaseState<'_, T>) -> Result<DistributionReport>,
) -> Result<PhaseReport> {
    let mut fake_losses = Vec::with_capacity(cfg.generator_updates);
    let mut grad_norms = Vec::with_capacity(cfg.generator_updates);
    let mut snapshots = Vec::new();
    for it in 0..cfg.generator_updates {
        let mut loss = 0.0;
        for _ in 0..cfg.fake_updates_per_generator_update {
            loss += fake_update(state, cfg)?;
        }
        fake_losses.push(loss / cfg.fake_updates_per_generator_update as f64);
        grad_norms.push(generator_update(state, cfg)?);
        if cfg.snapshot_every > 0 && (it + 1) % cfg.snapshot_every == 0 {
            snapshots.push(Snapshot {
                generator_update: it + 1,
                report: snapshot(state)?,
            });
        }
    }
    let hist_len = match cfg.method {
        Method::DmdSgts => cfg.plan.steps(),
        Method::PhasedSgts => cfg.plan.phase(state.index)?.len(),
        _ => 0,
    };
    Ok(PhaseReport {
        phase: state.index,
        boundary_time: cfg.plan.boundary_time(state.index)?,
        generator_updates: state.generator_steps,
        fake_updates: state.fake_steps,
        fake_losses,
        grad_norms,
        noise_time_range: state.time_range,
        truncation_histogram: state.truncations[..hist_len].to_vec(),
        snapshots,
    })
}
