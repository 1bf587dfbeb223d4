//! End-to-end toy experiments shared by the command line and the test suites.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::distill::teacher::{fit_regression, FitSchedule};
use crate::distill::{
    run_baselines, run_phased_dmd, Method, RunArtifacts, RunOptions, Teacher, TrainerConfig,
    TIME_MARGIN,
};
use crate::error::{Error, Result};
use crate::metrics::{trajectory_deviation, DistributionReport};
use crate::net::{AdamConfig, NetConfig, Predictor, TimeConditionedNet};
use crate::objectives::{
    biased_subinterval_target, flow_target, subinterval_flow_target, DEFAULT_CLAMP_CAP,
};
use crate::prior::ToyPrior;
use crate::rng::{normal_batch, stream, uniform_times, Stream};
use crate::sampler::{par_run_steps, run_steps, IntervalMode, PhasePlan, StepSpec, Trajectory};
use crate::schedule::NoiseSchedule;

/// Training objective of a flow model in the trajectory-overlap experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowVariant {
    /// Flow matching on prior draws over the whole time range.
    Full,
    /// Unbiased subinterval target from intermediate samples.
    Subinterval,
    /// `eps - x_s` on the subinterval.
    Biased,
}

impl FlowVariant {
    pub const ALL: [FlowVariant; 3] = [FlowVariant::Full, FlowVariant::Subinterval, FlowVariant::Biased];

    pub fn name(self) -> &'static str {
        match self {
            FlowVariant::Full => "full",
            FlowVariant::Subinterval => "subinterval",
            FlowVariant::Biased => "biased",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapConfig {
    pub net: NetConfig,
    pub optimizer: AdamConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub final_lr_fraction: f64,
    pub ema_decay: f64,
    /// Start of the subinterval `(split, 1)`.
    pub split: f64,
    pub trajectories: usize,
    /// Euler steps over `[0, 1]`; the subinterval models use the same grid.
    pub euler_steps: usize,
    /// Intermediate samples drawn once and reused for every batch.
    pub pool_size: usize,
    /// Euler steps of the source model from 1 down to `split`.
    pub pool_steps: usize,
    pub clamp_cap: f64,
    pub time_margin: f64,
    pub seed: u64,
}

impl Default for OverlapConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default().with_width(128),
            optimizer: AdamConfig::default().betas(0.9, 0.999).learning_rate(2e-3),
            steps: 20_000,
            batch_size: 256,
            final_lr_fraction: 0.02,
            ema_decay: 0.999,
            split: 0.5,
            trajectories: 200,
            euler_steps: 200,
            pool_size: 1 << 16,
            pool_steps: 50,
            clamp_cap: DEFAULT_CLAMP_CAP,
            time_margin: TIME_MARGIN,
            seed: 0,
        }
    }
}

impl OverlapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::Config(format!("split {} outside (0, 1)", self.split)));
        }
        if self.trajectories == 0 || self.euler_steps == 0 || self.pool_size == 0 || self.pool_steps == 0 {
            return Err(Error::Config("empty trajectory, grid or pool size".into()));
        }
        if self.split + 2.0 * self.time_margin >= 1.0 {
            return Err(Error::Config("subinterval narrower than the time margins".into()));
        }
        Ok(())
    }

    /// `t_k = 1 - k / euler_steps`, down to `split` when `subinterval`.
    fn grid(&self, subinterval: bool) -> Vec<f64> {
        let n = self.euler_steps;
        let mut grid: Vec<f64> = (0..=n).map(|k| 1.0 - k as f64 / n as f64).collect();
        if subinterval {
            grid.retain(|&t| t > self.split + 1e-12);
            grid.push(self.split);
        }
        grid
    }
}

#[derive(Debug, Clone)]
pub struct OverlapResult {
    pub full: Trajectory<f64>,
    pub subinterval: Trajectory<f64>,
    pub biased: Trajectory<f64>,
    /// Deviations from the full-interval trajectories on `[split, 1]`.
    pub subinterval_deviation: f64,
    pub biased_deviation: f64,
    pub losses: Vec<(FlowVariant, Vec<f64>)>,
    pub nets: Vec<(FlowVariant, TimeConditionedNet<f64>)>,
}

impl OverlapResult {
    pub fn trajectory(&self, v: FlowVariant) -> &Trajectory<f64> {
        match v {
            FlowVariant::Full => &self.full,
            FlowVariant::Subinterval => &self.subinterval,
            FlowVariant::Biased => &self.biased,
        }
    }
}

fn euler_specs(grid: &[f64]) -> Vec<StepSpec> {
    grid.windows(2)
        .enumerate()
        .map(|(index, w)| StepSpec {
            index,
            expert: 0,
            t: w[0],
            t_next: w[1],
        })
        .collect()
}

/// Samples at time `split`: Euler integration of `source` from noise when
/// given, exact diffusion of prior draws otherwise.
pub fn intermediate_pool(
    prior: &ToyPrior,
    schedule: NoiseSchedule,
    source: Option<&dyn Predictor<f64>>,
    cfg: &OverlapConfig,
) -> Result<Array2<f64>> {
    let mut rng = stream(cfg.seed, Stream::Misc);
    let d = prior.dim();
    match source {
        Some(model) => {
            let eps: Array2<f64> = normal_batch(&mut rng, cfg.pool_size, d);
            let n = cfg.pool_steps;
            let grid: Vec<f64> = (0..=n)
                .map(|k| 1.0 - (1.0 - cfg.split) * k as f64 / n as f64)
                .collect();
            par_run_steps(schedule, &[model], &euler_specs(&grid), eps)
        }
        None => {
            let x0: Array2<f64> = prior.sample(&mut rng, cfg.pool_size);
            let eps: Array2<f64> = normal_batch(&mut rng, cfg.pool_size, d);
            schedule.diffuse(x0.view(), eps.view(), cfg.split)
        }
    }
}

/// Trains one flow model; every variant starts from the same weights.
pub fn train_flow(
    variant: FlowVariant,
    prior: &ToyPrior,
    schedule: NoiseSchedule,
    pool: &Array2<f64>,
    cfg: &OverlapConfig,
) -> Result<(TimeConditionedNet<f64>, Vec<f64>)> {
    cfg.validate()?;
    let net = TimeConditionedNet::<f64>::new(cfg.net, cfg.seed)?;
    let d = prior.dim();
    let mut data_rng = stream(cfg.seed, Stream::Prior);
    let mut noise_rng = stream(cfg.seed, Stream::Noise);
    let mut time_rng = stream(cfg.seed, Stream::Times);
    let fit = FitSchedule {
        optimizer: cfg.optimizer,
        steps: cfg.steps,
        final_lr_fraction: cfg.final_lr_fraction,
        ema_decay: cfg.ema_decay,
    };
    let (s, m, b) = (cfg.split, cfg.time_margin, cfg.batch_size);
    let what = format!("{} flow loss", variant.name());
    fit_regression(net, &fit, &what, |_| {
        let eps: Array2<f64> = normal_batch(&mut noise_rng, b, d);
        if variant == FlowVariant::Full {
            let x0: Array2<f64> = prior.sample(&mut data_rng, b);
            let ts = uniform_times(&mut time_rng, b, m, 1.0 - m);
            let x_t = schedule.diffuse_from_each(x0.view(), eps.view(), 0.0, &ts)?;
            return Ok((x_t, ts, flow_target(x0.view(), eps.view())?));
        }
        let rows: Vec<usize> = (0..b)
            .map(|_| rand::Rng::random_range(&mut data_rng, 0..pool.nrows()))
            .collect();
        let xs = pool.select(ndarray::Axis(0), &rows);
        let ts = uniform_times(&mut time_rng, b, s + m, 1.0 - m);
        let x_t = schedule.diffuse_from_each(xs.view(), eps.view(), s, &ts)?;
        let target = match variant {
            FlowVariant::Subinterval => subinterval_flow_target(schedule, xs.view(), eps.view(), s, &ts, cfg.clamp_cap)?,
            _ => biased_subinterval_target(xs.view(), eps.view())?,
        };
        Ok((x_t, ts, target))
    })
}

/// Euler trajectories of `net` from `eps` along `grid`.
pub fn euler_trajectories(
    net: &dyn Predictor<f64>,
    schedule: NoiseSchedule,
    eps: &Array2<f64>,
    grid: &[f64],
) -> Result<Trajectory<f64>> {
    let mut traj = Trajectory::new();
    run_steps(schedule, &[net], &euler_specs(grid), eps.clone(), Some(&mut traj))?;
    Ok(traj)
}

/// Full-interval, unbiased-subinterval and biased-subinterval flows sampled
/// from shared noise, compared on `[split, 1]`.
pub fn trajectory_overlap(
    prior: &ToyPrior,
    schedule: NoiseSchedule,
    source: Option<&dyn Predictor<f64>>,
    cfg: &OverlapConfig,
) -> Result<OverlapResult> {
    cfg.validate()?;
    let pool = intermediate_pool(prior, schedule, source, cfg)?;
    let eps: Array2<f64> = normal_batch(&mut stream(cfg.seed, Stream::Eval), cfg.trajectories, prior.dim());
    let mut losses = Vec::new();
    let mut nets = Vec::new();
    let mut trajs = Vec::new();
    for v in FlowVariant::ALL {
        let (net, l) = train_flow(v, prior, schedule, &pool, cfg)?;
        trajs.push(euler_trajectories(&net, schedule, &eps, &cfg.grid(v != FlowVariant::Full))?);
        losses.push((v, l));
        nets.push((v, net));
    }
    let biased = trajs.pop().expect("three variants");
    let subinterval = trajs.pop().expect("three variants");
    let full = trajs.pop().expect("three variants");
    let window = (cfg.split, 1.0);
    Ok(OverlapResult {
        subinterval_deviation: trajectory_deviation(&subinterval, &full, window)?,
        biased_deviation: trajectory_deviation(&biased, &full, window)?,
        full,
        subinterval,
        biased,
        losses,
        nets,
    })
}

/// One arm of the noise-injection ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub name: String,
    pub method: Method,
    pub interval_mode: IntervalMode,
    pub fixed_t: Option<f64>,
    pub report: DistributionReport,
}

/// Times at which the fixed-time arms inject noise.
pub const FIXED_TIMES: [f64; 2] = [0.357, 0.882];

/// Interval-mode arms run the phased method on `base.plan`; fixed-time arms
/// run vanilla DMD on the same grid collapsed to one phase. All arms share
/// the seed and the total generator-update budget of `base`.
pub fn ablate(
    base: &TrainerConfig,
    prior: &ToyPrior,
    teacher: &Teacher<f64>,
    init: &TimeConditionedNet<f64>,
) -> Result<Vec<AblationArm>> {
    let grid = base.plan.grid().to_vec();
    let sizes: Vec<usize> = base.plan.phases().iter().map(|p| p.len()).collect();
    let mut arms = Vec::new();
    for mode in [IntervalMode::ReverseNested, IntervalMode::Disjoint] {
        let cfg = TrainerConfig {
            method: Method::Phased,
            plan: PhasePlan::new(grid.clone(), &sizes, mode)?,
            fixed_t: None,
            ..base.clone()
        };
        let run = run_phased_dmd(&cfg, prior, teacher, init, &RunOptions::default())?;
        arms.push(AblationArm {
            name: mode.to_string(),
            method: cfg.method,
            interval_mode: mode,
            fixed_t: None,
            report: run.final_report,
        });
    }
    for t in FIXED_TIMES {
        let cfg = TrainerConfig {
            method: Method::Dmd,
            plan: PhasePlan::new(grid.clone(), &[grid.len() - 1], base.plan.mode())?,
            generator_updates: base.generator_updates * sizes.len(),
            fixed_t: Some(t),
            ..base.clone()
        };
        let run = run_phased_dmd(&cfg, prior, teacher, init, &RunOptions::default())?;
        arms.push(AblationArm {
            name: format!("fixed_t={t}"),
            method: cfg.method,
            interval_mode: cfg.plan.mode(),
            fixed_t: Some(t),
            report: run.final_report,
        });
    }
    Ok(arms)
}

/// Phased run plus both single-phase baselines under the same budget.
pub struct Comparison {
    pub phased: RunArtifacts<f64>,
    pub dmd: RunArtifacts<f64>,
    pub sgts: RunArtifacts<f64>,
}

pub fn compare_with_baselines(
    cfg: &TrainerConfig,
    prior: &ToyPrior,
    teacher: &Teacher<f64>,
    init: &TimeConditionedNet<f64>,
) -> Result<Comparison> {
    let phased = run_phased_dmd(cfg, prior, teacher, init, &RunOptions::default())?;
    let base = run_baselines(cfg, prior, teacher, init)?;
    Ok(Comparison {
        phased,
        dmd: base.dmd,
        sgts: base.sgts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> OverlapConfig {
        OverlapConfig {
            net: NetConfig::default().with_width(8).with_layers(1),
            steps: 20,
            batch_size: 16,
            trajectories: 10,
            euler_steps: 20,
            pool_size: 64,
            pool_steps: 4,
            ..Default::default()
        }
    }

    #[test]
    fn grids_agree_on_the_window() {
        let cfg = small();
        let full = cfg.grid(false);
        let sub = cfg.grid(true);
        assert_eq!(full.len(), 21);
        assert_eq!(&full[..sub.len()], &sub[..]);
        assert_eq!(*sub.last().unwrap(), 0.5);
    }

    #[test]
    fn overlap_run_is_deterministic() {
        let prior = ToyPrior::four_atom();
        let cfg = small();
        let a = trajectory_overlap(&prior, NoiseSchedule::RectifiedFlow, None, &cfg).unwrap();
        let b = trajectory_overlap(&prior, NoiseSchedule::RectifiedFlow, None, &cfg).unwrap();
        assert_eq!(a.full, b.full);
        assert_eq!(a.biased_deviation, b.biased_deviation);
        assert_eq!(a.full.n_samples(), 10);
        assert_eq!(a.subinterval.times().last(), Some(&0.5));
        assert_eq!(a.full.times().last(), Some(&0.0));
    }

    #[test]
    fn pool_from_source_lands_at_split() {
        let prior = ToyPrior::four_atom();
        let cfg = OverlapConfig {
            pool_size: 4000,
            pool_steps: 200,
            ..small()
        };
        let exact = crate::objectives::AnalyticVelocity {
            prior: prior.clone(),
            schedule: NoiseSchedule::RectifiedFlow,
        };
        let a = intermediate_pool(&prior, NoiseSchedule::RectifiedFlow, Some(&exact), &cfg).unwrap();
        let b = intermediate_pool(&prior, NoiseSchedule::RectifiedFlow, None, &cfg).unwrap();
        let w = crate::metrics::distance(a.view(), b.view()).unwrap();
        assert!(w < 0.05, "{w}");
    }
}
