use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::trainer::{run_phase, PhaseReport, PhaseState, Teacher};
use super::{Method, TrainerConfig};
use crate::error::{Error, Result};
use crate::metrics::DistributionReport;
use crate::net::{checkpoint, Predictor, TimeConditionedNet};
use crate::prior::ToyPrior;
use crate::rng::{normal_batch, stream, Stream};
use crate::sampler::{par_pipeline, PhasePlan};
use crate::scalar::Scalar;

/// Where phase checkpoints live and which phase to start from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub checkpoint_dir: Option<PathBuf>,
    /// Phases before this one are loaded from `checkpoint_dir` and frozen.
    pub start_phase: usize,
    /// Continue training the start phase's own checkpointed expert instead of
    /// restarting it from the teacher.
    pub continue_expert: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub phase: usize,
    pub t: f64,
    pub report: DistributionReport,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts<T> {
    pub experts: Vec<TimeConditionedNet<T>>,
    /// Fake networks of the phases trained in this run.
    pub fakes: Vec<TimeConditionedNet<T>>,
    pub phases: Vec<PhaseReport>,
    pub boundaries: Vec<BoundaryReport>,
    pub final_report: DistributionReport,
}

#[derive(Debug, Clone)]
pub struct BaselineArtifacts<T> {
    pub dmd: RunArtifacts<T>,
    pub sgts: RunArtifacts<T>,
}

pub fn expert_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("expert_{k}.ckpt"))
}

pub fn fake_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("fake_{k}.ckpt"))
}

/// Loads experts `0..count` from a checkpoint directory.
pub fn load_experts<T: Scalar>(dir: &Path, count: usize) -> Result<Vec<TimeConditionedNet<T>>> {
    (0..count)
        .map(|k| {
            let path = expert_path(dir, k);
            if !path.exists() {
                return Err(Error::Checkpoint(format!(
                    "missing checkpoint for phase {k}: {}",
                    path.display()
                )));
            }
            checkpoint::load(&path)
        })
        .collect()
}

/// Distribution of the generator output at the end of phase `k` against
/// the true marginal at that time, on fixed evaluation noise.
pub fn evaluate_boundary<T: Scalar>(
    experts: &[&dyn Predictor<T>],
    cfg: &TrainerConfig,
    prior: &ToyPrior,
    k: usize,
) -> Result<DistributionReport> {
    let plan = &cfg.plan;
    let phase = plan.phase(k)?;
    let t = plan.boundary_time(k)?;
    let d = prior.dim();
    let n = cfg.eval_samples;
    let mut rng = stream(cfg.seed, Stream::Eval);
    let eps: Array2<T> = normal_batch(&mut rng, n, d);
    let x0: Array2<T> = prior.sample(&mut rng, n);
    let noise: Array2<T> = normal_batch(&mut rng, n, d);
    let reference = cfg.schedule.diffuse(x0.view(), noise.view(), t)?;
    let out = par_pipeline(cfg.schedule, experts, plan, eps.view(), Some(phase.steps.end))?;
    let alpha = cfg.schedule.alpha(t)?;
    DistributionReport::evaluate(
        out.view(),
        reference.view(),
        &prior.scaled(alpha),
        cfg.mode_radius * alpha,
    )
}

fn as_predictors<T: Scalar>(nets: &[TimeConditionedNet<T>]) -> Vec<&dyn Predictor<T>> {
    nets.iter().map(|n| n as &dyn Predictor<T>).collect()
}

/// Trains the phases of `cfg.plan` in order. Each phase starts its expert
/// and its fake network from `init`, freezes every earlier expert and, with a
/// checkpoint directory, saves both networks when it ends.
pub fn run_phased_dmd<T: Scalar>(
    cfg: &TrainerConfig,
    prior: &ToyPrior,
    teacher: &Teacher<T>,
    init: &TimeConditionedNet<T>,
    options: &RunOptions,
) -> Result<RunArtifacts<T>> {
    cfg.validate()?;
    if init.config().data_dim != prior.dim() {
        return Err(Error::Config("initial network and prior differ in dimension".into()));
    }
    let phases = cfg.plan.phases().len();
    if options.start_phase >= phases {
        return Err(Error::Config(format!(
            "start phase {} beyond {phases} phases",
            options.start_phase
        )));
    }
    let mut experts = match (&options.checkpoint_dir, options.start_phase) {
        (_, 0) => Vec::new(),
        (Some(dir), k) => load_experts(dir, k)?,
        (None, k) => {
            return Err(Error::Config(format!(
                "resuming phase {k} needs a checkpoint directory"
            )))
        }
    };
    let mut fakes = Vec::new();
    let mut reports = Vec::new();
    let mut boundaries = Vec::new();
    for k in options.start_phase..phases {
        let start = match (&options.checkpoint_dir, options.continue_expert && k == options.start_phase) {
            (Some(dir), true) => checkpoint::load(&expert_path(dir, k))?,
            _ => init.clone(),
        };
        let (expert, fake, report) = {
            let mut state = PhaseState::new(k, start, &experts, init.clone(), teacher, cfg)?;
            let report = run_phase(&mut state, cfg, |st| {
                let mut all = as_predictors(st.frozen);
                all.push(&st.expert);
                evaluate_boundary(&all, cfg, prior, k)
            })?;
            (state.expert, state.fake, report)
        };
        if let Some(dir) = &options.checkpoint_dir {
            checkpoint::save(&expert, &expert_path(dir, k))?;
            checkpoint::save(&fake, &fake_path(dir, k))?;
        }
        experts.push(expert);
        fakes.push(fake);
        reports.push(report);
        boundaries.push(BoundaryReport {
            phase: k,
            t: cfg.plan.boundary_time(k)?,
            report: evaluate_boundary(&as_predictors(&experts), cfg, prior, k)?,
        });
    }
    let final_report = boundaries.last().expect("at least one phase").report.clone();
    Ok(RunArtifacts {
        experts,
        fakes,
        phases: reports,
        boundaries,
        final_report,
    })
}

/// Vanilla few-step DMD and DMD with stochastic truncation on the grid of
/// `cfg.plan` collapsed to a single phase. Each gets the generator updates of
/// all phases of `cfg` combined.
pub fn run_baselines<T: Scalar>(
    cfg: &TrainerConfig,
    prior: &ToyPrior,
    teacher: &Teacher<T>,
    init: &TimeConditionedNet<T>,
) -> Result<BaselineArtifacts<T>> {
    let plan = PhasePlan::new(cfg.plan.grid().to_vec(), &[cfg.plan.steps()], cfg.plan.mode())?;
    let with = |method| TrainerConfig {
        method,
        plan: plan.clone(),
        generator_updates: cfg.generator_updates * cfg.plan.phases().len(),
        ..cfg.clone()
    };
    let none = RunOptions::default();
    Ok(BaselineArtifacts {
        dmd: run_phased_dmd(&with(Method::Dmd), prior, teacher, init, &none)?,
        sgts: run_phased_dmd(&with(Method::DmdSgts), prior, teacher, init, &none)?,
    })
}
