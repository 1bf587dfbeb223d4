//! Distribution matching distillation: fake-score and generator updates, and
//! the vanilla, truncated and phased orchestrations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::AdamConfig;
use crate::objectives::DEFAULT_CLAMP_CAP;
use crate::sampler::PhasePlan;
use crate::schedule::NoiseSchedule;

mod run;
pub(crate) mod teacher;
mod trainer;

pub use run::{
    evaluate_boundary, expert_path, fake_path, load_experts, run_baselines, run_phased_dmd,
    BaselineArtifacts, BoundaryReport, RunArtifacts, RunOptions,
};
pub use teacher::{
    deviation_map, gate_deviation, pretrain_teacher, DeviationPoint, TeacherConfig, TrainedTeacher,
};
pub use trainer::{
    fake_update, generator_update, run_phase, PhaseReport, PhaseState, Snapshot, Teacher,
};

/// Padding kept between sampled times and the singular endpoints.
pub const TIME_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Backpropagation through every sampling step.
    Dmd,
    /// Random truncation, gradient through the final executed step only.
    DmdSgts,
    /// One expert per phase, gradient through the phase-terminal step.
    #[default]
    Phased,
    /// Phased, with the executed step count inside a phase drawn at random.
    PhasedSgts,
}

impl Method {
    pub fn is_phased(self) -> bool {
        matches!(self, Method::Phased | Method::PhasedSgts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherKind {
    Analytic,
    #[default]
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradNormalization {
    #[default]
    None,
    /// Divide each sample's pseudo-gradient by its mean absolute value.
    PerSampleMeanAbs,
}

macro_rules! text_enum {
    ($ty:ty, $($variant:path => $name:literal),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(
                        "unknown {} '{other}'", stringify!($ty)
                    ))),
                }
            }
        }
    };
}

text_enum!(Method,
    Method::Dmd => "dmd",
    Method::DmdSgts => "dmd_sgts",
    Method::Phased => "phased",
    Method::PhasedSgts => "phased_sgts",
);
text_enum!(TeacherKind, TeacherKind::Analytic => "analytic", TeacherKind::Learned => "learned");
text_enum!(GradNormalization,
    GradNormalization::None => "none",
    GradNormalization::PerSampleMeanAbs => "per_sample_mean_abs",
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub method: Method,
    pub schedule: NoiseSchedule,
    pub plan: PhasePlan,
    pub fake_updates_per_generator_update: usize,
    pub batch_size: usize,
    pub fake_optimizer: AdamConfig,
    pub generator_optimizer: AdamConfig,
    /// Generator updates in each phase.
    pub generator_updates: usize,
    pub teacher_kind: TeacherKind,
    pub grad_normalization: GradNormalization,
    /// Inject the pseudo-gradient through `0.5 |x - stopgrad(x - g)|^2`.
    pub surrogate_loss: bool,
    /// Inject noise at this time only, instead of sampling the interval.
    pub fixed_t: Option<f64>,
    pub clamp_cap: f64,
    pub time_margin: f64,
    /// Record a distribution snapshot every this many generator updates (0: never).
    pub snapshot_every: usize,
    pub eval_samples: usize,
    pub mode_radius: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            method: Method::Phased,
            schedule: NoiseSchedule::RectifiedFlow,
            plan: PhasePlan::uniform(4, 2, Default::default()).expect("valid plan"),
            fake_updates_per_generator_update: 5,
            batch_size: 256,
            fake_optimizer: AdamConfig::default().learning_rate(1e-3),
            generator_optimizer: AdamConfig::default().learning_rate(1e-4),
            generator_updates: 400,
            teacher_kind: TeacherKind::Learned,
            grad_normalization: GradNormalization::None,
            surrogate_loss: false,
            fixed_t: None,
            clamp_cap: DEFAULT_CLAMP_CAP,
            time_margin: TIME_MARGIN,
            snapshot_every: 0,
            eval_samples: 10_000,
            mode_radius: crate::metrics::DEFAULT_MODE_RADIUS,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fake_updates_per_generator_update == 0 {
            return Err(Error::Config("fake_updates_per_generator_update must be at least 1".into()));
        }
        if self.batch_size == 0 || self.eval_samples == 0 {
            return Err(Error::Config("batch and evaluation sizes must be positive".into()));
        }
        if !self.method.is_phased() && self.plan.phases().len() != 1 {
            return Err(Error::Config(format!(
                "method {} needs a single-phase plan, got {} phases",
                self.method,
                self.plan.phases().len()
            )));
        }
        if let Some(t) = self.fixed_t {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("fixed_t {t} outside (0, 1)")));
            }
        }
        if !(self.time_margin > 0.0 && self.time_margin < 0.25) {
            return Err(Error::Config(format!("time_margin {} invalid", self.time_margin)));
        }
        if !(self.clamp_cap > 0.0) {
            return Err(Error::Config("clamp_cap must be positive".into()));
        }
        Ok(())
    }
}
