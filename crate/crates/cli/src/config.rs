//! Flat `key = value` run configuration.
//!
//! Every key has a default; config files and `--set` overrides replace
//! values in order (later wins). The resolved map is echoed into reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use pdmd_core::distill::{GradNormalization, Method, TeacherConfig, TeacherKind, TrainerConfig};
use pdmd_core::experiments::OverlapConfig;
use pdmd_core::net::{NetConfig, PredictionKind};
use pdmd_core::sampler::{IntervalMode, PhasePlan};
use pdmd_core::{NoiseSchedule, ToyPrior};

/// `(key, default, meaning)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "0", "run seed"),
    ("out", "runs", "output directory"),
    ("schedule", "rectified_flow", "rectified_flow or vp_cosine"),
    ("prior", "four_atom", "four_atom, 1D locations `a,b,..`, or points `x,y;x,y;..`"),
    ("plot", "true", "write SVG overlays next to trajectory CSVs"),
    ("teacher.checkpoint", "", "teacher checkpoint (default: <out>/teacher.ckpt)"),
    ("teacher.width", "256", "hidden width"),
    ("teacher.layers", "3", "hidden layers"),
    ("teacher.prediction", "velocity", "velocity or sample"),
    ("teacher.steps", "40000", "training steps"),
    ("teacher.batch_size", "256", "batch size"),
    ("teacher.lr", "2e-3", "peak learning rate"),
    ("teacher.final_lr_fraction", "0.02", "cosine decay floor"),
    ("teacher.ema_decay", "0.999", "weight-average decay (0: last iterate)"),
    ("teacher.gate_threshold", "1e-3", "maximum weighted deviation from the analytic velocity"),
    ("distill.method", "phased", "dmd, dmd_sgts, phased or phased_sgts"),
    ("distill.steps", "4", "sampling steps"),
    ("distill.phases", "2", "phases (1 for dmd and dmd_sgts)"),
    ("distill.interval_mode", "reverse_nested", "reverse_nested or disjoint"),
    ("distill.teacher", "learned", "learned or analytic"),
    ("distill.fake_updates", "5", "fake updates per generator update"),
    ("distill.generator_updates", "400", "generator updates per phase"),
    ("distill.batch_size", "256", "batch size"),
    ("distill.fake_lr", "1e-3", "fake learning rate"),
    ("distill.generator_lr", "1e-4", "generator learning rate"),
    ("distill.grad_normalization", "none", "none or per_sample_mean_abs"),
    ("distill.fixed_t", "none", "inject noise at this time only"),
    ("distill.surrogate_loss", "false", "route the pseudo-gradient through a surrogate loss"),
    ("distill.clamp_cap", "1e4", "cap on subinterval loss weights"),
    ("distill.snapshot_every", "0", "generator updates between snapshots (0: none)"),
    ("distill.eval_samples", "10000", "samples per evaluation"),
    ("distill.mode_radius", "0.25", "mode-assignment radius"),
    ("distill.baselines", "false", "also run vanilla and truncated DMD with the same budget"),
    ("distill.start_phase", "0", "resume from this phase using <out>/expert_k.ckpt"),
    ("distill.continue_expert", "false", "keep training the start phase's checkpointed expert"),
    ("fig3.width", "128", "hidden width of the three flows"),
    ("fig3.steps", "20000", "training steps per flow"),
    ("fig3.batch_size", "256", "batch size"),
    ("fig3.lr", "2e-3", "peak learning rate"),
    ("fig3.split", "0.5", "subinterval start"),
    ("fig3.trajectories", "200", "sampled trajectories"),
    ("fig3.euler_steps", "200", "Euler steps over [0, 1]"),
    ("fig3.pool_size", "65536", "intermediate samples drawn from the teacher"),
    ("fig3.pool_steps", "50", "teacher Euler steps down to the split"),
    ("fig3.max_deviation", "0.05", "gate on the subinterval deviation"),
    ("fig3.min_ratio", "3", "gate on biased / subinterval deviation"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{origin}:{}: expected key = value", n + 1))?;
            self.set(k.trim(), v.trim())
                .with_context(|| format!("{origin}:{}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// `KEY=VALUE` from the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("override {kv:?} is not KEY=VALUE"))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => bail!("unknown config key {key:?}"),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("undeclared key {key}"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.get(key);
        raw.parse::<T>()
            .map_err(|e| anyhow!("invalid value {raw:?} for {key}: {e}"))
    }

    fn optional_f64(&self, key: &str) -> Result<Option<f64>> {
        match self.get(key) {
            "" | "none" => Ok(None),
            _ => self.parse(key).map(Some),
        }
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    /// Resolved configuration as written back to disk.
    pub fn to_text(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn out(&self) -> PathBuf {
        PathBuf::from(self.get("out"))
    }

    pub fn plot(&self) -> Result<bool> {
        self.parse("plot")
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        self.parse("schedule")
    }

    pub fn teacher_checkpoint(&self) -> PathBuf {
        match self.get("teacher.checkpoint") {
            "" => self.out().join("teacher.ckpt"),
            p => PathBuf::from(p),
        }
    }

    pub fn prior(&self) -> Result<ToyPrior> {
        let spec = self.get("prior");
        if spec == "four_atom" {
            return Ok(ToyPrior::four_atom());
        }
        let number = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| anyhow!("invalid prior coordinate {s:?}: {e}"))
        };
        if spec.contains(';') {
            let points: Vec<Vec<f64>> = spec
                .split(';')
                .map(|p| p.split(',').map(number).collect::<Result<_>>())
                .collect::<Result<_>>()?;
            let p = 1.0 / points.len() as f64;
            let atoms = points
                .into_iter()
                .map(|location| pdmd_core::Atom {
                    location,
                    probability: p,
                    width: 0.0,
                })
                .collect();
            Ok(ToyPrior::new(atoms)?)
        } else {
            let locations: Vec<f64> = spec.split(',').map(number).collect::<Result<_>>()?;
            Ok(ToyPrior::uniform_1d(&locations)?)
        }
    }

    pub fn teacher_config(&self, dim: usize) -> Result<TeacherConfig> {
        let defaults = TeacherConfig::default();
        let net = NetConfig {
            data_dim: dim,
            ..NetConfig::default()
        }
        .with_width(self.parse("teacher.width")?)
        .with_layers(self.parse("teacher.layers")?)
        .with_prediction(self.parse::<PredictionKind>("teacher.prediction")?);
        Ok(TeacherConfig {
            net,
            optimizer: defaults.optimizer.learning_rate(self.parse("teacher.lr")?),
            steps: self.parse("teacher.steps")?,
            batch_size: self.parse("teacher.batch_size")?,
            final_lr_fraction: self.parse("teacher.final_lr_fraction")?,
            ema_decay: self.parse("teacher.ema_decay")?,
            gate_threshold: self.parse("teacher.gate_threshold")?,
            seed: self.seed()?,
            ..defaults
        })
    }

    pub fn trainer_config(&self) -> Result<TrainerConfig> {
        let defaults = TrainerConfig::default();
        let mode: IntervalMode = self.parse("distill.interval_mode")?;
        let plan = PhasePlan::uniform(self.parse("distill.steps")?, self.parse("distill.phases")?, mode)?;
        let cfg = TrainerConfig {
            method: self.parse::<Method>("distill.method")?,
            schedule: self.schedule()?,
            plan,
            fake_updates_per_generator_update: self.parse("distill.fake_updates")?,
            batch_size: self.parse("distill.batch_size")?,
            fake_optimizer: defaults.fake_optimizer.learning_rate(self.parse("distill.fake_lr")?),
            generator_optimizer: defaults
                .generator_optimizer
                .learning_rate(self.parse("distill.generator_lr")?),
            generator_updates: self.parse("distill.generator_updates")?,
            teacher_kind: self.parse::<TeacherKind>("distill.teacher")?,
            grad_normalization: self.parse::<GradNormalization>("distill.grad_normalization")?,
            surrogate_loss: self.parse("distill.surrogate_loss")?,
            fixed_t: self.optional_f64("distill.fixed_t")?,
            clamp_cap: self.parse("distill.clamp_cap")?,
            snapshot_every: self.parse("distill.snapshot_every")?,
            eval_samples: self.parse("distill.eval_samples")?,
            mode_radius: self.parse("distill.mode_radius")?,
            seed: self.seed()?,
            ..defaults
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn overlap_config(&self, dim: usize) -> Result<OverlapConfig> {
        let defaults = OverlapConfig::default();
        let cfg = OverlapConfig {
            net: NetConfig {
                data_dim: dim,
                ..defaults.net
            }
            .with_width(self.parse("fig3.width")?),
            optimizer: defaults.optimizer.learning_rate(self.parse("fig3.lr")?),
            steps: self.parse("fig3.steps")?,
            batch_size: self.parse("fig3.batch_size")?,
            split: self.parse("fig3.split")?,
            trajectories: self.parse("fig3.trajectories")?,
            euler_steps: self.parse("fig3.euler_steps")?,
            pool_size: self.parse("fig3.pool_size")?,
            pool_steps: self.parse("fig3.pool_steps")?,
            seed: self.seed()?,
            ..defaults
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
