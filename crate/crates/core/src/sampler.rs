//! Few-step sampling: timestep grids split into phases, the deterministic
//! scheduler step, the expert-dispatching pipeline and trajectory recording.

use std::fmt;
use std::io::{self, BufRead, Write};
use std::ops::Range;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{PredictionKind, Predictor};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;

/// How the noise-injection interval of each phase is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMode {
    /// Phase `k` injects noise on `(t_k, 1)`.
    #[default]
    ReverseNested,
    /// Phase `k` injects noise on `(t_k, t_{k-1})`.
    Disjoint,
}

impl fmt::Display for IntervalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntervalMode::ReverseNested => "reverse_nested",
            IntervalMode::Disjoint => "disjoint",
        })
    }
}

impl FromStr for IntervalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reverse_nested" | "nested" => Ok(IntervalMode::ReverseNested),
            "disjoint" => Ok(IntervalMode::Disjoint),
            other => Err(Error::Config(format!("unknown interval mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub index: usize,
    pub steps: Range<usize>,
    pub expert: usize,
    pub noise_interval: (f64, f64),
}

impl Phase {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// One executed step of a pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSpec {
    pub index: usize,
    pub expert: usize,
    /// Conditioning and starting time.
    pub t: f64,
    /// Integration target, possibly retargeted.
    pub t_next: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    grid: Vec<f64>,
    phases: Vec<Phase>,
    mode: IntervalMode,
}

impl PhasePlan {
    /// `phase_steps[k]` is the number of steps in phase `k`; they must add up
    /// to the number of grid intervals. Expert `k` serves phase `k`.
    pub fn new(grid: Vec<f64>, phase_steps: &[usize], mode: IntervalMode) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::invalid("grid needs at least two times"));
        }
        if grid[0] != 1.0 || *grid.last().unwrap() != 0.0 {
            return Err(Error::invalid(format!("grid must run from 1 to 0, got {grid:?}")));
        }
        if grid.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::invalid(format!("grid not strictly decreasing: {grid:?}")));
        }
        let n = grid.len() - 1;
        if phase_steps.is_empty() || phase_steps.contains(&0) {
            return Err(Error::invalid("every phase needs at least one step"));
        }
        if phase_steps.iter().sum::<usize>() != n {
            return Err(Error::invalid(format!(
                "phase steps {phase_steps:?} do not cover {n} grid steps"
            )));
        }
        let mut start = 0;
        let phases = phase_steps
            .iter()
            .enumerate()
            .map(|(k, &len)| {
                let steps = start..start + len;
                start += len;
                let lo = grid[steps.end];
                let hi = match mode {
                    IntervalMode::ReverseNested => 1.0,
                    IntervalMode::Disjoint => grid[steps.start],
                };
                Phase {
                    index: k,
                    steps,
                    expert: k,
                    noise_interval: (lo, hi),
                }
            })
            .collect();
        Ok(Self { grid, phases, mode })
    }

    /// Evenly spaced grid of `steps` intervals split into `phases` phases of
    /// (nearly) equal length.
    pub fn uniform(steps: usize, phases: usize, mode: IntervalMode) -> Result<Self> {
        if steps == 0 || phases == 0 || phases > steps {
            return Err(Error::invalid(format!("{steps} steps in {phases} phases")));
        }
        let mut grid: Vec<f64> = (0..=steps).map(|i| 1.0 - i as f64 / steps as f64).collect();
        grid[steps] = 0.0;
        let split: Vec<usize> = (0..phases)
            .map(|k| steps / phases + usize::from(k < steps % phases))
            .collect();
        Self::new(grid, &split, mode)
    }

    /// The one-step plan `{1, 0}`.
    pub fn one_step() -> Self {
        Self::uniform(1, 1, IntervalMode::ReverseNested).expect("valid plan")
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn mode(&self) -> IntervalMode {
        self.mode
    }

    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn phase(&self, k: usize) -> Result<&Phase> {
        self.phases
            .get(k)
            .ok_or_else(|| Error::invalid(format!("no phase {k} in a {}-phase plan", self.phases.len())))
    }

    pub fn phase_of_step(&self, step: usize) -> Option<&Phase> {
        self.phases.iter().find(|p| p.steps.contains(&step))
    }

    /// Time reached by the last step of phase `k`.
    pub fn boundary_time(&self, k: usize) -> Result<f64> {
        Ok(self.grid[self.phase(k)?.steps.end])
    }

    /// Steps `0..stop`; with `retarget`, the last one integrates to that time.
    pub fn step_specs(&self, stop: usize, retarget: Option<f64>) -> Result<Vec<StepSpec>> {
        if stop > self.steps() {
            return Err(Error::invalid(format!("stop {stop} beyond {} steps", self.steps())));
        }
        let mut specs: Vec<StepSpec> = (0..stop)
            .map(|i| StepSpec {
                index: i,
                expert: self.phase_of_step(i).expect("steps partitioned").expert,
                t: self.grid[i],
                t_next: self.grid[i + 1],
            })
            .collect();
        if let (Some(last), Some(r)) = (specs.last_mut(), retarget) {
            if !(r < last.t) {
                return Err(Error::invalid(format!("retarget {r} not below {}", last.t)));
            }
            last.t_next = r;
        }
        Ok(specs)
    }
}

/// `x_next = x_coeff * x + pred_coeff * pred`.
pub fn step_coeffs(
    schedule: NoiseSchedule,
    kind: PredictionKind,
    t: f64,
    t_next: f64,
) -> Result<(f64, f64)> {
    if !(t > t_next) {
        return Err(Error::invalid(format!("step must decrease time: {t} -> {t_next}")));
    }
    let (a, s) = schedule.coeffs(t)?;
    let (an, sn) = schedule.coeffs(t_next)?;
    Ok(match (kind, schedule) {
        (PredictionKind::Velocity, NoiseSchedule::RectifiedFlow) => (1.0, t_next - t),
        // velocity eps - x0 in a general schedule
        (PredictionKind::Velocity, _) => ((an + sn) / (a + s), sn - (an + sn) * s / (a + s)),
        (PredictionKind::Sample, _) => (sn / s, an - sn * a / s),
    })
}

pub fn scheduler_step<T: Scalar>(
    schedule: NoiseSchedule,
    x: ArrayView2<T>,
    prediction: ArrayView2<T>,
    t: f64,
    t_next: f64,
    kind: PredictionKind,
) -> Result<Array2<T>> {
    if x.dim() != prediction.dim() {
        return Err(Error::shape(format!("{:?} vs {:?}", x.dim(), prediction.dim())));
    }
    let (cx, cp) = step_coeffs(schedule, kind, t, t_next)?;
    let (cx, cp) = (T::of(cx), T::of(cp));
    Ok(Zip::from(&x)
        .and(&prediction)
        .map_collect(|&xv, &p| cx * xv + cp * p))
}

/// Executes `specs` in order from `x`, dispatching each to its expert.
pub fn run_steps<T: Scalar>(
    schedule: NoiseSchedule,
    experts: &[&dyn Predictor<T>],
    specs: &[StepSpec],
    x: Array2<T>,
    mut recorder: Option<&mut Trajectory<T>>,
) -> Result<Array2<T>> {
    let mut x = x;
    if let (Some(r), Some(first)) = (recorder.as_deref_mut(), specs.first()) {
        r.push(first.t, x.clone())?;
    }
    for spec in specs {
        let expert = experts.get(spec.expert).ok_or_else(|| {
            Error::invalid(format!("no expert {} for step {}", spec.expert, spec.index))
        })?;
        let ts = vec![spec.t; x.nrows()];
        let pred = expert.predict(x.view(), &ts)?;
        x = scheduler_step(schedule, x.view(), pred.view(), spec.t, spec.t_next, expert.kind())?;
        if let Some(r) = recorder.as_deref_mut() {
            r.push(spec.t_next, x.clone())?;
        }
    }
    Ok(x)
}

/// Runs steps `0..stop_at_step` (all by default) from noise `eps` at `t = 1`.
pub fn pipeline<T: Scalar>(
    schedule: NoiseSchedule,
    experts: &[&dyn Predictor<T>],
    plan: &PhasePlan,
    eps: ArrayView2<T>,
    stop_at_step: Option<usize>,
    recorder: Option<&mut Trajectory<T>>,
) -> Result<Array2<T>> {
    let specs = plan.step_specs(stop_at_step.unwrap_or(plan.steps()), None)?;
    run_steps(schedule, experts, &specs, eps.to_owned(), recorder)
}

/// Rows per work item of the parallel runners.
pub const PARALLEL_CHUNK: usize = 1024;

/// [`run_steps`] over disjoint row chunks on the rayon pool. Rows never
/// interact, so the output equals the serial result.
pub fn par_run_steps<T: Scalar>(
    schedule: NoiseSchedule,
    experts: &[&dyn Predictor<T>],
    specs: &[StepSpec],
    x: Array2<T>,
) -> Result<Array2<T>> {
    if x.nrows() <= PARALLEL_CHUNK {
        return run_steps(schedule, experts, specs, x, None);
    }
    let chunks: Vec<Array2<T>> = x
        .axis_chunks_iter(Axis(0), PARALLEL_CHUNK)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|c| run_steps(schedule, experts, specs, c.to_owned(), None))
        .collect::<Result<_>>()?;
    let views: Vec<ArrayView2<T>> = chunks.iter().map(|c| c.view()).collect();
    ndarray::concatenate(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))
}

/// Parallel [`pipeline`] without a recorder.
pub fn par_pipeline<T: Scalar>(
    schedule: NoiseSchedule,
    experts: &[&dyn Predictor<T>],
    plan: &PhasePlan,
    eps: ArrayView2<T>,
    stop_at_step: Option<usize>,
) -> Result<Array2<T>> {
    let specs = plan.step_specs(stop_at_step.unwrap_or(plan.steps()), None)?;
    par_run_steps(schedule, experts, &specs, eps.to_owned())
}

/// Number of steps to execute, uniform on `{1, ..., N}`.
pub fn sgts_truncate(plan: &PhasePlan, rng: &mut impl Rng) -> usize {
    sgts_truncate_in(plan.steps(), rng)
}

/// Uniform on `{1, ..., n}`.
pub fn sgts_truncate_in(n: usize, rng: &mut impl Rng) -> usize {
    if n <= 1 {
        1
    } else {
        rng.random_range(1..=n)
    }
}

/// States of a batch at a strictly decreasing sequence of times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    times: Vec<f64>,
    states: Vec<Array2<T>>,
}

impl<T: Scalar> Default for Trajectory<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Trajectory<T> {
    pub fn new() -> Self {
        Self {
            times: Vec::new(),
            states: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, x: Array2<T>) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if !(t < last) {
                return Err(Error::invalid(format!("trajectory time {t} not below {last}")));
            }
            if x.dim() != self.states[0].dim() {
                return Err(Error::shape("trajectory states change shape".to_string()));
            }
        }
        self.times.push(t);
        self.states.push(x);
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Array2<T>] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_samples(&self) -> usize {
        self.states.first().map_or(0, |s| s.nrows())
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.ncols())
    }

    /// State at exactly time `t`, if recorded.
    pub fn at(&self, t: f64) -> Option<&Array2<T>> {
        self.times.iter().position(|&s| s == t).map(|i| &self.states[i])
    }

    /// `sample_id,t,x0[,x1...]`, sample-major, time descending.
    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        let header: Vec<String> = (0..self.dim()).map(|k| format!("x{k}")).collect();
        writeln!(w, "sample_id,t,{}", header.join(","))?;
        for i in 0..self.n_samples() {
            for (t, x) in self.times.iter().zip(&self.states) {
                write!(w, "{i},{t}")?;
                for v in x.row(i) {
                    write!(w, ",{}", v.to_text())?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid("empty trajectory file"))??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[0] != "sample_id" || cols[1] != "t" {
            return Err(Error::invalid(format!("bad trajectory header '{header}'")));
        }
        let dim = cols.len() - 2;
        let mut rows: Vec<(usize, f64, Vec<f64>)> = Vec::new();
        for (no, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let bad = || Error::invalid(format!("bad trajectory row {}: '{line}'", no + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != dim + 2 {
                return Err(bad());
            }
            let id = f[0].parse().map_err(|_| bad())?;
            let t = f[1].parse().map_err(|_| bad())?;
            let x = f[2..]
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            rows.push((id, t, x));
        }
        let times: Vec<f64> = rows
            .iter()
            .take_while(|r| r.0 == rows[0].0)
            .map(|r| r.1)
            .collect();
        if times.is_empty() || !rows.len().is_multiple_of(times.len()) {
            return Err(Error::invalid("ragged trajectory file"));
        }
        let n = rows.len() / times.len();
        let mut states = vec![Array2::zeros((n, dim)); times.len()];
        for (k, (id, t, x)) in rows.into_iter().enumerate() {
            let (i, j) = (k / times.len(), k % times.len());
            if id != i || t != times[j] {
                return Err(Error::invalid("trajectory rows out of order"));
            }
            for (c, v) in x.into_iter().enumerate() {
                states[j][[i, c]] = T::of(v);
            }
        }
        let mut traj = Self::new();
        for (t, s) in times.into_iter().zip(states) {
            traj.push(t, s)?;
        }
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::AnalyticVelocity;
    use crate::prior::ToyPrior;
    use crate::rng::{normal_batch, stream, Stream};
    use ndarray::array;

    const RF: NoiseSchedule = NoiseSchedule::RectifiedFlow;

    struct Constant(Array2<f64>, PredictionKind);

    impl Predictor<f64> for Constant {
        fn kind(&self) -> PredictionKind {
            self.1
        }
        fn predict(&self, x: ArrayView2<f64>, _: &[f64]) -> Result<Array2<f64>> {
            Ok(Array2::from_shape_fn(x.raw_dim(), |(i, j)| self.0[[i % self.0.nrows(), j]]))
        }
    }

    #[test]
    fn plan_validation() {
        let p = PhasePlan::uniform(4, 2, IntervalMode::ReverseNested).unwrap();
        assert_eq!(p.grid(), &[1.0, 0.75, 0.5, 0.25, 0.0]);
        assert_eq!(p.phases()[0].steps, 0..2);
        assert_eq!(p.phases()[1].steps, 2..4);
        assert_eq!(p.phases()[0].noise_interval, (0.5, 1.0));
        assert_eq!(p.phases()[1].noise_interval, (0.0, 1.0));
        let d = PhasePlan::uniform(4, 2, IntervalMode::Disjoint).unwrap();
        assert_eq!(d.phases()[1].noise_interval, (0.0, 0.5));
        assert_eq!(d.boundary_time(0).unwrap(), 0.5);

        assert!(PhasePlan::new(vec![1.0, 0.5, 0.5, 0.0], &[3], IntervalMode::Disjoint).is_err());
        assert!(PhasePlan::new(vec![0.9, 0.0], &[1], IntervalMode::Disjoint).is_err());
        assert!(PhasePlan::new(vec![1.0, 0.5, 0.0], &[1], IntervalMode::Disjoint).is_err());
        assert!(PhasePlan::new(vec![1.0, 0.5, 0.0], &[2, 0], IntervalMode::Disjoint).is_err());
        assert!(PhasePlan::uniform(2, 3, IntervalMode::Disjoint).is_err());
    }

    #[test]
    fn step_specs_retarget() {
        let p = PhasePlan::uniform(4, 2, IntervalMode::ReverseNested).unwrap();
        let s = p.step_specs(3, Some(0.0)).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[2].t, 0.5);
        assert_eq!(s[2].t_next, 0.0);
        assert_eq!(s[2].expert, 1);
        assert_eq!(s[1].expert, 0);
        assert!(p.step_specs(5, None).is_err());
    }

    #[test]
    fn scheduler_step_examples() {
        let x = array![[0.3], [-1.2]];
        let zero = Array2::zeros((2, 1));
        let out = scheduler_step(RF, x.view(), zero.view(), 0.8, 0.3, PredictionKind::Velocity).unwrap();
        assert_eq!(out, x);

        let a: f64 = 1.7;
        let eps = array![[0.4], [-2.0]];
        let v = eps.mapv(|e| e - a);
        let out = scheduler_step(RF, eps.view(), v.view(), 1.0, 0.0, PredictionKind::Velocity).unwrap();
        assert!(out.iter().all(|&o| (o - a).abs() < 1e-15));

        let half = scheduler_step(RF, eps.view(), v.view(), 1.0, 0.5, PredictionKind::Velocity).unwrap();
        let two = scheduler_step(RF, half.view(), v.view(), 0.5, 0.0, PredictionKind::Velocity).unwrap();
        assert_eq!(two, out);

        assert!(scheduler_step(RF, x.view(), zero.view(), 0.3, 0.3, PredictionKind::Velocity).is_err());
    }

    #[test]
    fn sample_and_velocity_steps_agree_on_exact_predictions() {
        for sched in [RF, NoiseSchedule::VariancePreservingCosine] {
            let (x0, e, t, tn) = (0.8, -0.3, 0.7, 0.2);
            let (a, s) = sched.coeffs(t).unwrap();
            let xt = array![[a * x0 + s * e]];
            let (an, sn) = sched.coeffs(tn).unwrap();
            let expect = an * x0 + sn * e;
            let v = scheduler_step(sched, xt.view(), array![[e - x0]].view(), t, tn, PredictionKind::Velocity)
                .unwrap();
            let p = scheduler_step(sched, xt.view(), array![[x0]].view(), t, tn, PredictionKind::Sample)
                .unwrap();
            assert!((v[[0, 0]] - expect).abs() < 1e-14, "{sched}");
            assert!((p[[0, 0]] - expect).abs() < 1e-14, "{sched}");
        }
    }

    #[test]
    fn one_step_exact_for_single_atom() {
        let prior = ToyPrior::uniform_1d(&[0.6]).unwrap();
        let teacher = AnalyticVelocity { prior, schedule: RF };
        let eps: Array2<f64> = normal_batch(&mut stream(3, Stream::Noise), 32, 1);
        let out = pipeline(RF, &[&teacher], &PhasePlan::one_step(), eps.view(), None, None).unwrap();
        assert!(out.iter().all(|&v| (v - 0.6).abs() < 1e-12));
    }

    #[test]
    fn pipeline_requires_experts() {
        let plan = PhasePlan::uniform(4, 2, IntervalMode::ReverseNested).unwrap();
        let c = Constant(array![[0.0]], PredictionKind::Velocity);
        let eps: Array2<f64> = array![[0.1]];
        assert!(pipeline(RF, &[&c], &plan, eps.view(), None, None).is_err());
        assert!(pipeline(RF, &[&c], &plan, eps.view(), Some(2), None).is_ok());
    }

    #[test]
    fn stopping_and_continuing_composes() {
        let plan = PhasePlan::uniform(4, 2, IntervalMode::ReverseNested).unwrap();
        let teacher = AnalyticVelocity {
            prior: ToyPrior::four_atom(),
            schedule: RF,
        };
        let experts: [&dyn Predictor<f64>; 2] = [&teacher, &teacher];
        let eps: Array2<f64> = normal_batch(&mut stream(4, Stream::Noise), 16, 1);
        let mid = pipeline(RF, &experts, &plan, eps.view(), Some(2), None).unwrap();
        let rest = plan.step_specs(4, None).unwrap()[2..].to_vec();
        let fin = run_steps(RF, &experts, &rest, mid, None).unwrap();
        let full = pipeline(RF, &experts, &plan, eps.view(), None, None).unwrap();
        assert_eq!(fin, full);
    }

    #[test]
    fn parallel_pipeline_matches_serial_bitwise() {
        let plan = PhasePlan::uniform(4, 2, IntervalMode::ReverseNested).unwrap();
        let net = crate::net::TimeConditionedNet::<f64>::new(
            crate::net::NetConfig::default().with_width(16),
            2,
        )
        .unwrap();
        let experts: [&dyn Predictor<f64>; 2] = [&net, &net];
        let eps: Array2<f64> = normal_batch(&mut stream(5, Stream::Noise), 3 * PARALLEL_CHUNK + 17, 1);
        let a = pipeline(RF, &experts, &plan, eps.view(), None, None).unwrap();
        let b = par_pipeline(RF, &experts, &plan, eps.view(), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sgts_support() {
        let mut rng = stream(1, Stream::Truncation);
        assert!((0..100).all(|_| sgts_truncate(&PhasePlan::one_step(), &mut rng) == 1));
        let plan = PhasePlan::uniform(4, 2, IntervalMode::ReverseNested).unwrap();
        let mut seen = [false; 5];
        for _ in 0..1000 {
            let j = sgts_truncate(&plan, &mut rng);
            assert!((1..=4).contains(&j));
            seen[j] = true;
        }
        assert!(seen[1..].iter().all(|&s| s));
    }

    #[test]
    fn trajectory_records_and_round_trips() {
        let plan = PhasePlan::uniform(4, 1, IntervalMode::ReverseNested).unwrap();
        let c = Constant(array![[0.5, -1.0]], PredictionKind::Velocity);
        let eps: Array2<f64> = normal_batch(&mut stream(9, Stream::Noise), 3, 2);
        let mut traj = Trajectory::new();
        pipeline(RF, &[&c], &plan, eps.view(), None, Some(&mut traj)).unwrap();
        assert_eq!(traj.times(), &[1.0, 0.75, 0.5, 0.25, 0.0]);
        assert_eq!(traj.at(1.0).unwrap(), &eps);

        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("sample_id,t,x0,x1"));
        assert!(lines.next().unwrap().starts_with("0,1,"));
        assert!(lines.nth(4).unwrap().starts_with("1,1,"));
        let back: Trajectory<f64> = Trajectory::read_csv(&buf[..]).unwrap();
        assert_eq!(back, traj);

        assert!(traj.push(0.0, eps.clone()).is_err());
    }
}
