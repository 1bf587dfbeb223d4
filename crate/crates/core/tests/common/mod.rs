//! Independent oracles shared by the property suites and the acceptance run.
#![allow(dead_code)]

use ndarray::Array2;
use pdmd_core::net::{grad_check, NetConfig, PredictionKind, TimeConditionedNet};
use pdmd_core::objectives::{
    analytic_velocity, biased_subinterval_target, flow_target, subinterval_flow_target_unclamped,
    subinterval_x_pred_target, RegressionTarget,
};
use pdmd_core::{NoiseSchedule, ToyPrior};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const SCHEDULES: [NoiseSchedule; 2] =
    [NoiseSchedule::RectifiedFlow, NoiseSchedule::VariancePreservingCosine];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Marginal coefficients written out independently of the library.
pub fn coeffs(schedule: NoiseSchedule, t: f64) -> (f64, f64) {
    match schedule {
        NoiseSchedule::RectifiedFlow => (1.0 - t, t),
        NoiseSchedule::VariancePreservingCosine => {
            let p = std::f64::consts::FRAC_PI_2 * t;
            (p.cos(), p.sin())
        }
    }
}

/// Worst semigroup errors `(alpha, sigma^2)` over `r <= s <= t` on an
/// `n`-point grid of `[0, 1]`.
pub fn semigroup_errors(schedule: NoiseSchedule, n: usize) -> (f64, f64) {
    let grid: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let (mut ea, mut ev) = (0.0f64, 0.0f64);
    for (i, &r) in grid.iter().enumerate() {
        for (j, &s) in grid.iter().enumerate().skip(i) {
            let sr = schedule.bridge_coeffs(r, s).unwrap();
            for &t in &grid[j..] {
                let ts = schedule.bridge_coeffs(s, t).unwrap();
                let tr = schedule.bridge_coeffs(r, t).unwrap();
                ea = ea.max((ts.alpha_ts * sr.alpha_ts - tr.alpha_ts).abs());
                let lhs = tr.sigma_ts * tr.sigma_ts;
                let rhs = ts.sigma_ts * ts.sigma_ts + ts.alpha_ts * ts.alpha_ts * sr.sigma_ts * sr.sigma_ts;
                ev = ev.max((lhs - rhs).abs());
            }
        }
    }
    (ea, ev)
}

pub struct Moments {
    pub mean: f64,
    pub var: f64,
    /// Standard errors of the mean and of the variance.
    pub se_mean: f64,
    pub se_var: f64,
}

pub fn moments(v: &[f64]) -> Moments {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = v.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    Moments {
        mean,
        var,
        se_mean: (var / n).sqrt(),
        se_var: ((m4 - var * var) / n).sqrt(),
    }
}

/// Largest z-score, over mean and variance, between two-stage diffusion
/// `0 -> s -> t` and direct diffusion `0 -> t` of independent prior draws.
pub fn diffusion_consistency_z(schedule: NoiseSchedule, s: f64, t: f64, n: usize, seed: u64) -> f64 {
    let prior = ToyPrior::four_atom();
    let mut g = rng(seed);
    let noise = |g: &mut ChaCha8Rng| Array2::from_shape_simple_fn((n, 1), || normal(g));
    let x0: Array2<f64> = prior.sample(&mut g, n);
    let (e1, e2) = (noise(&mut g), noise(&mut g));
    let xs = schedule.diffuse(x0.view(), e1.view(), s).unwrap();
    let two_stage = schedule.diffuse_from(xs.view(), e2.view(), s, t).unwrap();
    let x0: Array2<f64> = prior.sample(&mut g, n);
    let e3 = noise(&mut g);
    let direct = schedule.diffuse(x0.view(), e3.view(), t).unwrap();
    let a = moments(two_stage.as_slice().unwrap());
    let b = moments(direct.as_slice().unwrap());
    let zm = (a.mean - b.mean).abs() / (a.se_mean.powi(2) + b.se_mean.powi(2)).sqrt();
    let zv = (a.var - b.var).abs() / (a.se_var.powi(2) + b.se_var.powi(2)).sqrt();
    zm.max(zv)
}

/// Posterior over atoms of a point-mass prior given `x_t`.
fn atom_posterior(prior: &ToyPrior, alpha: f64, sigma: f64, x_t: f64) -> Vec<f64> {
    let logits: Vec<f64> = prior
        .atoms()
        .iter()
        .map(|a| {
            assert_eq!(a.width, 0.0, "oracle assumes point masses");
            let r = x_t - alpha * a.location[0];
            a.probability.ln() - 0.5 * r * r / (sigma * sigma)
        })
        .collect();
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|v| v / z).collect()
}

/// `E[x0 | x_t]` and the velocity `E[eps - x0 | x_t]`.
pub fn oracle_posterior(prior: &ToyPrior, schedule: NoiseSchedule, t: f64, x_t: f64) -> (f64, f64) {
    let (alpha, sigma) = coeffs(schedule, t);
    let r = atom_posterior(prior, alpha, sigma, x_t);
    let m0: f64 = r.iter().zip(prior.atoms()).map(|(p, a)| p * a.location[0]).sum();
    (m0, (x_t - alpha * m0) / sigma - m0)
}

/// Exact draws of `(x_s, eps)` consistent with a fixed `x_t`: atom from its
/// posterior, then `x_s` from the Gaussian bridge posterior.
pub fn conditional_pairs(
    prior: &ToyPrior,
    schedule: NoiseSchedule,
    s: f64,
    t: f64,
    x_t: f64,
    n: usize,
    g: &mut impl Rng,
) -> (Array2<f64>, Array2<f64>) {
    let (alpha_s, sigma_s) = coeffs(schedule, s);
    let (alpha_t, sigma_t) = coeffs(schedule, t);
    let a_ts = alpha_t / alpha_s;
    let s_ts = (sigma_t * sigma_t - a_ts * a_ts * sigma_s * sigma_s).sqrt();
    let post = atom_posterior(prior, alpha_t, sigma_t, x_t);
    let precision = 1.0 / (sigma_s * sigma_s) + a_ts * a_ts / (s_ts * s_ts);
    let sd = precision.recip().sqrt();
    let mut xs = Array2::zeros((n, 1));
    let mut eps = Array2::zeros((n, 1));
    for i in 0..n {
        let u: f64 = g.random();
        let mut k = 0;
        let mut acc = post[0];
        while u > acc && k + 1 < post.len() {
            k += 1;
            acc += post[k];
        }
        let a = prior.atoms()[k].location[0];
        let mean = (alpha_s * a / (sigma_s * sigma_s) + a_ts * x_t / (s_ts * s_ts)) / precision;
        let x = mean + sd * normal(g);
        xs[[i, 0]] = x;
        eps[[i, 0]] = (x_t - a_ts * x) / s_ts;
    }
    (xs, eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Subinterval,
    SubintervalSample,
    Biased,
}

/// Z-score of the conditional mean of a target against the oracle
/// (velocity, or posterior mean for the sample target), with `n` draws.
pub fn target_z(
    kind: TargetKind,
    schedule: NoiseSchedule,
    s: f64,
    t: f64,
    x_t: f64,
    n: usize,
    seed: u64,
) -> f64 {
    let prior = ToyPrior::four_atom();
    let mut g = rng(seed);
    let chunk = 100_000.min(n);
    let mut values = Vec::with_capacity(n);
    while values.len() < n {
        let m = chunk.min(n - values.len());
        let (xs, eps) = conditional_pairs(&prior, schedule, s, t, x_t, m, &mut g);
        let ts = vec![t; m];
        let target: RegressionTarget<f64> = match kind {
            TargetKind::Subinterval => {
                subinterval_flow_target_unclamped(schedule, xs.view(), eps.view(), s, &ts).unwrap()
            }
            TargetKind::SubintervalSample => {
                subinterval_x_pred_target(schedule, xs.view(), eps.view(), s, &ts).unwrap()
            }
            TargetKind::Biased => biased_subinterval_target(xs.view(), eps.view()).unwrap(),
        };
        values.extend(target.target.iter().cloned());
    }
    let (m0, v) = oracle_posterior(&prior, schedule, t, x_t);
    let expected = if kind == TargetKind::SubintervalSample { m0 } else { v };
    let mo = moments(&values);
    (mo.mean - expected) / mo.se_mean
}

/// The 20-point `(x_t, t)` grid of the unbiasedness checks, with `s = 0.5`.
pub fn unbiasedness_grid() -> Vec<(f64, f64)> {
    let mut g = Vec::new();
    for t in [0.6, 0.7, 0.8, 0.9] {
        for x in [-1.0, -0.25, 0.5, 1.25, 2.0] {
            g.push((x, t));
        }
    }
    g
}

/// Z-scores of the difference between flow-matching (noisy target) and
/// explicit (analytic velocity) parameter gradients of one fixed network,
/// projected on the mean explicit gradient and on `extra` random directions.
/// Also returns the z-score of the mean explicit gradient along its own
/// direction, to show the comparison is not vacuous.
pub fn dsm_esm_z(samples: usize, batch: usize, extra: usize, seed: u64) -> (Vec<f64>, f64) {
    let prior = ToyPrior::four_atom();
    let schedule = NoiseSchedule::RectifiedFlow;
    let net = TimeConditionedNet::<f64>::new(NetConfig::default().with_width(32).with_layers(2), seed).unwrap();
    let mut g = rng(seed);
    let mut diffs: Vec<Vec<f64>> = Vec::new();
    let mut explicit: Vec<Vec<f64>> = Vec::new();
    for _ in 0..samples / batch {
        let x0: Array2<f64> = prior.sample(&mut g, batch);
        let eps = Array2::from_shape_simple_fn((batch, 1), || normal(&mut g));
        let ts: Vec<f64> = (0..batch).map(|_| 0.02 + 0.96 * g.random::<f64>()).collect();
        let x_t = schedule.diffuse_from_each(x0.view(), eps.view(), 0.0, &ts).unwrap();
        let (pred, cache) = net.forward_cached(x_t.view(), &ts).unwrap();
        let dsm = flow_target(x0.view(), eps.view()).unwrap();
        let esm = RegressionTarget::plain(analytic_velocity(&prior, schedule, x_t.view(), &ts).unwrap());
        let (_, up_d) = dsm.loss_and_grad(pred.view()).unwrap();
        let (_, up_e) = esm.loss_and_grad(pred.view()).unwrap();
        let gd: Vec<f64> = net.backward(&cache, up_d.view()).unwrap().0.values().collect();
        let ge: Vec<f64> = net.backward(&cache, up_e.view()).unwrap().0.values().collect();
        diffs.push(gd.iter().zip(&ge).map(|(a, b)| a - b).collect());
        explicit.push(ge);
    }
    let p = diffs[0].len();
    let mean_e: Vec<f64> = (0..p).map(|i| explicit.iter().map(|v| v[i]).sum::<f64>() / explicit.len() as f64).collect();
    let unit = |v: Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let mut dirs = vec![unit(mean_e.clone())];
    for _ in 0..extra {
        dirs.push(unit((0..p).map(|_| normal(&mut g)).collect()));
    }
    let project = |rows: &[Vec<f64>], d: &[f64]| -> Vec<f64> {
        rows.iter().map(|r| r.iter().zip(d).map(|(a, b)| a * b).sum()).collect()
    };
    let zs = dirs
        .iter()
        .map(|d| {
            let m = moments(&project(&diffs, d));
            m.mean / m.se_mean
        })
        .collect();
    let e = moments(&project(&explicit, &dirs[0]));
    (zs, e.mean / e.se_mean)
}

/// Worst gradient-check error over `archs` random architectures.
pub fn grad_check_worst(archs: usize, seed: u64) -> f64 {
    let mut g = rng(seed);
    let mut worst = 0.0f64;
    for k in 0..archs {
        let cfg = NetConfig {
            data_dim: g.random_range(1..=3),
            hidden_width: g.random_range(2..=24),
            hidden_layers: g.random_range(1..=4),
            time_features: 2 * g.random_range(1..=8),
            prediction: if k % 2 == 0 { PredictionKind::Velocity } else { PredictionKind::Sample },
        };
        let net = TimeConditionedNet::<f64>::new(cfg, seed + k as u64).unwrap();
        let n = g.random_range(1..=6);
        let x = Array2::from_shape_simple_fn((n, cfg.data_dim), || normal(&mut g));
        let t: Vec<f64> = (0..n).map(|_| g.random::<f64>()).collect();
        worst = worst.max(grad_check(&net, x.view(), &t, seed + 100 + k as u64).unwrap());
    }
    worst
}
