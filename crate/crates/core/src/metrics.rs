//! Distribution and trajectory diagnostics.

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::ToyPrior;
use crate::rng::{normal_batch, stream, Stream};
use crate::sampler::Trajectory;
use crate::scalar::Scalar;

/// Projections used for sliced W1 in more than one dimension.
pub const SLICED_PROJECTIONS: usize = 64;
/// Mode assignment radius for unit-spaced atoms.
pub const DEFAULT_MODE_RADIUS: f64 = 0.25;
/// Pairs beyond this many samples are subsampled for 2D diversity.
const DIVERSITY_CAP: usize = 2000;

fn sorted(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite {
            context: "wasserstein1".into(),
            detail: "NaN sample".into(),
        });
    }
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Exact 1D Wasserstein-1 distance between two empirical distributions:
/// mean absolute difference of sorted samples for equal sizes, the integral
/// of the CDF gap otherwise.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("wasserstein1 of an empty sample"));
    }
    let (a, b) = (sorted(a)?, sorted(b)?);
    if a.len() == b.len() {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        prev = next;
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
    }
    Ok(total)
}

/// Mean 1D W1 over `projections` seeded random directions.
pub fn sliced_wasserstein1<T: Scalar>(
    a: ArrayView2<T>,
    b: ArrayView2<T>,
    projections: usize,
    seed: u64,
) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::shape(format!("{} vs {} columns", a.ncols(), b.ncols())));
    }
    let dirs = normal_batch::<f64>(&mut stream(seed, Stream::Projection), projections, a.ncols());
    let project = |x: ArrayView2<T>, d: &Array1<f64>| -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| r.iter().zip(d).map(|(v, w)| v.as_f64() * w).sum())
            .collect()
    };
    let mut total = 0.0;
    for row in dirs.rows() {
        let d = &row.to_owned() / row.dot(&row).sqrt();
        total += wasserstein1(&project(a, &d), &project(b, &d))?;
    }
    Ok(total / projections as f64)
}

/// Exact W1 in 1D, sliced W1 otherwise.
pub fn distance<T: Scalar>(a: ArrayView2<T>, b: ArrayView2<T>) -> Result<f64> {
    if a.ncols() == 1 && b.ncols() == 1 {
        let col = |x: ArrayView2<T>| x.iter().map(|v| v.as_f64()).collect::<Vec<_>>();
        wasserstein1(&col(a), &col(b))
    } else {
        sliced_wasserstein1(a, b, SLICED_PROJECTIONS, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCoverage {
    /// Fraction of samples within the radius of each atom.
    pub masses: Vec<f64>,
    pub unassigned: f64,
}

impl ModeCoverage {
    pub fn min_mass(&self) -> f64 {
        self.masses.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

pub fn mode_coverage<T: Scalar>(samples: ArrayView2<T>, prior: &ToyPrior, radius: f64) -> Result<ModeCoverage> {
    if samples.nrows() == 0 {
        return Err(Error::invalid("mode coverage of an empty sample"));
    }
    if samples.ncols() != prior.dim() {
        return Err(Error::shape(format!("{} columns for a {}-d prior", samples.ncols(), prior.dim())));
    }
    if !(radius > 0.0) || 2.0 * radius >= prior.min_gap() {
        return Err(Error::invalid(format!(
            "radius {radius} makes assignment regions overlap (atom gap {})",
            prior.min_gap()
        )));
    }
    let mut counts = vec![0usize; prior.len()];
    let mut none = 0usize;
    for row in samples.rows() {
        let hit = prior.atoms().iter().position(|a| {
            let d2: f64 = row
                .iter()
                .zip(&a.location)
                .map(|(v, l)| (v.as_f64() - l).powi(2))
                .sum();
            d2 <= radius * radius
        });
        match hit {
            Some(i) => counts[i] += 1,
            None => none += 1,
        }
    }
    let n = samples.nrows() as f64;
    Ok(ModeCoverage {
        masses: counts.iter().map(|&c| c as f64 / n).collect(),
        unassigned: none as f64 / n,
    })
}

/// Mean pairwise Euclidean distance; exact in 1D, first 2000 samples
/// otherwise.
pub fn diversity<T: Scalar>(samples: ArrayView2<T>) -> f64 {
    let n = samples.nrows();
    if n < 2 {
        return 0.0;
    }
    if samples.ncols() == 1 {
        let mut v: Vec<f64> = samples.iter().map(|x| x.as_f64()).collect();
        v.sort_by(f64::total_cmp);
        let sum: f64 = v
            .iter()
            .enumerate()
            .map(|(k, x)| x * (2.0 * k as f64 - n as f64 + 1.0))
            .sum();
        return sum / (n as f64 * (n as f64 - 1.0) / 2.0);
    }
    let m = n.min(DIVERSITY_CAP);
    let rows: Vec<Vec<f64>> = samples
        .rows()
        .into_iter()
        .take(m)
        .map(|r| r.iter().map(|x| x.as_f64()).collect())
        .collect();
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            total += rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
        }
    }
    total / (m as f64 * (m as f64 - 1.0) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub w1: f64,
    pub mode_masses: Vec<f64>,
    pub unassigned: f64,
    pub diversity: f64,
    pub n_samples: usize,
}

impl DistributionReport {
    /// Compares `samples` against `reference` draws and the atoms of `prior`.
    pub fn evaluate<T: Scalar>(
        samples: ArrayView2<T>,
        reference: ArrayView2<T>,
        prior: &ToyPrior,
        radius: f64,
    ) -> Result<Self> {
        let cov = mode_coverage(samples, prior, radius)?;
        Ok(Self {
            w1: distance(samples, reference)?,
            mode_masses: cov.masses,
            unassigned: cov.unassigned,
            diversity: diversity(samples),
            n_samples: samples.nrows(),
        })
    }

    pub fn min_mode_mass(&self) -> f64 {
        self.mode_masses.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Largest mean absolute gap between matched samples over the recorded
/// times inside `[lo, hi]`.
pub fn trajectory_deviation<T: Scalar>(
    a: &Trajectory<T>,
    b: &Trajectory<T>,
    window: (f64, f64),
) -> Result<f64> {
    let (lo, hi) = window;
    let pick = |t: &Trajectory<T>| -> Vec<usize> {
        (0..t.len()).filter(|&i| t.times()[i] >= lo && t.times()[i] <= hi).collect()
    };
    let (ia, ib) = (pick(a), pick(b));
    let ta: Vec<f64> = ia.iter().map(|&i| a.times()[i]).collect();
    let tb: Vec<f64> = ib.iter().map(|&i| b.times()[i]).collect();
    if ta != tb || ta.is_empty() {
        return Err(Error::invalid(format!(
            "trajectory grids differ on [{lo}, {hi}] ({} vs {} times)",
            ta.len(),
            tb.len()
        )));
    }
    if a.n_samples() != b.n_samples() || a.dim() != b.dim() {
        return Err(Error::shape("trajectories hold different samples".to_string()));
    }
    let mut worst = 0.0f64;
    for (&i, &j) in ia.iter().zip(&ib) {
        let (xa, xb) = (&a.states()[i], &b.states()[j]);
        let gap = xa
            .iter()
            .zip(xb.iter())
            .map(|(p, q)| (p.as_f64() - q.as_f64()).abs())
            .sum::<f64>()
            / xa.len() as f64;
        worst = worst.max(gap);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn w1_examples() {
        assert_eq!(wasserstein1(&[0.3, -1.0], &[-1.0, 0.3]).unwrap(), 0.0);
        assert_eq!(wasserstein1(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein1(&[0.0, 0.0, 1.0, 1.0], &[0.0, 1.0, 1.0, 2.0]).unwrap(), 0.5);
        assert!(wasserstein1(&[], &[1.0]).is_err());
    }

    #[test]
    fn w1_unequal_sizes_matches_replication() {
        let a = [0.0, 1.0, 3.0];
        let b = [0.5, 2.0];
        // replicate to a common size of 6
        let ar: Vec<f64> = a.iter().flat_map(|&x| [x, x]).collect();
        let br: Vec<f64> = b.iter().flat_map(|&x| [x, x, x]).collect();
        let direct = wasserstein1(&a, &b).unwrap();
        let rep = wasserstein1(&ar, &br).unwrap();
        assert!((direct - rep).abs() < 1e-14, "{direct} vs {rep}");
    }

    #[test]
    fn mode_coverage_examples() {
        let prior = ToyPrior::four_atom();
        let x: Array2<f64> = array![[-1.0], [0.0], [1.0], [2.0]];
        let c = mode_coverage(x.view(), &prior, 0.25).unwrap();
        assert_eq!(c.masses, vec![0.25; 4]);
        assert_eq!(c.unassigned, 0.0);
        let x: Array2<f64> = Array2::from_elem((10, 1), 2.0);
        let c = mode_coverage(x.view(), &prior, 0.25).unwrap();
        assert_eq!(c.masses, vec![0.0, 0.0, 0.0, 1.0]);
        let x: Array2<f64> = array![[0.5], [3.0]];
        let c = mode_coverage(x.view(), &prior, 0.25).unwrap();
        assert_eq!(c.unassigned, 1.0);
        assert!(mode_coverage(x.view(), &prior, 0.5).is_err());
    }

    #[test]
    fn diversity_matches_pairwise_loop() {
        let x: Array2<f64> = array![[0.0], [1.0], [3.0]];
        assert!((diversity(x.view()) - 2.0).abs() < 1e-15);
        let y: Array2<f64> = array![[0.0, 0.0], [3.0, 4.0]];
        assert_eq!(diversity(y.view()), 5.0);
    }

    #[test]
    fn sliced_w1_of_a_shift() {
        let a: Array2<f64> = Array2::zeros((4, 2));
        let b: Array2<f64> = Array2::from_elem((4, 2), 0.0) + array![1.0, 0.0];
        let d = sliced_wasserstein1(a.view(), b.view(), 64, 0).unwrap();
        // mean |cos| of a uniform direction is 2/pi
        assert!(d > 0.4 && d < 0.9, "{d}");
        assert_eq!(sliced_wasserstein1(a.view(), a.view(), 64, 0).unwrap(), 0.0);
    }

    #[test]
    fn deviation_examples() {
        let mut a = Trajectory::new();
        let mut b = Trajectory::new();
        for (k, t) in [1.0, 0.75, 0.5, 0.25].into_iter().enumerate() {
            let x: Array2<f64> = array![[k as f64], [-(k as f64)]];
            a.push(t, x.clone()).unwrap();
            b.push(t, x + 0.3).unwrap();
        }
        assert_eq!(trajectory_deviation(&a, &a, (0.5, 1.0)).unwrap(), 0.0);
        assert!((trajectory_deviation(&a, &b, (0.5, 1.0)).unwrap() - 0.3).abs() < 1e-15);
        let mut c = Trajectory::new();
        c.push(1.0, array![[0.0], [0.0]]).unwrap();
        assert!(trajectory_deviation(&a, &c, (0.5, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn w1_symmetric_and_triangle(
            a in prop::collection::vec(-5.0f64..5.0, 1..40),
            b in prop::collection::vec(-5.0f64..5.0, 1..40),
            c in prop::collection::vec(-5.0f64..5.0, 1..40),
        ) {
            let ab = wasserstein1(&a, &b).unwrap();
            prop_assert!((ab - wasserstein1(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!(ab >= 0.0);
            let ac = wasserstein1(&a, &c).unwrap();
            let cb = wasserstein1(&c, &b).unwrap();
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn mode_masses_follow_relabeling(xs in prop::collection::vec(-1.5f64..2.5, 1..60), rot in 0usize..4) {
            let locs = [-1.0, 0.0, 1.0, 2.0];
            let relabeled: Vec<f64> = (0..4).map(|i| locs[(i + rot) % 4]).collect();
            let p = ToyPrior::uniform_1d(&locs).unwrap();
            let q = ToyPrior::uniform_1d(&relabeled).unwrap();
            let x = Array2::from_shape_vec((xs.len(), 1), xs).unwrap();
            let cp = mode_coverage(x.view(), &p, 0.25).unwrap();
            let cq = mode_coverage(x.view(), &q, 0.25).unwrap();
            for i in 0..4 {
                prop_assert_eq!(cq.masses[i], cp.masses[(i + rot) % 4]);
            }
            let total: f64 = cp.masses.iter().sum::<f64>() + cp.unassigned;
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
