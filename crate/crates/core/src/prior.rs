//! Finite-atom ground-truth distributions with closed-form posteriors.

use ndarray::{Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: Vec<f64>,
    pub probability: f64,
    /// Isotropic Gaussian width; 0 for a point mass.
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPrior {
    atoms: Vec<Atom>,
}

impl ToyPrior {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        let first = atoms
            .first()
            .ok_or_else(|| Error::invalid("prior needs at least one atom"))?;
        let dim = first.location.len();
        if dim == 0 {
            return Err(Error::invalid("atoms must have a location"));
        }
        let mut total = 0.0;
        for a in &atoms {
            if a.location.len() != dim {
                return Err(Error::invalid("atoms of mixed dimension"));
            }
            if !(a.probability > 0.0) || !a.probability.is_finite() {
                return Err(Error::invalid(format!("probability {} not positive", a.probability)));
            }
            if !(a.width >= 0.0) || !a.width.is_finite() {
                return Err(Error::invalid(format!("width {} invalid", a.width)));
            }
            total += a.probability;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("probabilities sum to {total}")));
        }
        Ok(Self { atoms })
    }

    /// Equal-mass point atoms on the real line.
    pub fn uniform_1d(locations: &[f64]) -> Result<Self> {
        let p = 1.0 / locations.len() as f64;
        Self::new(
            locations
                .iter()
                .map(|&x| Atom {
                    location: vec![x],
                    probability: p,
                    width: 0.0,
                })
                .collect(),
        )
    }

    /// `{-1, 0, 1, 2}` with equal mass.
    pub fn four_atom() -> Self {
        Self::uniform_1d(&[-1.0, 0.0, 1.0, 2.0]).expect("valid prior")
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].location.len()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// The same atoms with locations and widths multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom {
                    location: a.location.iter().map(|l| alpha * l).collect(),
                    probability: a.probability,
                    width: alpha * a.width,
                })
                .collect(),
        }
    }

    /// Smallest distance between two atom locations (infinite for one atom).
    pub fn min_gap(&self) -> f64 {
        let mut gap = f64::INFINITY;
        for (i, a) in self.atoms.iter().enumerate() {
            for b in &self.atoms[i + 1..] {
                gap = gap.min(dist(&a.location, &b.location));
            }
        }
        gap
    }

    pub fn sample<T: Scalar>(&self, rng: &mut impl Rng, n: usize) -> Array2<T> {
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        for mut row in out.rows_mut() {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = self.atoms.len() - 1;
            for (i, a) in self.atoms.iter().enumerate() {
                acc += a.probability;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let atom = &self.atoms[pick];
            for (k, v) in row.iter_mut().enumerate() {
                let z: f64 = if atom.width > 0.0 {
                    rng.sample(StandardNormal)
                } else {
                    0.0
                };
                *v = T::of(atom.location[k] + atom.width * z);
            }
        }
        out
    }

    fn component_variance(&self, atom: &Atom, alpha: f64, sigma: f64) -> f64 {
        alpha * alpha * atom.width * atom.width + sigma * sigma
    }

    /// Posterior atom responsibilities given `x_t`, via log-sum-exp.
    pub fn responsibilities<T: Scalar>(&self, x: ArrayView1<T>, alpha: f64, sigma: f64) -> Vec<f64> {
        let d = x.len() as f64;
        let logits: Vec<f64> = self
            .atoms
            .iter()
            .map(|a| {
                let var = self.component_variance(a, alpha, sigma);
                let sq: f64 = x
                    .iter()
                    .zip(&a.location)
                    .map(|(&xv, &loc)| {
                        let r = xv.as_f64() - alpha * loc;
                        r * r
                    })
                    .sum();
                a.probability.ln() - 0.5 * sq / var - 0.5 * d * var.ln()
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= z);
        w
    }

    /// `E[x0 | x_t]` for one sample.
    pub fn posterior_mean_row<T: Scalar>(&self, x: ArrayView1<T>, alpha: f64, sigma: f64) -> Vec<f64> {
        let r = self.responsibilities(x, alpha, sigma);
        let mut mean = vec![0.0; x.len()];
        for (a, ri) in self.atoms.iter().zip(r) {
            let gain = alpha * a.width * a.width / self.component_variance(a, alpha, sigma);
            for (k, m) in mean.iter_mut().enumerate() {
                let xv = x[k].as_f64();
                *m += ri * (a.location[k] + gain * (xv - alpha * a.location[k]));
            }
        }
        mean
    }

    /// `grad log p_t(x_t)` for one sample.
    pub fn score_row<T: Scalar>(&self, x: ArrayView1<T>, alpha: f64, sigma: f64) -> Vec<f64> {
        let r = self.responsibilities(x, alpha, sigma);
        let mut score = vec![0.0; x.len()];
        for (a, ri) in self.atoms.iter().zip(r) {
            let var = self.component_variance(a, alpha, sigma);
            for (k, s) in score.iter_mut().enumerate() {
                *s += ri * (alpha * a.location[k] - x[k].as_f64()) / var;
            }
        }
        score
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
