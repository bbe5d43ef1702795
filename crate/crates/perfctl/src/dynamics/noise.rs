use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::linalg::{Mat, Vector};

/// Law of the additive disturbance `w_t` (i.i.d. across steps).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseModel {
    Zero { dim: usize },
    /// Independent entries, entry `i` uniform on `[lo[i], hi[i]]`.
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    Discrete { atoms: Vec<Vector>, probs: Vec<f64> },
    /// `(w − E w; w)` with `w` having `assets` i.i.d. uniform `[lo, hi]`
    /// entries. The only kind allowed a nonzero mean.
    StackedUniform { assets: usize, lo: f64, hi: f64 },
}

impl NoiseModel {
    pub fn dim(&self) -> usize {
        match self {
            NoiseModel::Zero { dim } => *dim,
            NoiseModel::UniformBox { lo, .. } => lo.len(),
            NoiseModel::Discrete { atoms, .. } => atoms.first().map_or(0, |a| a.len()),
            NoiseModel::StackedUniform { assets, .. } => 2 * assets,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::Zero { .. } => Ok(()),
            NoiseModel::UniformBox { lo, hi } => {
                ensure(lo.len() == hi.len() && !lo.is_empty(), || "uniform box bounds differ in length".into())?;
                ensure(lo.iter().zip(hi).all(|(l, h)| l <= h), || "uniform box has lo > hi".into())?;
                ensure(self.mean().amax() <= 1e-12, || "uniform box is not centred".into())
            }
            NoiseModel::Discrete { atoms, probs } => {
                ensure(!atoms.is_empty() && atoms.len() == probs.len(), || "atoms and probabilities differ in length".into())?;
                let d = atoms[0].len();
                ensure(atoms.iter().all(|a| a.len() == d), || "atoms differ in dimension".into())?;
                ensure(probs.iter().all(|&p| p >= 0.0), || "negative probability".into())?;
                let total: f64 = probs.iter().sum();
                ensure((total - 1.0).abs() <= 1e-12, || format!("probabilities sum to {total}"))?;
                ensure(self.mean().amax() <= 1e-12, || "discrete noise is not zero-mean".into())
            }
            NoiseModel::StackedUniform { assets, lo, hi } => {
                ensure(*assets >= 1 && lo <= hi, || "stacked uniform needs assets >= 1 and lo <= hi".into())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        match self {
            NoiseModel::Zero { dim } => Vector::zeros(*dim),
            NoiseModel::UniformBox { lo, hi } => {
                Vector::from_iterator(lo.len(), lo.iter().zip(hi).map(|(&l, &h)| uniform(rng, l, h)))
            }
            NoiseModel::Discrete { atoms, probs } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (a, &p) in atoms.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return a.clone();
                    }
                }
                atoms.last().expect("validated nonempty").clone()
            }
            NoiseModel::StackedUniform { assets, lo, hi } => {
                let mid = 0.5 * (lo + hi);
                let mut out = Vector::zeros(2 * assets);
                for i in 0..*assets {
                    let w = uniform(rng, *lo, *hi);
                    out[i] = w - mid;
                    out[assets + i] = w;
                }
                out
            }
        }
    }

    pub fn mean(&self) -> Vector {
        match self {
            NoiseModel::Zero { dim } => Vector::zeros(*dim),
            NoiseModel::UniformBox { lo, hi } => {
                Vector::from_iterator(lo.len(), lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)))
            }
            NoiseModel::Discrete { atoms, probs } => atoms
                .iter()
                .zip(probs)
                .fold(Vector::zeros(self.dim()), |acc, (a, &p)| acc + a * p),
            NoiseModel::StackedUniform { assets, lo, hi } => {
                let mut out = Vector::zeros(2 * assets);
                out.rows_mut(*assets, *assets).fill(0.5 * (lo + hi));
                out
            }
        }
    }

    /// `E[w wᵀ]`.
    pub fn second_moment(&self) -> Mat {
        let mean = self.mean();
        match self {
            NoiseModel::Discrete { atoms, probs } => atoms
                .iter()
                .zip(probs)
                .fold(Mat::zeros(self.dim(), self.dim()), |acc, (a, &p)| acc + a * a.transpose() * p),
            _ => self.covariance() + &mean * mean.transpose(),
        }
    }

    pub fn covariance(&self) -> Mat {
        match self {
            NoiseModel::Zero { dim } => Mat::zeros(*dim, *dim),
            NoiseModel::UniformBox { lo, hi } => Mat::from_diagonal(&Vector::from_iterator(
                lo.len(),
                lo.iter().zip(hi).map(|(l, h)| (h - l).powi(2) / 12.0),
            )),
            NoiseModel::Discrete { .. } => {
                let mean = self.mean();
                self.second_moment() - &mean * mean.transpose()
            }
            NoiseModel::StackedUniform { assets, lo, hi } => {
                let var = (hi - lo).powi(2) / 12.0;
                let n = *assets;
                let mut c = Mat::zeros(2 * n, 2 * n);
                for i in 0..n {
                    for (r, s) in [(i, i), (i, n + i), (n + i, i), (n + i, n + i)] {
                        c[(r, s)] = var;
                    }
                }
                c
            }
        }
    }

    /// Smallest eigenvalue of the covariance, the best available `σ²`.
    pub fn covariance_floor(&self) -> f64 {
        self.covariance().symmetric_eigenvalues().min().max(0.0)
    }

    /// Largest attainable `‖w‖`.
    pub fn norm_bound(&self) -> f64 {
        match self {
            NoiseModel::Zero { .. } => 0.0,
            NoiseModel::UniformBox { lo, hi } => {
                lo.iter().zip(hi).map(|(l, h)| l.abs().max(h.abs()).powi(2)).sum::<f64>().sqrt()
            }
            NoiseModel::Discrete { atoms, .. } => atoms.iter().map(|a| a.norm()).fold(0.0, f64::max),
            NoiseModel::StackedUniform { assets, lo, hi } => {
                let half = 0.5 * (hi - lo);
                let top = lo.abs().max(hi.abs());
                (*assets as f64 * (half * half + top * top)).sqrt()
            }
        }
    }

    /// Finite support with probabilities, when there is one.
    pub fn support(&self) -> Option<Vec<(Vector, f64)>> {
        match self {
            NoiseModel::Zero { dim } => Some(vec![(Vector::zeros(*dim), 1.0)]),
            NoiseModel::Discrete { atoms, probs } => {
                Some(atoms.iter().cloned().zip(probs.iter().copied()).collect())
            }
            NoiseModel::UniformBox { lo, hi } if lo == hi => {
                Some(vec![(Vector::from_row_slice(lo), 1.0)])
            }
            _ => None,
        }
    }

    /// Symmetric `±s` on every coordinate independently: `2^dim` atoms,
    /// covariance `s²I`.
    pub fn rademacher(dim: usize, s: f64) -> Self {
        let n = 1usize << dim;
        let atoms = (0..n)
            .map(|mask| Vector::from_iterator(dim, (0..dim).map(|i| if mask >> i & 1 == 1 { s } else { -s })))
            .collect();
        NoiseModel::Discrete {
            atoms,
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// `±s·e_i` with equal weights: `2·dim` atoms, covariance `(s²/dim)·I`.
    pub fn axis_pairs(dim: usize, s: f64) -> Self {
        let mut atoms = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            for sign in [1.0, -1.0] {
                let mut a = Vector::zeros(dim);
                a[i] = sign * s;
                atoms.push(a);
            }
        }
        NoiseModel::Discrete {
            atoms,
            probs: vec![1.0 / (2 * dim) as f64; 2 * dim],
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedPair, Stream};

    #[test]
    fn rademacher_is_centred_with_scaled_identity_covariance() {
        let n = NoiseModel::rademacher(3, 0.5);
        n.validate().unwrap();
        assert!(n.mean().amax() < 1e-15);
        assert!((n.covariance() - Mat::identity(3, 3) * 0.25).amax() < 1e-15);
        assert!((n.norm_bound() - 0.5 * 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn discrete_probabilities_must_sum_to_one() {
        let bad = NoiseModel::Discrete {
            atoms: vec![Vector::from_row_slice(&[1.0]), Vector::from_row_slice(&[-1.0])],
            probs: vec![0.5, 0.4],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn samples_respect_norm_bound() {
        let models = [
            NoiseModel::UniformBox { lo: vec![-1.0, -0.5], hi: vec![1.0, 0.5] },
            NoiseModel::axis_pairs(3, 2.0),
            NoiseModel::StackedUniform { assets: 3, lo: 0.0, hi: 1.0 },
        ];
        let mut rng = SeedPair::new(3, 0).rng(Stream::Noise);
        for m in &models {
            let bound = m.norm_bound();
            for _ in 0..2000 {
                assert!(m.sample(&mut rng).norm() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn stacked_uniform_has_centred_top_block() {
        let n = NoiseModel::StackedUniform { assets: 2, lo: 0.0, hi: 1.0 };
        let mut rng = SeedPair::new(5, 1).rng(Stream::Noise);
        let w = n.sample(&mut rng);
        assert!((w[0] - (w[2] - 0.5)).abs() < 1e-15);
        assert_eq!(n.mean()[3], 0.5);
        assert!(n.covariance_floor() < 1e-12);
    }
}
