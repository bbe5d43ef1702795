use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{ensure, Result};
use crate::linalg::{frob_inner, spectral_norm, Mat};

/// Policy-dependent law of the transition perturbation `Δ_t`, with the
/// declared per-step sensitivity `eps[t]` and support bound `xi[t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationMap {
    pub kind: PerturbationKind,
    pub eps: Vec<f64>,
    pub xi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PerturbationKind {
    Null,
    ScaledFactor(ScaledFactor),
    StockVolatility(VolatilityLaw),
}

/// `Δ_t = a_t · tanh(⟨P, M⟩ + offset) · U` with `U` drawn from a finite,
/// zero-mean set of matrices. The scalar factor is 1-Lipschitz in `M` when
/// `‖P‖_F = 1`, so coupling the two laws through the same `U` bounds their
/// Wasserstein distance by `a_t·E‖U‖_F·‖M − M′‖_F`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledFactor {
    pub gains: Vec<f64>,
    pub direction: Mat,
    pub offset: f64,
    pub atoms: Vec<Mat>,
    pub probs: Vec<f64>,
}

impl ScaledFactor {
    fn scale(&self, t: usize, deploy: &Mat) -> f64 {
        self.gains[t] * (frob_inner(&self.direction, deploy) + self.offset).tanh()
    }
}

/// Random daily log-volatilities `v = clip(N(mean_t, std²), ±clip)` per
/// asset, turned into gross returns `exp((r − v²/2)/T + v/√T)` that the
/// deployed portfolio rows mix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolatilityLaw {
    pub assets: usize,
    pub days: usize,
    pub rate: f64,
    pub vol_std: f64,
    pub vol_clip: f64,
    /// Gaussian mean per step; `-inf` marks a degenerate step where the
    /// volatility sits at the lower clip.
    pub log_means: Vec<f64>,
    /// `(E[e], E[e²])` of the gross return per step.
    moments: Vec<(f64, f64)>,
}

impl VolatilityLaw {
    pub fn new(assets: usize, days: usize, rate: f64, vol_std: f64, vol_clip: f64, log_means: Vec<f64>) -> Result<Self> {
        ensure(assets >= 1 && days >= 1, || "volatility law needs assets and days".into())?;
        ensure(vol_std >= 0.0 && vol_clip > 0.0, || "volatility std and clip must be positive".into())?;
        let rule = GaussLegendre::new(NonZeroUsize::new(64).expect("nonzero"));
        let mut law = VolatilityLaw {
            assets,
            days,
            rate,
            vol_std,
            vol_clip,
            log_means,
            moments: Vec::new(),
        };
        law.moments = law
            .log_means
            .iter()
            .map(|&mu| (law.clipped_moment(mu, 1.0, &rule), law.clipped_moment(mu, 2.0, &rule)))
            .collect();
        Ok(law)
    }

    /// `(r − v²/2)/T + v/√T`.
    pub fn exponent(&self, v: f64) -> f64 {
        let t = self.days as f64;
        (self.rate - 0.5 * v * v) / t + v / t.sqrt()
    }

    /// Smallest and largest gross return over the clip interval.
    pub fn return_range(&self) -> (f64, f64) {
        let c = self.vol_clip;
        let peak = c.min((self.days as f64).sqrt());
        (self.exponent(-c).exp(), self.exponent(peak).exp())
    }

    pub fn is_degenerate(&self, t: usize) -> bool {
        self.log_means[t] == f64::NEG_INFINITY || self.vol_std == 0.0
    }

    pub fn draw_volatility<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let raw = if self.log_means[t] == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.log_means[t] + self.vol_std * z
        };
        raw.clamp(-self.vol_clip, self.vol_clip)
    }

    /// `E[exp(k·g(v))]` for the clipped Gaussian `v`.
    fn clipped_moment(&self, mu: f64, k: f64, rule: &GaussLegendre) -> f64 {
        let c = self.vol_clip;
        let f = |v: f64| (k * self.exponent(v)).exp();
        if mu == f64::NEG_INFINITY {
            return f(-c);
        }
        if self.vol_std == 0.0 {
            return f(mu.clamp(-c, c));
        }
        let s = self.vol_std;
        let cdf = |x: f64| 0.5 * erfc(-x / std::f64::consts::SQRT_2);
        let lower = cdf((-c - mu) / s);
        let upper = cdf(-(c - mu) / s);
        let density = |v: f64| (-0.5 * ((v - mu) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
        // the Gaussian mass inside the clip interval lies within 12 std of the mean
        let (lo, hi) = ((mu - 12.0 * s).max(-c), (mu + 12.0 * s).min(c));
        let interior = if hi <= lo {
            0.0
        } else if hi - lo < 1e-9 {
            (1.0 - lower - upper) * f(0.5 * (lo + hi))
        } else {
            rule.integrate(lo, hi, |v| f(v) * density(v))
        };
        lower * f(-c) + upper * f(c) + interior
    }

    /// `E[e]` at step `t`.
    pub fn mean_return(&self, t: usize) -> f64 {
        self.moments[t].0
    }

    pub fn return_variance(&self, t: usize) -> f64 {
        let (m1, m2) = self.moments[t];
        (m2 - m1 * m1).max(0.0)
    }

    /// Portfolio rows `m` from the deployed stacked policy.
    fn weights(&self, deploy: &Mat) -> Mat {
        deploy.view((0, 0), (self.assets, self.assets)).clone_owned()
    }

    /// Block matrix with `E[V] − I`, `V − E[V]` on top and `V − I` bottom-right.
    pub fn assemble(&self, t: usize, weights: &Mat, gross: &[f64]) -> Mat {
        let n = self.assets;
        let mean = self.mean_return(t);
        let mut delta = Mat::zeros(2 * n, 2 * n);
        for l in 0..n {
            let row = weights.row(l);
            let v: f64 = row.iter().zip(gross).map(|(m, e)| m * e).sum();
            let ev = row.sum() * mean;
            delta[(l, l)] = ev - 1.0;
            delta[(l, n + l)] = v - ev;
            delta[(n + l, n + l)] = v - 1.0;
        }
        delta
    }

    pub fn sample<R: Rng + ?Sized>(&self, t: usize, deploy: &Mat, rng: &mut R) -> Mat {
        let gross: Vec<f64> = (0..self.assets).map(|_| self.exponent(self.draw_volatility(t, rng)).exp()).collect();
        self.assemble(t, &self.weights(deploy), &gross)
    }

    fn mean_delta(&self, t: usize, deploy: &Mat) -> Mat {
        let n = self.assets;
        let w = self.weights(deploy);
        let mut d = Mat::zeros(2 * n, 2 * n);
        for l in 0..n {
            let ev = w.row(l).sum() * self.mean_return(t) - 1.0;
            d[(l, l)] = ev;
            d[(n + l, n + l)] = ev;
        }
        d
    }

    fn centred_second_moment(&self, t: usize, deploy: &Mat, s: &Mat) -> Mat {
        let n = self.assets;
        let w = self.weights(deploy);
        let cov = &w * w.transpose() * self.return_variance(t);
        let mut out = Mat::zeros(2 * n, 2 * n);
        for l in 0..n {
            for k in 0..n {
                let c = cov[(l, k)] * s[(n + l, n + k)];
                for r in [l, n + l] {
                    for q in [k, n + k] {
                        out[(r, q)] += c;
                    }
                }
            }
        }
        out
    }

    fn centred_adjoint_moment(&self, t: usize, deploy: &Mat, lam: &Mat) -> Mat {
        let n = self.assets;
        let w = self.weights(deploy);
        let cov = &w * w.transpose() * self.return_variance(t);
        let mut out = Mat::zeros(2 * n, 2 * n);
        for l in 0..n {
            for k in 0..n {
                let inner = lam[(l, k)] + lam[(l, n + k)] + lam[(n + l, k)] + lam[(n + l, n + k)];
                out[(n + l, n + k)] += cov[(l, k)] * inner;
            }
        }
        out
    }

    /// Valid bound on `‖Δ_t‖` for portfolio rows in the unit simplex.
    pub fn support_bound(&self) -> f64 {
        let (lo, hi) = self.return_range();
        let off = (lo - 1.0).abs().max((hi - 1.0).abs());
        (2.0 * off * off + (hi - lo).powi(2)).sqrt()
    }
}

impl PerturbationMap {
    pub fn null(horizon: usize) -> Self {
        PerturbationMap {
            kind: PerturbationKind::Null,
            eps: vec![0.0; horizon],
            xi: vec![0.0; horizon],
        }
    }

    pub fn scaled_factor(sf: ScaledFactor) -> Result<Self> {
        ensure(!sf.atoms.is_empty() && sf.atoms.len() == sf.probs.len(), || "factor atoms and probabilities differ".into())?;
        ensure(sf.gains.iter().all(|&a| a >= 0.0), || "factor gains must be nonnegative".into())?;
        let total: f64 = sf.probs.iter().sum();
        ensure((total - 1.0).abs() <= 1e-12, || format!("factor probabilities sum to {total}"))?;
        ensure((sf.direction.norm() - 1.0).abs() <= 1e-12, || "factor direction must have unit Frobenius norm".into())?;
        let mean = sf.atoms.iter().zip(&sf.probs).fold(Mat::zeros(sf.atoms[0].nrows(), sf.atoms[0].ncols()), |acc, (u, &p)| acc + u * p);
        ensure(mean.amax() <= 1e-12, || "factor atoms are not zero-mean".into())?;
        let mean_frob: f64 = sf.atoms.iter().zip(&sf.probs).map(|(u, p)| u.norm() * p).sum();
        let max_spec = sf.atoms.iter().map(spectral_norm).fold(0.0, f64::max);
        let eps = sf.gains.iter().map(|a| a * mean_frob).collect();
        let xi = sf.gains.iter().map(|a| a * max_spec).collect();
        Ok(PerturbationMap {
            kind: PerturbationKind::ScaledFactor(sf),
            eps,
            xi,
        })
    }

    pub fn volatility(law: VolatilityLaw, eps: Vec<f64>) -> Result<Self> {
        ensure(eps.len() == law.log_means.len(), || "schedule length differs from the law's horizon".into())?;
        let xi = vec![law.support_bound(); eps.len()];
        Ok(PerturbationMap {
            kind: PerturbationKind::StockVolatility(law),
            eps,
            xi,
        })
    }

    pub fn horizon(&self) -> usize {
        self.eps.len()
    }

    /// Same family with every sensitivity multiplied by `factor`; a zero
    /// factor collapses to the null map.
    pub fn scale_sensitivity(&self, factor: f64) -> Self {
        if factor == 0.0 {
            return PerturbationMap::null(self.horizon());
        }
        let mut out = self.clone();
        if let PerturbationKind::ScaledFactor(sf) = &mut out.kind {
            sf.gains.iter_mut().for_each(|a| *a *= factor);
            out.xi.iter_mut().for_each(|x| *x *= factor);
        }
        out.eps.iter_mut().for_each(|e| *e *= factor);
        out
    }

    pub fn is_zero_mean(&self) -> bool {
        !matches!(self.kind, PerturbationKind::StockVolatility(_))
    }

    pub fn sample<R: Rng + ?Sized>(&self, t: usize, deploy: &Mat, d_x: usize, rng: &mut R) -> Mat {
        match &self.kind {
            PerturbationKind::Null => Mat::zeros(d_x, d_x),
            PerturbationKind::ScaledFactor(sf) => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut pick = sf.atoms.len() - 1;
                for (i, &p) in sf.probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                &sf.atoms[pick] * sf.scale(t, deploy)
            }
            PerturbationKind::StockVolatility(law) => law.sample(t, deploy, rng),
        }
    }

    /// Finite support of `Δ_t` under the deployed policy, when there is one.
    pub fn support(&self, t: usize, deploy: &Mat, d_x: usize) -> Option<Vec<(Mat, f64)>> {
        match &self.kind {
            PerturbationKind::Null => Some(vec![(Mat::zeros(d_x, d_x), 1.0)]),
            PerturbationKind::ScaledFactor(sf) => {
                let s = sf.scale(t, deploy);
                Some(sf.atoms.iter().zip(&sf.probs).map(|(u, &p)| (u * s, p)).collect())
            }
            PerturbationKind::StockVolatility(law) if law.is_degenerate(t) => {
                let e = law.mean_return(t);
                Some(vec![(law.assemble(t, &law.weights(deploy), &vec![e; law.assets]), 1.0)])
            }
            PerturbationKind::StockVolatility(_) => None,
        }
    }

    /// `E[Δ_t]` under the deployed policy.
    pub fn mean(&self, t: usize, deploy: &Mat, d_x: usize) -> Mat {
        match &self.kind {
            PerturbationKind::StockVolatility(law) => law.mean_delta(t, deploy),
            _ => Mat::zeros(d_x, d_x),
        }
    }

    /// `E[(Δ_t − EΔ_t) S (Δ_t − EΔ_t)ᵀ]` for a symmetric `S`.
    pub fn centred_second_moment(&self, t: usize, deploy: &Mat, s: &Mat) -> Mat {
        match &self.kind {
            PerturbationKind::Null => Mat::zeros(s.nrows(), s.ncols()),
            PerturbationKind::ScaledFactor(sf) => {
                let scale = sf.scale(t, deploy);
                sf.atoms
                    .iter()
                    .zip(&sf.probs)
                    .fold(Mat::zeros(s.nrows(), s.ncols()), |acc, (u, &p)| acc + u * s * u.transpose() * (p * scale * scale))
            }
            PerturbationKind::StockVolatility(law) => law.centred_second_moment(t, deploy, s),
        }
    }
}

impl PerturbationMap {
    /// `E[(Δ_t − EΔ_t)ᵀ Λ (Δ_t − EΔ_t)]`, the adjoint of
    /// [`PerturbationMap::centred_second_moment`].
    pub fn centred_adjoint_moment(&self, t: usize, deploy: &Mat, lam: &Mat) -> Mat {
        match &self.kind {
            PerturbationKind::Null => Mat::zeros(lam.nrows(), lam.ncols()),
            PerturbationKind::ScaledFactor(sf) => {
                let scale = sf.scale(t, deploy);
                sf.atoms
                    .iter()
                    .zip(&sf.probs)
                    .fold(Mat::zeros(lam.nrows(), lam.ncols()), |acc, (u, &p)| acc + u.transpose() * lam * u * (p * scale * scale))
            }
            PerturbationKind::StockVolatility(law) => law.centred_adjoint_moment(t, deploy, lam),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeedPair, Stream};

    fn factor(gain: f64) -> PerturbationMap {
        let mut p = Mat::zeros(1, 2);
        p[(0, 0)] = 1.0;
        let u = Mat::from_row_slice(2, 2, &[0.0, 1.0, -0.5, 0.0]);
        PerturbationMap::scaled_factor(ScaledFactor {
            gains: vec![gain; 3],
            direction: p,
            offset: 0.3,
            atoms: vec![u.clone(), -u],
            probs: vec![0.5, 0.5],
        })
        .unwrap()
    }

    #[test]
    fn scaled_factor_declares_frobenius_sensitivity() {
        let map = factor(0.2);
        let unorm = (1.0f64 + 0.25).sqrt();
        assert!((map.eps[0] - 0.2 * unorm).abs() < 1e-15);
        assert!((map.xi[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn scaled_factor_samples_within_support_bound() {
        let map = factor(0.7);
        let mut rng = SeedPair::new(1, 2).rng(Stream::Perturbation);
        let m = Mat::from_row_slice(1, 2, &[3.0, -1.0]);
        for t in 0..3 {
            for _ in 0..500 {
                assert!(spectral_norm(&map.sample(t, &m, 2, &mut rng)) <= map.xi[t] + 1e-12);
            }
        }
    }

    #[test]
    fn zero_scaling_collapses_to_null() {
        assert_eq!(factor(1.0).scale_sensitivity(0.0), PerturbationMap::null(3));
    }

    #[test]
    fn non_centred_atoms_are_rejected() {
        let mut p = Mat::zeros(1, 1);
        p[(0, 0)] = 1.0;
        let sf = ScaledFactor {
            gains: vec![1.0],
            direction: p,
            offset: 0.0,
            atoms: vec![Mat::identity(1, 1)],
            probs: vec![1.0],
        };
        assert!(PerturbationMap::scaled_factor(sf).is_err());
    }

    fn law(mean: f64, std: f64) -> VolatilityLaw {
        VolatilityLaw::new(1, 60, 0.0, std, 0.6, vec![mean]).unwrap()
    }

    #[test]
    fn forced_zero_volatility_gives_zero_perturbation() {
        let l = VolatilityLaw::new(2, 60, 0.0, 0.0, 0.6, vec![0.0]).unwrap();
        let m = Mat::from_row_slice(4, 4, &[0.5, 0.5, 0.0, 0.0, 0.2, 0.8, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.2, 0.8]);
        let mut rng = SeedPair::new(0, 0).rng(Stream::Perturbation);
        assert!(l.sample(0, &m, &mut rng).amax() < 1e-15);
    }

    #[test]
    fn scalar_case_is_hand_evaluable() {
        let l = VolatilityLaw::new(1, 60, 0.05, 0.0, 0.6, vec![0.3f64]).unwrap();
        let e = ((0.05 - 0.5 * 0.09) / 60.0 + 0.3 / 60f64.sqrt()).exp();
        assert!((l.mean_return(0) - e).abs() < 1e-15);
        let mut rng = SeedPair::new(0, 0).rng(Stream::Perturbation);
        let d = l.sample(0, &Mat::identity(2, 2), &mut rng);
        assert!((d[(1, 1)] - (e - 1.0)).abs() < 1e-15);
        assert!(d[(0, 1)].abs() < 1e-15);
    }

    #[test]
    fn degenerate_mean_sits_at_lower_clip() {
        let l = law(f64::NEG_INFINITY, 0.2);
        assert!(l.is_degenerate(0));
        assert_eq!(l.mean_return(0), l.exponent(-0.6).exp());
    }

    #[test]
    fn quadrature_moment_matches_sampling() {
        let l = law(0.1, 0.4);
        let mut rng = SeedPair::new(9, 0).rng(Stream::Perturbation);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| l.exponent(l.draw_volatility(0, &mut rng)).exp()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((mean - l.mean_return(0)).abs() <= 4.0 * sd / (n as f64).sqrt());
        assert!((sd * sd / l.return_variance(0) - 1.0).abs() < 0.02);
    }
}
