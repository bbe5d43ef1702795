use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use super::schedule::BUNDLED_MAX_SENSITIVITY;
use super::SensitivitySchedule;
use crate::cost::CostModel;
use crate::dynamics::{FeasibleSet, NoiseModel, PerturbationMap, Policy, SystemConfig, VolatilityLaw};
use crate::error::{ensure, Result};
use crate::instance::Instance;
use crate::linalg::{Mat, Vector};
use crate::rng::{SeedPair, Stream};
use crate::solvers::tie_blocks;

/// Portfolio risk-minimization market: `L` assets traded over `T` days with
/// stochastic daily volatilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StockMarketConfig {
    pub assets: usize,
    pub days: usize,
    /// Riskless rate per horizon.
    pub rate: f64,
    pub vol_std: f64,
    pub vol_clip: f64,
    /// Added to every `log ε_t` before it becomes the volatility mean.
    #[serde(default)]
    pub vol_shift: f64,
    pub noise_lo: f64,
    pub noise_hi: f64,
    pub iterations: usize,
    pub eta: f64,
    /// When set to `φ2`, steps decay as `eta·(1+φ2)/(n+1+φ2)`.
    #[serde(default)]
    pub eta_decay: Option<f64>,
    pub seed: u64,
    /// Initial holding of every stock; the mean-shifted half of the state
    /// starts at zero.
    #[serde(default)]
    pub initial_investment: f64,
    /// Drop the nonnegativity of portfolio weights and keep only the row sums.
    #[serde(default)]
    pub sum_only: bool,
    /// Monte-Carlo samples per expected-cost evaluation; zero skips it.
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
}

fn default_eval_samples() -> usize {
    200
}

/// Qualitative regime of the transition matrices `A + Δ_t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StockRegime {
    /// Every gross return below one: contracting transitions.
    Stable,
    /// Every gross return above one: expanding transitions.
    Unstable,
    /// Returns straddle one.
    General,
}

impl StockMarketConfig {
    /// Full-size market: 10 assets, 60 days, 1000 iterations at step 0.01.
    pub fn paper() -> Self {
        StockMarketConfig {
            assets: 10,
            days: 60,
            rate: 0.05,
            vol_std: 0.2,
            vol_clip: 0.6,
            vol_shift: 0.0,
            noise_lo: 0.0,
            noise_hi: 1.0,
            iterations: 1000,
            eta: 0.01,
            eta_decay: None,
            seed: 0,
            initial_investment: 0.0,
            sum_only: false,
            eval_samples: default_eval_samples(),
        }
    }

    /// 3 assets over 12 days with steps decaying from 0.01.
    pub fn reduced() -> Self {
        StockMarketConfig {
            assets: 3,
            days: 12,
            eta_decay: Some(100.0),
            ..Self::paper()
        }
    }

    /// Rate at which the gross return at volatility `v` equals `e^growth`.
    pub fn rate_for_return(&self, v: f64, growth: f64) -> f64 {
        let t = self.days as f64;
        t * growth + 0.5 * v * v - v * t.sqrt()
    }

    /// Rate, volatility shift and initial holding placing the transitions in
    /// `regime`. Outside the stable regime the shift moves the largest
    /// bundled sensitivity to a zero volatility mean, so the most sensitive
    /// days are also the most volatile ones.
    pub fn with_regime(mut self, regime: StockRegime) -> Self {
        let shift = -BUNDLED_MAX_SENSITIVITY.ln();
        let c = self.vol_clip;
        match regime {
            StockRegime::Stable => {
                self.rate = 0.05;
                self.vol_shift = 0.0;
                self.initial_investment = 0.0;
            }
            StockRegime::Unstable => {
                self.rate = self.rate_for_return(-c, 0.05);
                self.vol_shift = shift;
                self.initial_investment = 1.0;
            }
            StockRegime::General => {
                self.rate = self.rate_for_return(0.0, 0.0);
                self.vol_shift = shift;
                self.initial_investment = 1.0;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.assets >= 1, || "need at least one asset".into())?;
        ensure(self.days >= 2, || "need at least two trading days".into())?;
        ensure(self.vol_std > 0.0 && self.vol_clip > 0.0, || "volatility std and clip must be positive".into())?;
        ensure(self.noise_lo < self.noise_hi, || "noise range must be nonempty".into())?;
        ensure(self.iterations >= 1 && self.eta > 0.0, || "need iterations >= 1 and eta > 0".into())?;
        ensure(self.eta_decay.is_none_or(|d| d >= 0.0), || "eta_decay must be nonnegative".into())?;
        ensure(self.initial_investment.is_finite(), || "initial investment must be finite".into())?;
        ensure(self.rate.is_finite() && self.vol_shift.is_finite(), || "rate and shift must be finite".into())
    }

    /// Gaussian volatility means `log ε_t + shift`; zero sensitivities give
    /// `-inf`, i.e. volatility fixed at the lower clip.
    pub fn log_means(&self, schedule: &SensitivitySchedule) -> Vec<f64> {
        schedule
            .values
            .iter()
            .map(|&e| if e == 0.0 { f64::NEG_INFINITY } else { e.ln() + self.vol_shift })
            .collect()
    }

    /// Portfolio rows summing to one, nonnegative unless `sum_only`; the two
    /// diagonal blocks of the policy are tied.
    pub fn feasible_set(&self) -> FeasibleSet {
        if self.sum_only {
            FeasibleSet::TiedRowAffine { copies: 2, scale: 1.0 }
        } else {
            FeasibleSet::TiedRowSimplex { copies: 2, scale: 1.0 }
        }
    }

    pub fn law(&self, schedule: &SensitivitySchedule) -> Result<VolatilityLaw> {
        VolatilityLaw::new(self.assets, self.days, self.rate, self.vol_std, self.vol_clip, self.log_means(schedule))
    }
}

pub fn build_stock_instance(cfg: &StockMarketConfig, schedule: &SensitivitySchedule) -> Result<Instance> {
    cfg.validate()?;
    ensure(schedule.len() == cfg.days, || {
        format!("schedule has {} values for {} days", schedule.len(), cfg.days)
    })?;
    let n = 2 * cfg.assets;
    let mut x0 = Vector::zeros(n);
    x0.rows_mut(cfg.assets, cfg.assets).fill(cfg.initial_investment);
    let noise = NoiseModel::StackedUniform {
        assets: cfg.assets,
        lo: cfg.noise_lo,
        hi: cfg.noise_hi,
    };
    let system = SystemConfig {
        a: Mat::identity(n, n),
        b: Mat::identity(n, n),
        k: Mat::zeros(n, n),
        horizon: cfg.days,
        memory: 1,
        noise_bound: noise.norm_bound(),
        x0_bound: x0.norm(),
        sigma2: noise.covariance_floor(),
        kappa: 1.0,
        gamma: 0.05,
    };
    let map = PerturbationMap::volatility(cfg.law(schedule)?, schedule.values.clone())?;
    Instance::new(system, CostModel::stock_risk(cfg.assets), map, noise, x0)
}

/// Portfolio rows drawn uniformly from the simplex, which lies in either
/// feasible set.
pub fn random_stock_policy(assets: usize, set: FeasibleSet, seed: SeedPair) -> Policy {
    let mut rng = seed.rng(Stream::Init);
    let mut m = Mat::zeros(assets, assets);
    for l in 0..assets {
        let draws: Vec<f64> = (0..assets).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = draws.iter().sum();
        for (i, d) in draws.into_iter().enumerate() {
            m[(l, i)] = d / total;
        }
    }
    Policy {
        m: tie_blocks(&m, 2),
        set,
    }
}

/// One draw of `Δ_t` under `policy`.
pub fn sample_volatility_perturbation(
    cfg: &StockMarketConfig,
    schedule: &SensitivitySchedule,
    policy: &Policy,
    t: usize,
    seed: SeedPair,
) -> Result<Mat> {
    ensure(t < cfg.days, || format!("day {t} is outside the horizon"))?;
    ensure(schedule.len() == cfg.days, || "schedule length differs from days".into())?;
    ensure(cfg.feasible_set().contains(&policy.m, 1e-9), || "portfolio is outside the feasible set".into())?;
    let law = cfg.law(schedule)?;
    Ok(law.sample(t, &policy.m, &mut seed.rng(Stream::Perturbation)))
}

/// Days whose volatility is pinned at the lower clip because `ε_t = 0`.
pub fn degenerate_days(schedule: &SensitivitySchedule) -> Vec<usize> {
    schedule.values.iter().enumerate().filter(|(_, &e)| e == 0.0).map(|(t, _)| t).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::paper_schedules;

    #[test]
    fn single_asset_shapes() {
        let cfg = StockMarketConfig {
            assets: 1,
            ..StockMarketConfig::reduced()
        };
        let inst = build_stock_instance(&cfg, &paper_schedules(12).unwrap().ascending).unwrap();
        assert_eq!(inst.system.a, Mat::identity(2, 2));
        assert_eq!(inst.system.d_u(), 2);
        let p = random_stock_policy(1, cfg.feasible_set(), SeedPair::new(1, 0));
        assert_eq!(p.m, Mat::identity(2, 2));
    }

    #[test]
    fn forced_zero_volatility_gives_zero_perturbation() {
        let cfg = StockMarketConfig {
            assets: 2,
            days: 4,
            rate: 0.0,
            vol_std: 1e-300,
            vol_clip: 0.6,
            ..StockMarketConfig::reduced()
        };
        let schedule = SensitivitySchedule::explicit(vec![1.0; 4]).unwrap();
        let p = random_stock_policy(2, cfg.feasible_set(), SeedPair::new(4, 0));
        let d = sample_volatility_perturbation(&cfg, &schedule, &p, 1, SeedPair::new(2, 0)).unwrap();
        assert!(d.amax() < 1e-12);
    }

    #[test]
    fn schedule_length_is_checked() {
        let cfg = StockMarketConfig::reduced();
        let schedule = SensitivitySchedule::explicit(vec![0.1; 5]).unwrap();
        assert!(build_stock_instance(&cfg, &schedule).is_err());
    }

    #[test]
    fn random_policies_are_feasible() {
        for k in 0..20 {
            let set = StockMarketConfig::paper().feasible_set();
            let p = random_stock_policy(5, set, SeedPair::new(9, k));
            assert!(set.contains(&p.m, 1e-12));
        }
    }

    #[test]
    fn zero_sensitivity_days_are_flagged() {
        let s = SensitivitySchedule::explicit(vec![0.0, 0.1, 0.0]).unwrap();
        assert_eq!(degenerate_days(&s), vec![0, 2]);
    }
}
