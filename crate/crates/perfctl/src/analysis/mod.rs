//! Closed-form constants that propagate per-step sensitivities through the
//! horizon, the existence condition for a performatively stable policy, the
//! stable/unstable regime thresholds, and step-size validity for RSGD.

mod steps;

pub use steps::{find_diminishing_plan, plan_diminishing_steps, theorem1_error_bound, validate_step_sizes_general, StepKind, StepSizePlan};

use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::dynamics::{alpha_beta, SystemConfig};
use crate::error::{ensure, Error, Result};
use crate::linalg::spectral_norm;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Regime {
    Unknown,
    AlmostSurelyStable { zeta: f64 },
    AlmostSurelyUnstable { zeta_tilde: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    pub eps: Vec<f64>,
    pub xi: Vec<f64>,
    pub regime: Regime,
}

impl SensitivityProfile {
    pub fn new(eps: Vec<f64>, xi: Vec<f64>) -> Self {
        SensitivityProfile {
            eps,
            xi,
            regime: Regime::Unknown,
        }
    }

    /// Per-step growth factors `1 − γ + κ²ξ_t`.
    pub fn growth_factors(&self, gamma: f64, kappa: f64) -> Vec<f64> {
        self.xi.iter().map(|x| 1.0 - gamma + kappa * kappa * x).collect()
    }
}

/// Curvature, smoothness and gradient-growth constants of the stage cost.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostConstants {
    pub mu: f64,
    pub smooth: f64,
    pub growth: f64,
}

impl From<&CostModel> for CostConstants {
    fn from(c: &CostModel) -> Self {
        CostConstants {
            mu: c.mu,
            smooth: c.smooth,
            growth: c.growth,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantsBundle {
    pub horizon: usize,
    pub memory: usize,
    pub x0_bound: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub profile: SensitivityProfile,
    /// `α_0..α_T`.
    pub alpha: Vec<f64>,
    /// `β_0..β_T`.
    pub beta: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    /// `λ_1..λ_T`.
    pub lambda: Vec<f64>,
    /// `ν_1..ν_T`.
    pub nu: Vec<f64>,
    /// `ϑ_1..ϑ_T`.
    pub vartheta: Vec<f64>,
    pub mu_tilde: f64,
    pub mu_bar: f64,
    /// `Σ_{t<T} ε_t Σ_{i=t+1}^{T} ν_i`.
    pub condition_lhs: f64,
    pub radius: f64,
}

impl ConstantsBundle {
    pub fn lambda_sum(&self) -> f64 {
        self.lambda.iter().sum()
    }

    /// `ε_t Σ_{i>t} ν_i` for every step.
    pub fn per_step_contributions(&self) -> Vec<f64> {
        let mut tail = 0.0;
        let mut out = vec![0.0; self.horizon];
        for t in (0..self.horizon).rev() {
            tail += self.nu[t];
            out[t] = self.profile.eps[t] * tail;
        }
        out
    }

    /// Rebuilds the condition sum after `nu` or `eps` were edited.
    pub fn refresh_condition(&mut self) {
        self.condition_lhs = self.per_step_contributions().iter().sum();
    }
}

fn strong_convexity_floor(mu: f64, sigma2: f64, gamma: f64, kappa: f64) -> f64 {
    let a = mu * sigma2 / 2.0;
    let b = mu * sigma2 * gamma * gamma / (64.0 * kappa.powi(10));
    a.min(b)
}

/// Strong-convexity modulus of the shifted expected cost over the horizon.
pub fn mu_tilde(horizon: usize, memory: usize, mu: f64, sigma2: f64, gamma: f64, kappa: f64) -> f64 {
    (horizon - memory + 1) as f64 * strong_convexity_floor(mu, sigma2, gamma, kappa)
}

/// Per-step share of [`mu_tilde`].
pub fn mu_bar(mu: f64, sigma2: f64, gamma: f64, kappa: f64) -> f64 {
    strong_convexity_floor(mu, sigma2, gamma, kappa)
}

pub fn compute_constants(cfg: &SystemConfig, cost: CostConstants, profile: &SensitivityProfile, radius: f64) -> Result<ConstantsBundle> {
    cfg.validate()?;
    let horizon = cfg.horizon;
    ensure(profile.eps.len() == horizon && profile.xi.len() == horizon, || {
        format!("profile lengths must equal the horizon {horizon}")
    })?;
    ensure(profile.eps.iter().chain(&profile.xi).all(|v| *v >= 0.0 && v.is_finite()), || {
        "sensitivities and support bounds must be finite and nonnegative".into()
    })?;
    ensure(cost.mu >= 0.0 && cost.smooth > 0.0 && cost.growth > 0.0, || {
        "cost constants must be positive (curvature may be zero)".into()
    })?;
    ensure(radius >= 0.0, || "policy radius must be nonnegative".into())?;

    let (gamma, kappa) = (cfg.gamma, cfg.kappa);
    let (k2, k3) = (kappa.powi(2), kappa.powi(3));
    let dx = cfg.d_x() as f64;
    let h = cfg.memory as f64;
    let w = cfg.noise_bound;
    let x0 = cfg.x0_bound;
    let nb = spectral_norm(&cfg.b);
    let g = cost.growth;

    let (alpha, beta): (Vec<f64>, Vec<f64>) = (0..=horizon).map(|t| alpha_beta(gamma, kappa, &profile.xi, t)).unzip();

    let c1 = dx * cost.smooth * h.powf(1.5) * w * (1.0 + (k2 + k3) * nb) * (k2 + k3) / (1.0 - gamma);
    let c2 = dx * h.powf(1.5) * w * g * (kappa.powi(4) + kappa.powi(5)) * nb / (1.0 - gamma);
    let c3 = (h * radius * nb + 1.0) * w;
    let c4 = h * w * (1.0 - gamma) * c1;
    let c5 = h * w * (1.0 - gamma) * c1 / (k2 + k3);

    let lambda = (1..=horizon).map(|t| c1 * (c4 * beta[t] + c5)).collect();
    let nu = (1..=horizon).map(|t| (c1 + c2 * beta[t]) * (x0 * alpha[t] + c3 * beta[t])).collect();
    let vartheta = (1..=horizon)
        .map(|t| {
            k3 * g * ((h * w + k2) * kappa * nb * beta[t] + 1.0) * (x0 * alpha[t] + c3 * beta[t])
                + g * h * w * radius * (k3 * beta[t] + 1.0)
        })
        .collect();

    let mut bundle = ConstantsBundle {
        horizon,
        memory: cfg.memory,
        x0_bound: x0,
        gamma,
        kappa,
        profile: profile.clone(),
        alpha,
        beta,
        c1,
        c2,
        c3,
        c4,
        c5,
        lambda,
        nu,
        vartheta,
        mu_tilde: mu_tilde(horizon, cfg.memory, cost.mu, cfg.sigma2, gamma, kappa),
        mu_bar: mu_bar(cost.mu, cfg.sigma2, gamma, kappa),
        condition_lhs: 0.0,
        radius,
    };
    bundle.refresh_condition();
    Ok(bundle)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub contraction_ratio: f64,
    pub per_step_contributions: Vec<f64>,
    /// Margin within rounding of zero relative to the compared quantities;
    /// reported as not holding.
    pub at_boundary: bool,
}

pub fn check_psc_condition(bundle: &ConstantsBundle) -> ConditionReport {
    let lhs = bundle.condition_lhs;
    let rhs = bundle.mu_tilde;
    let margin = rhs - lhs;
    // relative, so that problems with tiny cost scales are judged alike
    let at_boundary = margin.abs() <= 1e-12 * rhs.abs().max(lhs.abs());
    let holds = margin > 0.0 && !at_boundary;
    let contraction_ratio = if rhs > 0.0 {
        lhs / rhs
    } else {
        f64::INFINITY
    };
    ConditionReport {
        holds,
        lhs,
        rhs,
        margin,
        contraction_ratio,
        per_step_contributions: bundle.per_step_contributions(),
        at_boundary,
    }
}

/// Iterations after which repeated minimization is within `rho` of the
/// fixed point, starting `initial_gap` away.
pub fn rrm_iteration_bound(report: &ConditionReport, initial_gap: f64, rho: f64) -> Result<u64> {
    if !report.holds {
        return Err(Error::ConditionFails {
            lhs: report.lhs,
            rhs: report.rhs,
        });
    }
    ensure(initial_gap > 0.0 && rho > 0.0 && rho < initial_gap, || {
        "need 0 < rho < initial gap".into()
    })?;
    let n = (initial_gap / rho).ln() / (1.0 - report.contraction_ratio);
    Ok((n - 1e-9).ceil().max(0.0) as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableCaseReport {
    pub zeta: f64,
    pub phi: f64,
    pub threshold: f64,
    pub eps_sum: f64,
    pub satisfied: bool,
    /// Every growth factor `1 − γ + κ²ξ_t` is at most `ζ`.
    pub consistent: bool,
}

/// Sum-of-sensitivities threshold for transitions that contract at rate `ζ`.
pub fn stable_case_threshold(bundle: &ConstantsBundle, zeta: f64) -> Result<StableCaseReport> {
    ensure(zeta > 0.0 && zeta < 1.0, || format!("zeta must lie in (0,1), got {zeta}"))?;
    let geo = 1.0 / (1.0 - zeta);
    let phi = 1.0 / ((bundle.c1 + bundle.c2 * geo) * (bundle.x0_bound + bundle.c3 * geo));
    let threshold = phi * (1.0 - bundle.memory as f64 / bundle.horizon as f64) * bundle.mu_bar;
    let eps_sum: f64 = bundle.profile.eps.iter().sum();
    let consistent = bundle.profile.growth_factors(bundle.gamma, bundle.kappa).iter().all(|&f| f <= zeta);
    Ok(StableCaseReport {
        zeta,
        phi,
        threshold,
        eps_sum,
        satisfied: eps_sum < threshold,
        consistent,
    })
}

/// Necessary upper bound on `ε_t` when every transition expands by at least
/// `ζ̃ > 1`.
pub fn unstable_case_requirement(bundle: &ConstantsBundle, zeta_tilde: f64, t: usize) -> Result<f64> {
    ensure(zeta_tilde > 1.0, || format!("zeta_tilde must exceed 1, got {zeta_tilde}"))?;
    ensure(t < bundle.horizon, || format!("step {t} is outside the horizon"))?;
    let (c1, c2, c3, x0) = (bundle.c1, bundle.c2, bundle.c3, bundle.x0_bound);
    let phi_bar = (zeta_tilde - 1.0) / (c1 * x0 + (c1 * c3 + c2 * c3 + c3 * x0) / zeta_tilde);
    let span = (bundle.horizon - bundle.memory + 1) as f64;
    Ok(phi_bar * span * bundle.mu_bar / (zeta_tilde.powi((bundle.horizon - t) as i32) - 1.0))
}

pub fn unstable_case_schedule(bundle: &ConstantsBundle, zeta_tilde: f64) -> Result<Vec<f64>> {
    (0..bundle.horizon).map(|t| unstable_case_requirement(bundle, zeta_tilde, t)).collect()
}
