use serde::{Deserialize, Serialize};

use super::{check_psc_condition, ConstantsBundle};
use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepKind {
    /// `η_n = φ1 / (n + 1 + φ2)`.
    Diminishing { phi1: f64, phi2: f64 },
    Constant { eta: f64 },
    Custom { schedule: Vec<f64> },
}

impl StepKind {
    /// Step size used at iteration `n ≥ 0`; custom schedules repeat their last entry.
    pub fn eta(&self, n: usize) -> f64 {
        match self {
            StepKind::Diminishing { phi1, phi2 } => phi1 / (n as f64 + 1.0 + phi2),
            StepKind::Constant { eta } => *eta,
            StepKind::Custom { schedule } => schedule[n.min(schedule.len() - 1)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizePlan {
    pub kind: StepKind,
    pub valid: bool,
    /// False for plans that were never validated against any guarantee.
    pub checked: bool,
    /// Variance constant of the convergence bound, when it applies.
    pub phi3: Option<f64>,
    pub violated: Vec<String>,
}

impl StepSizePlan {
    /// A plan taken as given, e.g. a fixed step from a reference setup.
    pub fn unchecked(kind: StepKind) -> Self {
        StepSizePlan {
            kind,
            valid: false,
            checked: false,
            phi3: None,
            violated: vec![],
        }
    }

    pub fn is_invalid(&self) -> bool {
        self.checked && !self.valid
    }

    pub fn eta(&self, n: usize) -> f64 {
        self.kind.eta(n)
    }
}

/// Gap `μ̃ − S` and spread `Σλ + S` entering the step-size bounds.
fn gap_and_spread(bundle: &ConstantsBundle) -> (f64, f64) {
    (bundle.mu_tilde - bundle.condition_lhs, bundle.lambda_sum() + bundle.condition_lhs)
}

pub const VIOLATION_CONDITION: &str = "sensitivity condition: sum of weighted sensitivities must stay below the curvature floor";
pub const VIOLATION_RATIO: &str = "step ratio bound: phi1/phi2 <= min(gap/(2 spread^2), 1/gap)";
pub const VIOLATION_FLOOR: &str = "step floor: phi1/(1 + 1/phi2) >= 2/gap";
pub const VIOLATION_SUP: &str = "step ceiling: sup eta <= min(gap/(2 spread^2), 2/gap)";
pub const VIOLATION_DECAY: &str = "decay rate: eta_n/eta_(n+1) <= 1 + gap*eta_(n+1)/2";

/// Checks `η_n = φ1/(n+1+φ2)` against the convergence conditions of RSGD.
pub fn plan_diminishing_steps(bundle: &ConstantsBundle, phi1: f64, phi2: f64) -> Result<StepSizePlan> {
    ensure(phi1 > 0.0 && phi1.is_finite(), || format!("phi1 must be positive, got {phi1}"))?;
    ensure(phi2 >= 1.0 && phi2.is_finite(), || format!("phi2 must be at least 1, got {phi2}"))?;
    let kind = StepKind::Diminishing { phi1, phi2 };
    let report = check_psc_condition(bundle);
    if !report.holds {
        return Ok(StepSizePlan {
            kind,
            valid: false,
            checked: true,
            phi3: None,
            violated: vec![VIOLATION_CONDITION.into()],
        });
    }
    let (gap, spread) = gap_and_spread(bundle);
    let mut violated = Vec::new();
    if phi1 / phi2 > (gap / (2.0 * spread * spread)).min(1.0 / gap) {
        violated.push(VIOLATION_RATIO.to_string());
    }
    if phi1 / (1.0 + 1.0 / phi2) < 2.0 / gap {
        violated.push(VIOLATION_FLOOR.to_string());
    }
    let theta_sq: f64 = bundle.vartheta.iter().map(|v| v * v).sum();
    let phi3 = 4.0 * phi1 * bundle.horizon as f64 * theta_sq / gap;
    Ok(StepSizePlan {
        kind,
        valid: violated.is_empty(),
        checked: true,
        phi3: Some(phi3),
        violated,
    })
}

/// Checks an arbitrary schedule against the ceiling and decay-rate
/// conditions over its first `iterations` steps.
pub fn validate_step_sizes_general(bundle: &ConstantsBundle, kind: &StepKind, iterations: usize) -> Result<StepSizePlan> {
    if let StepKind::Custom { schedule } = kind {
        ensure(!schedule.is_empty(), || "custom schedule must not be empty".into())?;
    }
    let etas: Vec<f64> = (0..=iterations).map(|n| kind.eta(n)).collect();
    ensure(etas.iter().all(|e| *e > 0.0 && e.is_finite()), || "step sizes must be positive".into())?;
    let report = check_psc_condition(bundle);
    let mut violated = Vec::new();
    if !report.holds {
        violated.push(VIOLATION_CONDITION.to_string());
    } else {
        let (gap, spread) = gap_and_spread(bundle);
        let sup = etas.iter().cloned().fold(0.0, f64::max);
        if sup > (gap / (2.0 * spread * spread)).min(2.0 / gap) {
            violated.push(VIOLATION_SUP.to_string());
        }
        if etas.windows(2).any(|w| w[0] / w[1] > 1.0 + 0.5 * gap * w[1]) {
            violated.push(VIOLATION_DECAY.to_string());
        }
    }
    Ok(StepSizePlan {
        kind: kind.clone(),
        valid: violated.is_empty(),
        checked: true,
        phi3: None,
        violated,
    })
}

/// Upper bound on `E‖M_N − M_PS‖²_F` after `n_iter` diminishing steps.
pub fn theorem1_error_bound(bundle: &ConstantsBundle, plan: &StepSizePlan, initial_gap_sq: f64, n_iter: usize) -> Result<f64> {
    let StepKind::Diminishing { phi1, .. } = plan.kind else {
        return Err(Error::InvalidConfig("error bound needs a diminishing plan".into()));
    };
    if !plan.valid {
        return Err(Error::InvalidPlan(plan.violated.clone()));
    }
    ensure(n_iter >= 1, || "need at least one iteration".into())?;
    let phi3 = plan.phi3.unwrap_or(0.0);
    let (gap, _) = gap_and_spread(bundle);
    let harmonic: f64 = (1..=n_iter).map(|n| 1.0 / n as f64).sum();
    Ok((-phi1 * gap * harmonic).exp() * initial_gap_sq + phi3 / n_iter as f64)
}

/// Smallest `φ2 = 10^k`, `k ≤ max_exponent`, admitting a valid diminishing
/// plan, with `φ1` set at the step floor.
pub fn find_diminishing_plan(bundle: &ConstantsBundle, max_exponent: u32) -> Option<StepSizePlan> {
    let (gap, _) = gap_and_spread(bundle);
    if !check_psc_condition(bundle).holds {
        return None;
    }
    (0..=max_exponent).find_map(|k| {
        let phi2 = 10f64.powi(k as i32);
        let phi1 = 2.0 * (1.0 + 1.0 / phi2) / gap * (1.0 + 1e-12);
        plan_diminishing_steps(bundle, phi1, phi2).ok().filter(|p| p.valid)
    })
}
