use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::project_policy;
use crate::analysis::StepSizePlan;
use crate::cost::{expected_cost_mc, trajectory_gradient, ExpectationRoute};
use crate::dynamics::{rollout, sample_realization, Policy, Realization};
use crate::error::{ensure, Error, Result};
use crate::instance::Instance;
use crate::linalg::{all_finite, Mat, Vector};
use crate::rng::SeedPair;

/// Raw iterates above this Frobenius norm abort the run as divergent.
pub const DIVERGENCE_NORM: f64 = 1e6;

/// Recovered and drawn noises must agree to this relative accuracy.
pub const RECOVERY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsgdConfig {
    pub plan: StepSizePlan,
    /// Updates run for `n = 0..=iterations`.
    pub iterations: usize,
    pub init: Policy,
    pub log_every: usize,
    pub seed: SeedPair,
    /// Independent trajectories averaged per update.
    pub batch: usize,
    /// How `C_T(M_n; M_n)` is estimated at logged iterates, if at all.
    pub cost_eval: Option<ExpectationRoute>,
}

impl RsgdConfig {
    pub fn new(plan: StepSizePlan, iterations: usize, init: Policy, seed: SeedPair) -> Self {
        RsgdConfig {
            plan,
            iterations,
            init,
            log_every: 1,
            seed,
            batch: 1,
            cost_eval: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub n: usize,
    pub ps_error: Option<f64>,
    pub expected_cost: Option<f64>,
    pub cost_std_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    /// `M_n` for every logged row.
    pub iterates: Vec<Mat>,
    /// Seconds spent on each executed update.
    pub wall_time: Vec<f64>,
    /// Iterate after the last completed update.
    pub final_policy: Policy,
    /// Update index whose raw iterate left the divergence ball.
    pub diverged_at: Option<usize>,
    pub max_recovery_error: f64,
}

impl RunTrace {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

/// Repeated stochastic gradient descent: one rollout per update under the
/// distributions induced by the current iterate, then a projected step.
pub fn rsgd_run(inst: &Instance, cfg: &RsgdConfig, reference: Option<&Mat>) -> Result<RunTrace> {
    inst.validate()?;
    cfg.init.check_shape(&inst.system)?;
    if cfg.plan.is_invalid() {
        return Err(Error::InvalidPlan(cfg.plan.violated.clone()));
    }
    ensure(cfg.iterations >= 1, || "need at least one iteration".into())?;
    ensure(cfg.log_every >= 1 && cfg.batch >= 1, || "log_every and batch must be positive".into())?;
    ensure(cfg.init.set.contains(&cfg.init.m, 1e-9), || "initial policy is infeasible".into())?;

    let mut m = cfg.init.m.clone();
    let mut trace = RunTrace {
        rows: vec![],
        iterates: vec![],
        wall_time: vec![],
        final_policy: cfg.init.clone(),
        diverged_at: None,
        max_recovery_error: 0.0,
    };
    for n in 0..=cfg.iterations {
        if n % cfg.log_every == 0 || n == cfg.iterations {
            trace.rows.push(log_row(inst, &m, n, reference, cfg.cost_eval)?);
            trace.iterates.push(m.clone());
        }
        let started = Instant::now();
        let mut grad = Mat::zeros(m.nrows(), m.ncols());
        for b in 0..cfg.batch {
            let (g, err) = sampled_gradient(inst, &m, cfg.seed.child(n as u64).child(b as u64))?;
            grad += g;
            trace.max_recovery_error = trace.max_recovery_error.max(err);
        }
        grad /= cfg.batch as f64;
        if !all_finite(&grad) {
            return Err(Error::NonFiniteGradient { iteration: n });
        }
        let raw = &m - grad * cfg.plan.eta(n);
        trace.wall_time.push(started.elapsed().as_secs_f64());
        if raw.norm() > DIVERGENCE_NORM {
            trace.diverged_at = Some(n);
            if trace.rows.last().map(|r| r.n) != Some(n) {
                trace.rows.push(log_row(inst, &m, n, reference, cfg.cost_eval)?);
                trace.iterates.push(m.clone());
            }
            break;
        }
        m = project_policy(&raw, &cfg.init.set)?.m;
    }
    trace.final_policy = Policy {
        m,
        set: cfg.init.set,
    };
    Ok(trace)
}

fn log_row(inst: &Instance, m: &Mat, n: usize, reference: Option<&Mat>, eval: Option<ExpectationRoute>) -> Result<TraceRow> {
    let ps_error = reference.map(|r| (m - r).norm_squared());
    let (expected_cost, cost_std_error) = match eval {
        None => (None, None),
        Some(ExpectationRoute::SampleAverage { n_samples, seed }) => {
            let e = expected_cost_mc(inst, m, m, n_samples, seed)?;
            (Some(e.estimate), Some(e.std_error))
        }
        Some(route) => (Some(route.cost(inst, m, m)?), Some(0.0)),
    };
    Ok(TraceRow {
        n,
        ps_error,
        expected_cost,
        cost_std_error,
    })
}

/// One rollout under `m` with perturbations drawn at `m`. The noise is
/// recovered from consecutive states before differentiating, and the largest
/// relative recovery error is returned alongside the gradient.
fn sampled_gradient(inst: &Instance, m: &Mat, seed: SeedPair) -> Result<(Mat, f64)> {
    let cfg = &inst.system;
    let drawn = sample_realization(cfg, &inst.map, &inst.noise, m, seed);
    let (states, actions) = rollout(cfg, m, &inst.x0, &drawn)?;
    let mut recovered: Vec<Vector> = Vec::with_capacity(cfg.horizon);
    let mut worst: f64 = 0.0;
    for t in 0..cfg.horizon {
        let a_t = &cfg.a + &drawn.deltas[t];
        let propagated = &a_t * &states[t];
        let pushed = &cfg.b * &actions[t];
        let w = &states[t + 1] - &propagated - &pushed;
        let scale = 1f64.max(states[t + 1].amax()).max(propagated.amax()).max(pushed.amax());
        let discrepancy = (&w - &drawn.noises[t]).amax() / scale;
        if discrepancy > RECOVERY_TOLERANCE {
            return Err(Error::NoiseRecovery { t, discrepancy });
        }
        worst = worst.max(discrepancy);
        recovered.push(w);
    }
    let real = Realization {
        deltas: drawn.deltas,
        noises: recovered,
    };
    Ok((trajectory_gradient(cfg, &inst.cost, m, &states, &actions, &real)?, worst))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::StepKind;
    use crate::cost::CostModel;
    use crate::dynamics::{FeasibleSet, NoiseModel, PerturbationMap, SystemConfig};

    fn instance(noise: NoiseModel) -> Instance {
        let cfg = SystemConfig {
            a: Mat::identity(2, 2) * 0.5,
            b: Mat::identity(2, 2),
            k: Mat::zeros(2, 2),
            horizon: 4,
            memory: 1,
            noise_bound: 1.0,
            x0_bound: 1.0,
            sigma2: 0.0,
            kappa: 1.0,
            gamma: 0.5,
        };
        let cost = CostModel::quadratic(Mat::identity(2, 2), Mat::identity(2, 2)).unwrap();
        Instance::new(cfg, cost, PerturbationMap::null(4), noise, Vector::from_row_slice(&[0.3, 0.1])).unwrap()
    }

    fn config(iterations: usize) -> RsgdConfig {
        let init = Policy::new(Mat::from_row_slice(2, 2, &[0.4, 0.6, 0.5, 0.5]), FeasibleSet::RowSimplex { scale: 1.0 }).unwrap();
        RsgdConfig::new(StepSizePlan::unchecked(StepKind::Constant { eta: 0.05 }), iterations, init, SeedPair::new(3, 0))
    }

    #[test]
    fn zero_noise_leaves_policy_fixed() {
        let inst = instance(NoiseModel::Zero { dim: 2 });
        let cfg = config(20);
        let trace = rsgd_run(&inst, &cfg, None).unwrap();
        assert_eq!(trace.rows.len(), 21);
        assert!(trace.iterates.iter().all(|m| *m == cfg.init.m));
    }

    #[test]
    fn runs_are_bitwise_reproducible_and_feasible() {
        let inst = instance(NoiseModel::rademacher(2, 0.4));
        let mut cfg = config(50);
        cfg.cost_eval = Some(ExpectationRoute::Moments);
        let a = rsgd_run(&inst, &cfg, Some(&cfg.init.m)).unwrap();
        let b = rsgd_run(&inst, &cfg, Some(&cfg.init.m)).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.iterates, b.iterates);
        assert!(a.iterates.iter().all(|m| cfg.init.set.contains(m, 1e-12)));
        assert!(a.max_recovery_error <= RECOVERY_TOLERANCE);
    }

    #[test]
    fn invalid_plan_is_rejected() {
        let inst = instance(NoiseModel::Zero { dim: 2 });
        let mut cfg = config(5);
        cfg.plan.checked = true;
        cfg.plan.violated = vec!["broken".into()];
        assert!(matches!(rsgd_run(&inst, &cfg, None), Err(Error::InvalidPlan(_))));
    }

    #[test]
    fn huge_steps_flag_divergence() {
        let inst = instance(NoiseModel::rademacher(2, 0.4));
        let mut cfg = config(5);
        cfg.plan = StepSizePlan::unchecked(StepKind::Constant { eta: 1e9 });
        let trace = rsgd_run(&inst, &cfg, None).unwrap();
        assert_eq!(trace.diverged_at, Some(0));
        assert_eq!(trace.rows.len(), 1);
    }
}
