use serde::{Deserialize, Serialize};

use super::{minimize_shifted, project_policy, InnerBudget};
use crate::analysis::{check_psc_condition, compute_constants, SensitivityProfile};
use crate::cost::ExpectationRoute;
use crate::dynamics::{FeasibleSet, Policy};
use crate::error::{ensure, Error, Result};
use crate::instance::Instance;
use crate::linalg::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointResult {
    pub m_star: Policy,
    /// Number of applications of the best-response map.
    pub iterations: usize,
    /// `‖M_{n+1} − M_n‖_F` at exit.
    pub residual: f64,
    pub converged: bool,
    /// `M_0, M_1, …` in order.
    pub iterates: Vec<Mat>,
    /// `‖M_{n+1} − M_n‖_F` for each application.
    pub steps: Vec<f64>,
    /// Every inner solve met its tolerance.
    pub inner_converged: bool,
}

impl FixedPointResult {
    /// `‖M_n − reference‖_F` for every iterate.
    pub fn gaps_to(&self, reference: &Mat) -> Vec<f64> {
        self.iterates.iter().map(|m| (m - reference).norm()).collect()
    }
}

/// Repeated minimization `M_{n+1} = argmin_M C_T(M; M_n)`.
pub fn rrm_run(inst: &Instance, m0: &Policy, max_iters: usize, tol: f64, budget: &InnerBudget) -> Result<FixedPointResult> {
    ensure(max_iters >= 1 && tol > 0.0, || "need max_iters >= 1 and tol > 0".into())?;
    let mut current = m0.clone();
    let mut iterates = vec![current.m.clone()];
    let mut steps = Vec::new();
    let mut inner_converged = true;
    for _ in 0..max_iters {
        let sol = minimize_shifted(inst, &current.m, &current, budget)?;
        inner_converged &= sol.converged;
        let step = (&sol.policy.m - &current.m).norm();
        steps.push(step);
        iterates.push(sol.policy.m.clone());
        current = sol.policy;
        if step <= tol {
            break;
        }
    }
    let residual = *steps.last().expect("at least one iteration");
    Ok(FixedPointResult {
        m_star: current,
        iterations: steps.len(),
        residual,
        converged: residual <= tol,
        iterates,
        steps,
        inner_converged,
    })
}

/// High-accuracy stable policy by repeated exact minimization, available
/// when the existence condition holds and the randomness is enumerable.
pub fn psc_reference(inst: &Instance, set: &FeasibleSet, tol: f64) -> Result<Policy> {
    let cfg = &inst.system;
    let profile = SensitivityProfile::new(inst.map.eps.clone(), inst.map.xi.clone());
    let bundle = compute_constants(cfg, (&inst.cost).into(), &profile, set.radius(cfg.d_u()))?;
    let report = check_psc_condition(&bundle);
    if !report.holds {
        return Err(Error::ConditionFails {
            lhs: report.lhs,
            rhs: report.rhs,
        });
    }
    reference_by_route(inst, set, tol, ExpectationRoute::Enumeration)
}

/// Repeated minimization to `tol` along `route`, without the existence gate.
pub fn reference_by_route(inst: &Instance, set: &FeasibleSet, tol: f64, route: ExpectationRoute) -> Result<Policy> {
    let start = project_policy(&Policy::zeros(&inst.system, *set).m, set)?;
    let budget = InnerBudget::new(tol / 10.0, route);
    let run = rrm_run(inst, &start, 200, tol, &budget)?;
    if !run.converged {
        return Err(Error::NotConverged {
            what: "stable-policy reference",
            residual: run.residual,
        });
    }
    Ok(run.m_star)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::CostModel;
    use crate::dynamics::{NoiseModel, PerturbationMap, ScaledFactor, SystemConfig};
    use crate::linalg::Vector;

    fn instance(map: PerturbationMap) -> Instance {
        let cfg = SystemConfig {
            a: Mat::from_row_slice(2, 2, &[0.4, 0.1, 0.0, 0.3]),
            b: Mat::from_row_slice(2, 1, &[1.0, 0.2]),
            k: Mat::zeros(1, 2),
            horizon: 3,
            memory: 1,
            noise_bound: 1.0,
            x0_bound: 1.0,
            sigma2: 0.125,
            kappa: 1.0,
            gamma: 0.5,
        };
        let cost = CostModel::quadratic(Mat::identity(2, 2), Mat::identity(1, 1)).unwrap();
        Instance::new(cfg, cost, map, NoiseModel::axis_pairs(2, 0.5), Vector::from_row_slice(&[0.4, 0.2])).unwrap()
    }

    fn factor(gain: f64) -> PerturbationMap {
        let u = Mat::from_row_slice(2, 2, &[0.1, 0.0, 0.05, 0.1]);
        PerturbationMap::scaled_factor(ScaledFactor {
            gains: vec![gain; 3],
            direction: Mat::from_row_slice(1, 2, &[0.8, 0.6]),
            offset: 0.2,
            atoms: vec![u.clone(), -u],
            probs: vec![0.5, 0.5],
        })
        .unwrap()
    }

    const SET: FeasibleSet = FeasibleSet::FrobeniusBall { radius: 1.0 };

    #[test]
    fn constant_map_converges_at_second_application() {
        let inst = instance(PerturbationMap::null(3));
        let m0 = Policy::new(Mat::from_row_slice(1, 2, &[0.3, 0.3]), SET).unwrap();
        let run = rrm_run(&inst, &m0, 10, 1e-12, &InnerBudget::new(1e-11, ExpectationRoute::Enumeration)).unwrap();
        assert!(run.converged);
        assert_eq!(run.iterations, 2);
        assert_eq!(run.residual, 0.0);
    }

    #[test]
    fn reference_is_a_fixed_point() {
        let inst = instance(factor(0.5));
        let tol = 1e-9;
        let reference = reference_by_route(&inst, &SET, tol, ExpectationRoute::Enumeration).unwrap();
        let budget = InnerBudget::new(tol / 10.0, ExpectationRoute::Enumeration);
        let again = minimize_shifted(&inst, &reference.m, &reference, &budget).unwrap();
        assert!((&again.policy.m - &reference.m).norm() <= 2.0 * tol);
    }

    #[test]
    fn zero_scaled_map_reproduces_null_answer() {
        let null = reference_by_route(&instance(PerturbationMap::null(3)), &SET, 1e-10, ExpectationRoute::Enumeration).unwrap();
        let scaled = instance(factor(0.5).scale_sensitivity(0.0));
        assert_eq!(reference_by_route(&scaled, &SET, 1e-10, ExpectationRoute::Enumeration).unwrap(), null);
    }

    #[test]
    fn reference_requires_the_condition() {
        let inst = instance(factor(50.0));
        assert!(matches!(psc_reference(&inst, &SET, 1e-8), Err(Error::ConditionFails { .. })));
    }
}
