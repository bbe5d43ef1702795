//! Quadratic stage costs, their policy gradients along a realized trajectory,
//! and expectations of the total cost under shifted perturbation laws.

mod expectation;
mod gradient;
mod moments;

pub use expectation::{
    enumerate_realizations, expected_cost_exact, expected_cost_mc, expected_gradient, fd_gradient, total_cost,
    ExpectationRoute, Method, ShiftedExpectation, ENUMERATION_BUDGET,
};
pub use gradient::{grad_policy_stage, grad_total, trajectory_gradient};
pub use moments::{moment_cost, moment_gradient};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::linalg::{sym_eig_range, Mat, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostKind {
    Quadratic,
    /// Penalizes only the first `assets` coordinates of state and action.
    StockRisk { assets: usize },
}

/// `c_t(x, u) = xᵀQx + uᵀRu` with constants read off the weight spectra.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub kind: CostKind,
    pub q: Mat,
    pub r: Mat,
    /// Strong-convexity modulus: smallest eigenvalue over both weights.
    pub mu: f64,
    /// Gradient Lipschitz constant: twice the largest eigenvalue.
    pub smooth: f64,
    /// Gradient growth constant: twice the largest eigenvalue.
    pub growth: f64,
}

impl CostModel {
    pub fn quadratic(q: Mat, r: Mat) -> Result<Self> {
        Self::with_kind(CostKind::Quadratic, q, r)
    }

    pub fn stock_risk(assets: usize) -> Self {
        let mut w = Mat::zeros(2 * assets, 2 * assets);
        w.view_mut((0, 0), (assets, assets)).fill_with_identity();
        Self::with_kind(CostKind::StockRisk { assets }, w.clone(), w).expect("projector weights are valid")
    }

    fn with_kind(kind: CostKind, q: Mat, r: Mat) -> Result<Self> {
        ensure(q.is_square() && r.is_square(), || "cost weights must be square".into())?;
        ensure((&q - q.transpose()).amax() <= 1e-12 && (&r - r.transpose()).amax() <= 1e-12, || {
            "cost weights must be symmetric".into()
        })?;
        let (q_lo, q_hi) = sym_eig_range(&q);
        let (r_lo, r_hi) = sym_eig_range(&r);
        ensure(q_lo >= -1e-12 && r_lo >= -1e-12, || "cost weights must be positive semidefinite".into())?;
        let hi = q_hi.max(r_hi);
        Ok(CostModel {
            kind,
            q,
            r,
            mu: q_lo.min(r_lo).max(0.0),
            smooth: 2.0 * hi,
            growth: 2.0 * hi,
        })
    }

    pub fn stage_cost(&self, _t: usize, x: &Vector, u: &Vector) -> f64 {
        x.dot(&(&self.q * x)) + u.dot(&(&self.r * u))
    }

    pub fn stage_grads(&self, _t: usize, x: &Vector, u: &Vector) -> (Vector, Vector) {
        (&self.q * x * 2.0, &self.r * u * 2.0)
    }
}
