use serde::{Deserialize, Serialize};

use super::{grad_total, moment_cost, moment_gradient, CostModel};
use crate::dynamics::{rollout, sample_realization, Realization, SystemConfig};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::linalg::{Mat, Vector};
use crate::rng::SeedPair;

/// Hard cap on the number of joint realization sequences the exact oracle
/// will enumerate.
pub const ENUMERATION_BUDGET: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    MonteCarlo { n_samples: usize },
    Enumeration,
    Moments,
}

/// Estimate of `C_T(M; M′)`: policy `eval` rolled out while the
/// perturbations follow the laws induced by `deploy`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftedExpectation {
    pub deploy: Mat,
    pub eval: Mat,
    pub estimate: f64,
    pub std_error: f64,
    pub method: Method,
}

/// How expectations over the exogenous randomness are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExpectationRoute {
    /// Sum over every joint realization sequence.
    Enumeration,
    /// Exact first/second-moment propagation (quadratic costs only).
    Moments,
    /// Average over `n_samples` realizations drawn from `seed`'s children.
    SampleAverage { n_samples: usize, seed: SeedPair },
}

pub fn total_cost(cfg: &SystemConfig, cost: &CostModel, m: &Mat, real: &Realization, x0: &Vector) -> Result<f64> {
    let (states, actions) = rollout(cfg, m, x0, real)?;
    Ok(states.iter().zip(&actions).enumerate().map(|(t, (x, u))| cost.stage_cost(t, x, u)).sum())
}

/// Monte-Carlo mean of `J_T` with its standard error. Sample `k` uses
/// `seed.child(k)`, and the mean is accumulated in index order.
pub fn expected_cost_mc(inst: &Instance, eval: &Mat, deploy: &Mat, n_samples: usize, seed: SeedPair) -> Result<ShiftedExpectation> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
    }
    let values = (0..n_samples)
        .map(|k| {
            let real = sample_realization(&inst.system, &inst.map, &inst.noise, deploy, seed.child(k as u64));
            total_cost(&inst.system, &inst.cost, eval, &real, &inst.x0)
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = n_samples as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_error = if n_samples > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Ok(ShiftedExpectation {
        deploy: deploy.clone(),
        eval: eval.clone(),
        estimate: mean,
        std_error,
        method: Method::MonteCarlo { n_samples },
    })
}

/// Visits every joint sequence `(Δ_t, w_t)_{t<T}` with its probability.
pub fn enumerate_realizations<F>(inst: &Instance, deploy: &Mat, mut visit: F) -> Result<()>
where
    F: FnMut(&Realization, f64) -> Result<()>,
{
    let cfg = &inst.system;
    let dx = cfg.d_x();
    let noise = inst.noise.support().ok_or(Error::NotEnumerable("noise model"))?;
    let deltas = (0..cfg.horizon)
        .map(|t| inst.map.support(t, deploy, dx).ok_or(Error::NotEnumerable("perturbation map")))
        .collect::<Result<Vec<_>>>()?;
    let branches: f64 = deltas.iter().map(|d| (d.len() * noise.len()) as f64).product();
    if branches > ENUMERATION_BUDGET as f64 {
        return Err(Error::BudgetExceeded {
            branches,
            budget: ENUMERATION_BUDGET,
        });
    }
    let mut real = Realization {
        deltas: Vec::with_capacity(cfg.horizon),
        noises: Vec::with_capacity(cfg.horizon),
    };
    descend(&deltas, &noise, 0, 1.0, &mut real, &mut visit)
}

fn descend<F>(deltas: &[Vec<(Mat, f64)>], noise: &[(Vector, f64)], t: usize, weight: f64, real: &mut Realization, visit: &mut F) -> Result<()>
where
    F: FnMut(&Realization, f64) -> Result<()>,
{
    if t == deltas.len() {
        return visit(real, weight);
    }
    for (d, pd) in &deltas[t] {
        for (w, pw) in noise {
            real.deltas.push(d.clone());
            real.noises.push(w.clone());
            descend(deltas, noise, t + 1, weight * pd * pw, real, visit)?;
            real.deltas.pop();
            real.noises.pop();
        }
    }
    Ok(())
}

/// Exact `C_T(M; M′)` by enumeration of all realization sequences.
pub fn expected_cost_exact(inst: &Instance, eval: &Mat, deploy: &Mat) -> Result<ShiftedExpectation> {
    let mut total = 0.0;
    enumerate_realizations(inst, deploy, |real, p| {
        total += p * total_cost(&inst.system, &inst.cost, eval, real, &inst.x0)?;
        Ok(())
    })?;
    Ok(ShiftedExpectation {
        deploy: deploy.clone(),
        eval: eval.clone(),
        estimate: total,
        std_error: 0.0,
        method: Method::Enumeration,
    })
}

/// `∇_M C_T(M; M′)` along the chosen route.
pub fn expected_gradient(inst: &Instance, eval: &Mat, deploy: &Mat, route: ExpectationRoute) -> Result<Mat> {
    let (cfg, cost, x0) = (&inst.system, &inst.cost, &inst.x0);
    match route {
        ExpectationRoute::Enumeration => {
            let mut g = Mat::zeros(eval.nrows(), eval.ncols());
            enumerate_realizations(inst, deploy, |real, p| {
                g += grad_total(cfg, cost, eval, real, x0)? * p;
                Ok(())
            })?;
            Ok(g)
        }
        ExpectationRoute::Moments => moment_gradient(inst, eval, deploy),
        ExpectationRoute::SampleAverage { n_samples, seed } => {
            let mut g = Mat::zeros(eval.nrows(), eval.ncols());
            for k in 0..n_samples {
                let real = sample_realization(cfg, &inst.map, &inst.noise, deploy, seed.child(k as u64));
                g += grad_total(cfg, cost, eval, &real, x0)?;
            }
            Ok(g / n_samples.max(1) as f64)
        }
    }
}

impl ExpectationRoute {
    /// `C_T(M; M′)` along this route.
    pub fn cost(&self, inst: &Instance, eval: &Mat, deploy: &Mat) -> Result<f64> {
        match *self {
            ExpectationRoute::Enumeration => Ok(expected_cost_exact(inst, eval, deploy)?.estimate),
            ExpectationRoute::Moments => moment_cost(inst, eval, deploy),
            ExpectationRoute::SampleAverage { n_samples, seed } => {
                Ok(expected_cost_mc(inst, eval, deploy, n_samples, seed)?.estimate)
            }
        }
    }
}

/// Central differences `(f(M + hE_ij) − f(M − hE_ij)) / 2h`.
pub fn fd_gradient<F: FnMut(&Mat) -> f64>(mut f: F, m: &Mat, h: f64) -> Mat {
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut g = Mat::zeros(m.nrows(), m.ncols());
    let mut probe = m.clone();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let base = probe[(i, j)];
            probe[(i, j)] = base + h;
            let up = f(&probe);
            probe[(i, j)] = base - h;
            let down = f(&probe);
            probe[(i, j)] = base;
            g[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    g
}
