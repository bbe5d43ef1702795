use serde::{Deserialize, Serialize};

use super::projection::{project_matrix, tie_blocks};
use crate::cost::{expected_gradient, ExpectationRoute};
use crate::dynamics::{FeasibleSet, Policy};
use crate::error::{ensure, Result};
use crate::instance::Instance;
use crate::linalg::{sym_eig_range, Mat, Vector};

/// Budget and accuracy target for the inner minimization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerBudget {
    /// Accelerated projected-gradient steps per model solve.
    pub max_iters: usize,
    /// Target for the projected-gradient step `‖θ − P(θ − ∇/L)‖`, which is
    /// measured in policy units and so independent of the cost scale.
    pub tol: f64,
    pub route: ExpectationRoute,
    /// Extra model rebuilds when the verified residual misses `tol`.
    pub refinements: usize,
}

impl InnerBudget {
    pub fn new(tol: f64, route: ExpectationRoute) -> Self {
        InnerBudget {
            max_iters: 200_000,
            tol,
            route,
            refinements: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerSolution {
    pub policy: Policy,
    /// Projected-gradient step at `policy`, from a fresh gradient.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Free coordinates of a feasible set's ambient space.
#[derive(Clone, Copy, Debug)]
enum Core {
    Full { rows: usize, cols: usize, set: FeasibleSet },
    Tied { copies: usize, n: usize, block: FeasibleSet },
}

impl Core {
    fn new(set: &FeasibleSet, shape: (usize, usize)) -> Result<Self> {
        // one block of a tied set is the same set with a single copy
        let (copies, block) = match *set {
            FeasibleSet::TiedRowSimplex { copies, scale } => (copies, FeasibleSet::TiedRowSimplex { copies: 1, scale }),
            FeasibleSet::TiedRowAffine { copies, scale } => (copies, FeasibleSet::TiedRowAffine { copies: 1, scale }),
            _ => {
                return Ok(Core::Full {
                    rows: shape.0,
                    cols: shape.1,
                    set: *set,
                })
            }
        };
        ensure(copies > 0 && shape.0 == shape.1 && shape.0.is_multiple_of(copies), || {
            "tied policy must be square with equal diagonal blocks".into()
        })?;
        Ok(Core::Tied {
            copies,
            n: shape.0 / copies,
            block,
        })
    }

    fn embed(&self, theta: &Vector) -> Mat {
        match *self {
            Core::Full { rows, cols, .. } => Mat::from_column_slice(rows, cols, theta.as_slice()),
            Core::Tied { copies, n, .. } => tie_blocks(&Mat::from_column_slice(n, n, theta.as_slice()), copies),
        }
    }

    fn restrict(&self, m: &Mat) -> Vector {
        match *self {
            Core::Full { .. } => Vector::from_column_slice(m.as_slice()),
            Core::Tied { n, .. } => Vector::from_column_slice(m.view((0, 0), (n, n)).clone_owned().as_slice()),
        }
    }

    /// Gradient in core coordinates from the ambient gradient.
    fn reduce(&self, g: &Mat) -> Vector {
        match *self {
            Core::Full { .. } => Vector::from_column_slice(g.as_slice()),
            Core::Tied { copies, n, .. } => {
                let mut acc = Mat::zeros(n, n);
                for b in 0..copies {
                    acc += g.view((b * n, b * n), (n, n));
                }
                Vector::from_column_slice(acc.as_slice())
            }
        }
    }

    fn project(&self, theta: &Vector) -> Result<Vector> {
        match *self {
            Core::Full { rows, cols, set } => {
                let m = project_matrix(&Mat::from_column_slice(rows, cols, theta.as_slice()), &set)?;
                Ok(Vector::from_column_slice(m.as_slice()))
            }
            Core::Tied { n, block, .. } => {
                let m = Mat::from_column_slice(n, n, theta.as_slice());
                let p = project_matrix(&m, &block)?;
                Ok(Vector::from_column_slice(p.as_slice()))
            }
        }
    }
}

/// Approximates `argmin_M C_T(M; deploy)` over `start.set`. The objective is
/// quadratic in `M`, so an exact model is assembled from gradient probes and
/// minimized by accelerated projected gradient; the residual is then checked
/// against a fresh gradient and the model rebuilt if needed.
pub fn minimize_shifted(inst: &Instance, deploy: &Mat, start: &Policy, budget: &InnerBudget) -> Result<InnerSolution> {
    ensure(budget.max_iters > 0 && budget.tol > 0.0, || "inner budget must be positive".into())?;
    start.check_shape(&inst.system)?;
    let core = Core::new(&start.set, start.m.shape())?;
    let grad = |theta: &Vector| -> Result<Vector> {
        Ok(core.reduce(&expected_gradient(inst, &core.embed(theta), deploy, budget.route)?))
    };

    let mut theta = core.project(&core.restrict(&start.m))?;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    for _ in 0..=budget.refinements {
        let g0 = grad(&theta)?;
        let p = theta.len();
        let mut hess = Mat::zeros(p, p);
        for i in 0..p {
            let mut probe = theta.clone();
            probe[i] += 1.0;
            hess.set_column(i, &(grad(&probe)? - &g0));
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        let top = sym_eig_range(&hess).1;
        let lip = if top > 0.0 { top } else { 1.0 };

        let model = |x: &Vector| &g0 + &hess * (x - &theta);
        let (next, used) = accelerated_descent(&core, &theta, model, lip, budget.tol / 10.0, budget.max_iters)?;
        iterations += used;
        theta = next;
        residual = mapping_norm(&core, &theta, &grad(&theta)?, lip)?;
        if residual <= budget.tol {
            break;
        }
    }
    Ok(InnerSolution {
        policy: Policy {
            m: core.embed(&theta),
            set: start.set,
        },
        residual,
        iterations,
        converged: residual <= budget.tol,
    })
}

/// `‖θ − P(θ − g/L)‖`.
fn mapping_norm(core: &Core, theta: &Vector, g: &Vector, lip: f64) -> Result<f64> {
    Ok((theta - core.project(&(theta - g / lip))?).norm())
}

/// FISTA with gradient-based restart.
fn accelerated_descent<G>(core: &Core, start: &Vector, grad: G, lip: f64, tol: f64, max_iters: usize) -> Result<(Vector, usize)>
where
    G: Fn(&Vector) -> Vector,
{
    let mut x = start.clone();
    let mut y = start.clone();
    let mut momentum: f64 = 1.0;
    for k in 0..max_iters {
        let next = core.project(&(&y - grad(&y) / lip))?;
        if (&y - &next).norm() <= tol {
            // y already solves the model; keep it exactly when it is the
            // untouched start so fixed points are reproduced bitwise
            return Ok((if k == 0 { y } else { next }, k + 1));
        }
        let mut m_next = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        if (&y - &next).dot(&(&next - &x)) > 0.0 {
            m_next = 1.0;
            y = next.clone();
        } else {
            y = &next + (&next - &x) * ((momentum - 1.0) / m_next);
        }
        x = next;
        momentum = m_next;
    }
    Ok((x, max_iters))
}
