//! Linear system `x_{t+1} = (A + Δ_t) x_t + B u_t + w_t` driven by a
//! disturbance-action policy, where the law of `Δ_t` depends on the policy
//! being deployed.

mod noise;
mod perturbation;
mod stability;
mod trajectory;

pub use noise::NoiseModel;
pub use perturbation::{PerturbationKind, PerturbationMap, ScaledFactor, VolatilityLaw};
pub use stability::{alpha_beta, check_strong_stability, state_norm_bound, StabilityCertificate, Verdict};
pub use trajectory::{
    closed_form_state, rollout, sample_realization, simulate_shifted, simulate_trajectory, Realization,
    TrajectoryRecord,
};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, ensure, Result};
use crate::linalg::{Mat, Vector};

/// Static description of the controlled system and its certificate data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub a: Mat,
    pub b: Mat,
    pub k: Mat,
    /// Horizon `T`.
    pub horizon: usize,
    /// Policy memory `H`.
    pub memory: usize,
    /// Bound on `‖w_t‖`.
    pub noise_bound: f64,
    /// Bound on `‖x_0‖`.
    pub x0_bound: f64,
    /// Lower bound on the smallest eigenvalue of the noise covariance.
    pub sigma2: f64,
    pub kappa: f64,
    pub gamma: f64,
}

impl SystemConfig {
    pub fn d_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn d_u(&self) -> usize {
        self.b.ncols()
    }

    /// Width of the stacked disturbance window, `H·d_x`.
    pub fn window_len(&self) -> usize {
        self.memory * self.d_x()
    }

    /// `A − BK`.
    pub fn closed_loop(&self) -> Mat {
        &self.a - &self.b * &self.k
    }

    pub fn validate(&self) -> Result<()> {
        let dx = self.d_x();
        ensure(dx >= 1 && self.d_u() >= 1, || "empty state or action space".into())?;
        check_dim("A columns", dx, self.a.ncols())?;
        check_dim("B rows", dx, self.b.nrows())?;
        check_dim("K rows", self.d_u(), self.k.nrows())?;
        check_dim("K columns", dx, self.k.ncols())?;
        ensure(self.memory >= 1 && self.memory < self.horizon, || {
            format!("need 1 <= H < T, got H={} T={}", self.memory, self.horizon)
        })?;
        ensure(self.kappa >= 1.0, || format!("kappa must be >= 1, got {}", self.kappa))?;
        ensure(self.gamma > 0.0 && self.gamma < 1.0, || {
            format!("gamma must lie in (0,1), got {}", self.gamma)
        })?;
        ensure(self.noise_bound > 0.0, || "noise bound must be positive".into())?;
        ensure(self.x0_bound >= 0.0, || "x0 bound must be nonnegative".into())?;
        ensure(self.sigma2 >= 0.0, || "sigma2 must be nonnegative".into())?;
        let finite = [&self.a, &self.b, &self.k].iter().all(|m| m.iter().all(|v| v.is_finite()));
        ensure(finite, || "system matrices must be finite".into())
    }
}

/// Feasible set for the stacked policy matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeasibleSet {
    /// `‖M‖_F ≤ radius`.
    FrobeniusBall { radius: f64 },
    /// Every row nonnegative and summing to `scale`.
    RowSimplex { scale: f64 },
    /// `M = diag(m, …, m)` with `copies` equal diagonal blocks and `m` in a
    /// row simplex; the portfolio policy acting on both halves of the stacked
    /// disturbance.
    TiedRowSimplex { copies: usize, scale: f64 },
    /// Tied blocks whose rows only sum to `scale`; entries may be negative,
    /// so the set is unbounded.
    TiedRowAffine { copies: usize, scale: f64 },
}

impl FeasibleSet {
    /// Largest Frobenius norm of a feasible `rows × cols` matrix.
    pub fn radius(&self, rows: usize) -> f64 {
        match *self {
            FeasibleSet::FrobeniusBall { radius } => radius,
            FeasibleSet::RowSimplex { scale } | FeasibleSet::TiedRowSimplex { scale, .. } => {
                (rows as f64).sqrt() * scale
            }
            FeasibleSet::TiedRowAffine { .. } => f64::INFINITY,
        }
    }

    pub fn contains(&self, m: &Mat, tol: f64) -> bool {
        match *self {
            FeasibleSet::FrobeniusBall { radius } => m.norm() <= radius * (1.0 + tol) + tol,
            FeasibleSet::RowSimplex { scale } => rows_in_simplex(m, scale, tol),
            FeasibleSet::TiedRowSimplex { copies, scale } => {
                tied_first_block(m, copies, tol).is_some_and(|first| rows_in_simplex(&first, scale, tol))
            }
            FeasibleSet::TiedRowAffine { copies, scale } => tied_first_block(m, copies, tol)
                .is_some_and(|first| first.row_iter().all(|r| (r.sum() - scale).abs() <= tol * scale.abs().max(1.0))),
        }
    }
}

/// The repeated diagonal block of a block-diagonal `m`, if it has that shape.
fn tied_first_block(m: &Mat, copies: usize, tol: f64) -> Option<Mat> {
    if copies == 0 || !m.nrows().is_multiple_of(copies) || m.nrows() != m.ncols() {
        return None;
    }
    let n = m.nrows() / copies;
    let first = m.view((0, 0), (n, n)).clone_owned();
    for bi in 0..copies {
        for bj in 0..copies {
            let blk = m.view((bi * n, bj * n), (n, n));
            let ok = if bi == bj {
                (blk - &first).amax() <= tol
            } else {
                blk.amax() <= tol
            };
            if !ok {
                return None;
            }
        }
    }
    Some(first)
}

fn rows_in_simplex(m: &Mat, scale: f64, tol: f64) -> bool {
    m.row_iter().all(|row| {
        row.iter().all(|&v| v >= 0.0) && (row.iter().sum::<f64>() - scale).abs() <= tol * scale.max(1.0)
    })
}

/// Disturbance-action policy: `u_t = −K x_t + M·[w_{t−1}; …; w_{t−H}]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// Horizontal concatenation `[M⁽¹⁾ … M⁽ᴴ⁾]`, `d_u × H·d_x`.
    pub m: Mat,
    pub set: FeasibleSet,
}

impl Policy {
    pub fn new(m: Mat, set: FeasibleSet) -> Result<Self> {
        let p = Policy { m, set };
        ensure(p.set.contains(&p.m, 1e-9), || "policy is outside its feasible set".into())?;
        Ok(p)
    }

    pub fn zeros(cfg: &SystemConfig, set: FeasibleSet) -> Self {
        Policy {
            m: Mat::zeros(cfg.d_u(), cfg.window_len()),
            set,
        }
    }

    /// The `H` blocks `M⁽¹⁾ … M⁽ᴴ⁾`, each `d_u × d_x`.
    pub fn blocks(&self, d_x: usize) -> Vec<Mat> {
        (0..self.m.ncols() / d_x).map(|i| self.m.columns(i * d_x, d_x).clone_owned()).collect()
    }

    pub fn radius(&self) -> f64 {
        self.set.radius(self.m.nrows())
    }

    pub fn check_shape(&self, cfg: &SystemConfig) -> Result<()> {
        check_dim("policy rows", cfg.d_u(), self.m.nrows())?;
        check_dim("policy columns", cfg.window_len(), self.m.ncols())
    }
}

/// Stacked window `[w_{t−1}; …; w_{t−H}]`, zero-padded for negative indices.
pub fn disturbance_window(noises: &[Vector], t: usize, memory: usize, d_x: usize) -> Result<Vector> {
    let mut out = Vector::zeros(memory * d_x);
    for lag in 1..=memory {
        if lag > t {
            break;
        }
        let w = noises.get(t - lag).ok_or(crate::Error::MissingRealization {
            what: "noise",
            t: t - lag,
        })?;
        check_dim("noise", d_x, w.len())?;
        out.rows_mut((lag - 1) * d_x, d_x).copy_from(w);
    }
    Ok(out)
}

/// `−K x + M·window`.
pub fn control_action(m: &Mat, k: &Mat, x: &Vector, window: &Vector) -> Result<Vector> {
    check_dim("window", m.ncols(), window.len())?;
    check_dim("state", k.ncols(), x.len())?;
    Ok(m * window - k * x)
}

/// `A_t x + B u + w`.
pub fn step(a_t: &Mat, b: &Mat, x: &Vector, u: &Vector, w: &Vector) -> Vector {
    a_t * x + b * u + w
}
