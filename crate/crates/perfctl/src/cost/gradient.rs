use super::CostModel;
use crate::dynamics::{control_action, disturbance_window, rollout, step, Realization, SystemConfig};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

/// Gradient of `c_t(x_t, u_t)` with respect to the stacked policy matrix,
/// realizations held fixed. Each earlier window `z_i` reaches `x_t` through
/// `Π_{j=i+1}^{t−1}(Ã + Δ_j)·B`, and reaches `u_t` both through `−K x_t` and,
/// for `i = t`, directly.
pub fn grad_policy_stage(cfg: &SystemConfig, cost: &CostModel, m: &Mat, real: &Realization, x0: &Vector, t: usize) -> Result<Mat> {
    if t > cfg.horizon {
        return Err(Error::MissingRealization { what: "stage", t });
    }
    if real.deltas.len() < t || real.noises.len() < t {
        return Err(Error::MissingRealization {
            what: "realization",
            t,
        });
    }
    let (dx, h) = (cfg.d_x(), cfg.memory);
    let mut x = x0.clone();
    let mut windows = Vec::with_capacity(t + 1);
    for s in 0..=t {
        let z = disturbance_window(&real.noises, s, h, dx)?;
        if s < t {
            let u = control_action(m, &cfg.k, &x, &z)?;
            x = step(&(&cfg.a + &real.deltas[s]), &cfg.b, &x, &u, &real.noises[s]);
        }
        windows.push(z);
    }
    let u = control_action(m, &cfg.k, &x, &windows[t])?;
    let (gx, gu) = cost.stage_grads(t, &x, &u);

    let closed = cfg.closed_loop();
    let mut grad = &gu * windows[t].transpose();
    let mut phi = Mat::identity(dx, dx);
    for i in (0..t).rev() {
        if i + 1 < t {
            phi = &phi * (&closed + &real.deltas[i + 1]);
        }
        let phi_b = &phi * &cfg.b;
        let state_term = phi_b.transpose() * &gx;
        let feedback_term = (&cfg.k * &phi_b).transpose() * &gu;
        grad += (state_term - feedback_term) * windows[i].transpose();
    }
    Ok(grad)
}

/// Gradient of the realized total cost `J_T = Σ_{t=0}^{T} c_t` by a
/// backward (adjoint) sweep; equal to summing [`grad_policy_stage`] over `t`.
pub fn grad_total(cfg: &SystemConfig, cost: &CostModel, m: &Mat, real: &Realization, x0: &Vector) -> Result<Mat> {
    let (states, actions) = rollout(cfg, m, x0, real)?;
    trajectory_gradient(cfg, cost, m, &states, &actions, real)
}

/// Adjoint sweep over precomputed states `x_0..x_T` and actions `u_0..u_T`.
pub fn trajectory_gradient(
    cfg: &SystemConfig,
    cost: &CostModel,
    m: &Mat,
    states: &[Vector],
    actions: &[Vector],
    real: &Realization,
) -> Result<Mat> {
    let (dx, h, horizon) = (cfg.d_x(), cfg.memory, cfg.horizon);
    let mut grad = Mat::zeros(m.nrows(), m.ncols());
    let mut costate: Option<Vector> = None;
    for t in (0..=horizon).rev() {
        let (gx, mut gu) = cost.stage_grads(t, &states[t], &actions[t]);
        if let Some(p) = &costate {
            gu += cfg.b.transpose() * p;
        }
        let mut p = gx - cfg.k.transpose() * &gu;
        if let Some(next) = &costate {
            p += (&cfg.a + &real.deltas[t]).transpose() * next;
        }
        if t > 0 {
            let z = disturbance_window(&real.noises, t, h, dx)?;
            grad += &gu * z.transpose();
        }
        costate = Some(p);
    }
    Ok(grad)
}
