//! Exact expected cost for quadratic stage costs by propagating the second
//! moment of the augmented state `y_t = (x_t, z_t, 1)`, where `z_t` is the
//! disturbance window. Perturbation and noise enter only through their first
//! two moments, so continuous laws are handled without sampling.

use crate::error::Result;
use crate::instance::Instance;
use crate::linalg::Mat;

struct Layout {
    dx: usize,
    h: usize,
    n: usize,
}

impl Layout {
    fn new(inst: &Instance) -> Self {
        let dx = inst.system.d_x();
        let h = inst.system.memory;
        Layout {
            dx,
            h,
            n: dx * (h + 1) + 1,
        }
    }

    fn one(&self) -> usize {
        self.n - 1
    }
}

/// Mean transition of `y` at step `t`.
fn mean_transition(inst: &Instance, lay: &Layout, m: &Mat, deploy: &Mat, t: usize) -> Mat {
    let cfg = &inst.system;
    let (dx, n) = (lay.dx, lay.n);
    let mean_w = inst.noise.mean();
    let mut f = Mat::zeros(n, n);
    let closed = &cfg.a + inst.map.mean(t, deploy, dx) - &cfg.b * &cfg.k;
    f.view_mut((0, 0), (dx, dx)).copy_from(&closed);
    f.view_mut((0, dx), (dx, dx * lay.h)).copy_from(&(&cfg.b * m));
    f.view_mut((0, lay.one()), (dx, 1)).copy_from(&mean_w);
    f.view_mut((dx, lay.one()), (dx, 1)).copy_from(&mean_w);
    for j in 1..lay.h {
        f.view_mut((dx * (j + 1), dx * j), (dx, dx)).fill_with_identity();
    }
    f[(lay.one(), lay.one())] = 1.0;
    f
}

/// Covariance injected by the centred noise into `x_{t+1}` and the newest
/// window block.
fn noise_injection(inst: &Instance, lay: &Layout) -> Mat {
    let dx = lay.dx;
    let cov = inst.noise.covariance();
    let mut g = Mat::zeros(lay.n, dx);
    g.view_mut((0, 0), (dx, dx)).fill_with_identity();
    g.view_mut((dx, 0), (dx, dx)).fill_with_identity();
    &g * cov * g.transpose()
}

/// `C` with `c_t = yᵀ C y`.
fn cost_matrix(inst: &Instance, lay: &Layout, m: &Mat) -> (Mat, Mat) {
    let cfg = &inst.system;
    let dx = lay.dx;
    let mut u = Mat::zeros(cfg.d_u(), lay.n);
    u.view_mut((0, 0), (cfg.d_u(), dx)).copy_from(&(-&cfg.k));
    u.view_mut((0, dx), (cfg.d_u(), dx * lay.h)).copy_from(m);
    let mut c = u.transpose() * &inst.cost.r * &u;
    let mut qx = c.view_mut((0, 0), (dx, dx));
    qx += &inst.cost.q;
    (c, u)
}

fn initial_moment(inst: &Instance, lay: &Layout) -> Mat {
    let mut y0 = crate::linalg::Vector::zeros(lay.n);
    y0.rows_mut(0, lay.dx).copy_from(&inst.x0);
    y0[lay.one()] = 1.0;
    &y0 * y0.transpose()
}

fn forward(inst: &Instance, lay: &Layout, m: &Mat, deploy: &Mat) -> (Vec<Mat>, Vec<Mat>) {
    let horizon = inst.system.horizon;
    let inject = noise_injection(inst, lay);
    let mut moments = Vec::with_capacity(horizon + 1);
    let mut transitions = Vec::with_capacity(horizon);
    let mut s = initial_moment(inst, lay);
    for t in 0..horizon {
        let f = mean_transition(inst, lay, m, deploy, t);
        let sxx = s.view((0, 0), (lay.dx, lay.dx)).clone_owned();
        let mut next = &f * &s * f.transpose() + &inject;
        let mut top = next.view_mut((0, 0), (lay.dx, lay.dx));
        top += inst.map.centred_second_moment(t, deploy, &sxx);
        moments.push(std::mem::replace(&mut s, next));
        transitions.push(f);
    }
    moments.push(s);
    (moments, transitions)
}

/// Exact `C_T(M; M′)` for quadratic stage costs.
pub fn moment_cost(inst: &Instance, eval: &Mat, deploy: &Mat) -> Result<f64> {
    inst.system.validate()?;
    let lay = Layout::new(inst);
    let (c, _) = cost_matrix(inst, &lay, eval);
    let (moments, _) = forward(inst, &lay, eval, deploy);
    Ok(moments.iter().map(|s| c.component_mul(s).sum()).sum())
}

/// Exact `∇_M C_T(M; M′)` by a backward sweep over the moment recursion.
pub fn moment_gradient(inst: &Instance, eval: &Mat, deploy: &Mat) -> Result<Mat> {
    inst.system.validate()?;
    let cfg = &inst.system;
    let lay = Layout::new(inst);
    let (dx, wl) = (lay.dx, lay.dx * lay.h);
    let (c, u) = cost_matrix(inst, &lay, eval);
    let (moments, transitions) = forward(inst, &lay, eval, deploy);
    let ru = &inst.cost.r * &u;
    let mut grad = Mat::zeros(eval.nrows(), eval.ncols());
    let mut lam = c.clone();
    for t in (0..=cfg.horizon).rev() {
        let s = &moments[t];
        grad += (&ru * s).columns(dx, wl) * 2.0;
        if t < cfg.horizon {
            let f = &transitions[t];
            let sens = &lam * f * s;
            grad += cfg.b.transpose() * sens.view((0, dx), (dx, wl)) * 2.0;
            let lxx = lam.view((0, 0), (dx, dx)).clone_owned();
            let mut prev = &c + f.transpose() * &lam * f;
            let mut top = prev.view_mut((0, 0), (dx, dx));
            top += inst.map.centred_adjoint_moment(t, deploy, &lxx);
            lam = prev;
        }
    }
    Ok(grad)
}
