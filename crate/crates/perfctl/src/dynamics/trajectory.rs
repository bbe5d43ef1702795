use serde::{Deserialize, Serialize};

use super::{control_action, disturbance_window, step, NoiseModel, PerturbationMap, Policy, SystemConfig};
use crate::cost::CostModel;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{Mat, Vector};
use crate::rng::{SeedPair, Stream};

/// Exogenous randomness of one rollout: `Δ_0..Δ_{T−1}` and `w_0..w_{T−1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub deltas: Vec<Mat>,
    pub noises: Vec<Vector>,
}

/// One realized run. `actions` has `T + 1` entries: the last one is the
/// action the policy would take at `x_T`, which enters the terminal stage
/// cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub states: Vec<Vector>,
    pub actions: Vec<Vector>,
    pub noises: Vec<Vector>,
    pub perturbations: Vec<Mat>,
    pub stage_costs: Vec<f64>,
    pub seed: SeedPair,
}

impl TrajectoryRecord {
    pub fn total_cost(&self) -> f64 {
        self.stage_costs.iter().sum()
    }

    pub fn realization(&self) -> Realization {
        Realization {
            deltas: self.perturbations.clone(),
            noises: self.noises.clone(),
        }
    }
}

/// Draws `Δ_t ∼ D_t(deploy)` and `w_t` for every step from separate streams.
pub fn sample_realization(
    cfg: &SystemConfig,
    map: &PerturbationMap,
    noise: &NoiseModel,
    deploy: &Mat,
    seed: SeedPair,
) -> Realization {
    let mut noise_rng = seed.rng(Stream::Noise);
    let mut delta_rng = seed.rng(Stream::Perturbation);
    let dx = cfg.d_x();
    let deltas = (0..cfg.horizon).map(|t| map.sample(t, deploy, dx, &mut delta_rng)).collect();
    let noises = (0..cfg.horizon).map(|_| noise.sample(&mut noise_rng)).collect();
    Realization { deltas, noises }
}

/// Replays a realization under policy matrix `m`; returns `x_0..x_T` and
/// `u_0..u_T`.
pub fn rollout(cfg: &SystemConfig, m: &Mat, x0: &Vector, real: &Realization) -> Result<(Vec<Vector>, Vec<Vector>)> {
    check_realization(cfg, real, cfg.horizon)?;
    let (dx, h) = (cfg.d_x(), cfg.memory);
    let mut states = Vec::with_capacity(cfg.horizon + 1);
    let mut actions = Vec::with_capacity(cfg.horizon + 1);
    let mut x = x0.clone();
    for t in 0..=cfg.horizon {
        let window = disturbance_window(&real.noises, t, h, dx)?;
        let u = control_action(m, &cfg.k, &x, &window)?;
        if t < cfg.horizon {
            let a_t = &cfg.a + &real.deltas[t];
            let next = step(&a_t, &cfg.b, &x, &u, &real.noises[t]);
            states.push(std::mem::replace(&mut x, next));
        } else {
            states.push(x.clone());
        }
        actions.push(u);
    }
    Ok((states, actions))
}

fn check_realization(cfg: &SystemConfig, real: &Realization, upto: usize) -> Result<()> {
    if real.deltas.len() < upto {
        return Err(Error::MissingRealization {
            what: "perturbation",
            t: real.deltas.len(),
        });
    }
    if real.noises.len() < upto {
        return Err(Error::MissingRealization {
            what: "noise",
            t: real.noises.len(),
        });
    }
    for d in &real.deltas[..upto] {
        check_dim("perturbation rows", cfg.d_x(), d.nrows())?;
        check_dim("perturbation columns", cfg.d_x(), d.ncols())?;
    }
    Ok(())
}

/// Rolls out policy `eval` while the perturbations follow the laws induced by
/// `deploy`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_shifted(
    cfg: &SystemConfig,
    cost: &CostModel,
    eval: &Policy,
    deploy: &Mat,
    map: &PerturbationMap,
    noise: &NoiseModel,
    x0: &Vector,
    seed: SeedPair,
) -> Result<TrajectoryRecord> {
    eval.check_shape(cfg)?;
    check_dim("initial state", cfg.d_x(), x0.len())?;
    check_dim("noise", cfg.d_x(), noise.dim())?;
    let norm = x0.norm();
    if norm > cfg.x0_bound * (1.0 + 1e-12) {
        return Err(Error::InitialState {
            norm,
            bound: cfg.x0_bound,
        });
    }
    let real = sample_realization(cfg, map, noise, deploy, seed);
    let (states, actions) = rollout(cfg, &eval.m, x0, &real)?;
    let stage_costs = states.iter().zip(&actions).enumerate().map(|(t, (x, u))| cost.stage_cost(t, x, u)).collect();
    Ok(TrajectoryRecord {
        states,
        actions,
        noises: real.noises,
        perturbations: real.deltas,
        stage_costs,
        seed,
    })
}

/// Rollout where the deployed and evaluated policies coincide.
pub fn simulate_trajectory(
    cfg: &SystemConfig,
    cost: &CostModel,
    policy: &Policy,
    map: &PerturbationMap,
    noise: &NoiseModel,
    x0: &Vector,
    seed: SeedPair,
) -> Result<TrajectoryRecord> {
    simulate_shifted(cfg, cost, policy, &policy.m, map, noise, x0, seed)
}

/// `x_t` evaluated non-recursively as a sum of transition products applied
/// to the initial state, the policy's window terms and the raw noises.
pub fn closed_form_state(cfg: &SystemConfig, m: &Mat, deltas: &[Mat], noises: &[Vector], x0: &Vector, t: usize) -> Result<Vector> {
    let real = Realization {
        deltas: deltas.to_vec(),
        noises: noises.to_vec(),
    };
    check_realization(cfg, &real, t)?;
    let dx = cfg.d_x();
    let closed = cfg.closed_loop();
    // product over j in (from, t) of (Ã + Δ_j), later factors on the left
    let transition = |from_exclusive: Option<usize>| -> Mat {
        let start = from_exclusive.map_or(0, |i| i + 1);
        let mut p = Mat::identity(dx, dx);
        for j in start..t {
            p = (&closed + &deltas[j]) * p;
        }
        p
    };
    let mut x = transition(None) * x0;
    for i in 0..t {
        let phi = transition(Some(i));
        let window = disturbance_window(noises, i, cfg.memory, dx)?;
        x += &phi * (&cfg.b * (m * window) + &noises[i]);
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system() -> SystemConfig {
        SystemConfig {
            a: Mat::from_row_slice(2, 2, &[0.6, 0.2, -0.1, 0.5]),
            b: Mat::from_row_slice(2, 1, &[1.0, 0.5]),
            k: Mat::from_row_slice(1, 2, &[0.1, 0.0]),
            horizon: 6,
            memory: 2,
            noise_bound: 1.0,
            x0_bound: 1.0,
            sigma2: 0.25,
            kappa: 1.0,
            gamma: 0.3,
        }
    }

    fn realization(cfg: &SystemConfig) -> Realization {
        let deltas = (0..cfg.horizon)
            .map(|t| Mat::from_fn(2, 2, |i, j| 0.01 * (t as f64 + 1.0) * (i as f64 - j as f64)))
            .collect();
        let noises = (0..cfg.horizon)
            .map(|t| Vector::from_row_slice(&[(t as f64).sin(), (t as f64).cos()]) * 0.5)
            .collect();
        Realization { deltas, noises }
    }

    #[test]
    fn rollout_agrees_with_closed_form() {
        let cfg = system();
        let real = realization(&cfg);
        let m = Mat::from_row_slice(1, 4, &[0.3, -0.2, 0.1, 0.4]);
        let x0 = Vector::from_row_slice(&[0.5, -0.3]);
        let (states, actions) = rollout(&cfg, &m, &x0, &real).unwrap();
        assert_eq!(states.len(), cfg.horizon + 1);
        assert_eq!(actions.len(), cfg.horizon + 1);
        for (t, x) in states.iter().enumerate() {
            let closed = closed_form_state(&cfg, &m, &real.deltas, &real.noises, &x0, t).unwrap();
            assert!((x - closed).amax() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn short_realization_is_rejected() {
        let cfg = system();
        let mut real = realization(&cfg);
        real.noises.pop();
        let err = rollout(&cfg, &Mat::zeros(1, 4), &Vector::zeros(2), &real).unwrap_err();
        assert!(matches!(err, Error::MissingRealization { what: "noise", .. }));
    }
}
