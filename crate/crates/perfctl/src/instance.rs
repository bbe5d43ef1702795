use serde::{Deserialize, Serialize};

use crate::cost::CostModel;
use crate::dynamics::{NoiseModel, PerturbationMap, SystemConfig};
use crate::error::{check_dim, ensure, Result};
use crate::linalg::Vector;

/// Everything needed to roll out and score a policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub system: SystemConfig,
    pub cost: CostModel,
    pub map: PerturbationMap,
    pub noise: NoiseModel,
    pub x0: Vector,
}

impl Instance {
    pub fn new(system: SystemConfig, cost: CostModel, map: PerturbationMap, noise: NoiseModel, x0: Vector) -> Result<Self> {
        let inst = Instance {
            system,
            cost,
            map,
            noise,
            x0,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        s.validate()?;
        self.noise.validate()?;
        check_dim("noise", s.d_x(), self.noise.dim())?;
        check_dim("initial state", s.d_x(), self.x0.len())?;
        check_dim("sensitivity schedule", s.horizon, self.map.eps.len())?;
        check_dim("support-bound schedule", s.horizon, self.map.xi.len())?;
        check_dim("state weight", s.d_x(), self.cost.q.nrows())?;
        check_dim("action weight", s.d_u(), self.cost.r.nrows())?;
        ensure(self.noise.norm_bound() <= s.noise_bound * (1.0 + 1e-12), || {
            format!("noise reaches norm {} above the declared bound {}", self.noise.norm_bound(), s.noise_bound)
        })?;
        ensure(self.x0.norm() <= s.x0_bound * (1.0 + 1e-12), || "initial state exceeds its bound".into())
    }
}
