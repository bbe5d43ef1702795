//! TOML run configuration shared by the command-line front end.
//!
//! A file describes either a generic instance (`[system]`, `[cost]`,
//! `[noise]`, optional `[perturbation]`) or the stock market (`[stock]` with
//! an optional `[schedule]`). Unknown keys are rejected everywhere.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_stock_instance, paper_schedules, SensitivitySchedule, StockMarketConfig};
use crate::analysis::{compute_constants, plan_diminishing_steps, find_diminishing_plan, validate_step_sizes_general, ConstantsBundle, SensitivityProfile, StepKind, StepSizePlan};
use crate::cost::{CostModel, ExpectationRoute};
use crate::dynamics::{FeasibleSet, NoiseModel, PerturbationMap, Policy, ScaledFactor, SystemConfig};
use crate::error::{ensure, Error, Result};
use crate::instance::Instance;
use crate::linalg::{Mat, Vector};
use crate::rng::SeedPair;

type Rows = Vec<Vec<f64>>;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub system: Option<SystemSection>,
    pub cost: Option<CostSection>,
    pub noise: Option<NoiseSection>,
    #[serde(default)]
    pub perturbation: PerturbationSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub rsgd: RsgdSection,
    #[serde(default)]
    pub rrm: RrmSection,
    pub stock: Option<StockMarketConfig>,
    pub schedule: Option<ScheduleSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub a: Rows,
    pub b: Rows,
    /// Defaults to zero.
    pub k: Option<Rows>,
    pub horizon: usize,
    pub memory: usize,
    pub kappa: f64,
    pub gamma: f64,
    /// Defaults to the origin.
    pub x0: Option<Vec<f64>>,
    /// Defaults to the largest noise norm.
    pub noise_bound: Option<f64>,
    /// Defaults to the norm of `x0`.
    pub x0_bound: Option<f64>,
    /// Defaults to the smallest noise covariance eigenvalue.
    pub sigma2: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub q: Rows,
    pub r: Rows,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSection {
    Zero,
    /// Independent `±scale` coordinates.
    Rademacher { scale: f64 },
    /// `±scale·e_i`.
    AxisPairs { scale: f64 },
    /// Entry `i` uniform on `[-half_width[i], half_width[i]]`.
    UniformBox { half_width: Vec<f64> },
    Discrete { atoms: Vec<Vec<f64>>, probs: Vec<f64> },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationSection {
    #[default]
    Null,
    ScaledFactor {
        /// One gain per step; the declared sensitivity is the gain times the
        /// mean atom norm.
        gains: Vec<f64>,
        direction: Rows,
        #[serde(default)]
        offset: f64,
        atoms: Vec<Rows>,
        probs: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSection {
    Ball { radius: f64 },
    RowSimplex { scale: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    #[serde(default = "default_set")]
    pub set: SetSection,
    /// Starting policy; defaults to the projection of zero.
    pub init: Option<Rows>,
}

fn default_set() -> SetSection {
    SetSection::Ball { radius: 1.0 }
}

impl Default for PolicySection {
    fn default() -> Self {
        PolicySection {
            set: default_set(),
            init: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSection {
    Diminishing { phi1: f64, phi2: f64 },
    /// Searches `φ2 = 10^k` for a valid diminishing plan.
    Auto {
        #[serde(default = "default_max_exponent")]
        max_exponent: u32,
    },
    Constant { eta: f64 },
}

fn default_max_exponent() -> u32 {
    12
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RouteSection {
    Enumeration,
    Moments,
    SampleAverage { n_samples: usize },
}

impl RouteSection {
    pub fn route(self, seed: SeedPair) -> ExpectationRoute {
        match self {
            RouteSection::Enumeration => ExpectationRoute::Enumeration,
            RouteSection::Moments => ExpectationRoute::Moments,
            RouteSection::SampleAverage { n_samples } => ExpectationRoute::SampleAverage { n_samples, seed },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsgdSection {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_steps")]
    pub steps: StepSection,
    /// Reject plans that fail the convergence conditions.
    #[serde(default = "default_true")]
    pub validate: bool,
    #[serde(default = "default_one")]
    pub log_every: usize,
    #[serde(default = "default_one")]
    pub batch: usize,
    /// Route for the stable-policy reference behind the error column.
    pub reference: Option<RouteSection>,
    #[serde(default = "default_reference_tol")]
    pub reference_tol: f64,
    /// Route for the logged expected cost.
    pub cost_eval: Option<RouteSection>,
}

fn default_iterations() -> usize {
    1000
}

fn default_steps() -> StepSection {
    StepSection::Auto {
        max_exponent: default_max_exponent(),
    }
}

fn default_true() -> bool {
    true
}

fn default_one() -> usize {
    1
}

fn default_reference_tol() -> f64 {
    1e-10
}

impl Default for RsgdSection {
    fn default() -> Self {
        RsgdSection {
            iterations: default_iterations(),
            steps: default_steps(),
            validate: true,
            log_every: 1,
            batch: 1,
            reference: None,
            reference_tol: default_reference_tol(),
            cost_eval: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RrmSection {
    #[serde(default = "default_rrm_iters")]
    pub max_iters: usize,
    #[serde(default = "default_reference_tol")]
    pub tol: f64,
    /// Defaults to a tenth of `tol`.
    pub inner_tol: Option<f64>,
    #[serde(default = "default_route")]
    pub route: RouteSection,
}

fn default_rrm_iters() -> usize {
    100
}

fn default_route() -> RouteSection {
    RouteSection::Enumeration
}

impl Default for RrmSection {
    fn default() -> Self {
        RrmSection {
            max_iters: default_rrm_iters(),
            tol: default_reference_tol(),
            inner_tol: None,
            route: default_route(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "order", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSection {
    Ascend,
    Descend,
    Random,
    Explicit { values: Vec<f64> },
    File { path: String },
}

impl ScheduleSection {
    pub fn resolve(&self, days: usize) -> Result<SensitivitySchedule> {
        let pick = |name: &str| -> Result<SensitivitySchedule> {
            Ok(paper_schedules(days)?.by_name(name).expect("known order").clone())
        };
        match self {
            ScheduleSection::Ascend => pick("ascend"),
            ScheduleSection::Descend => pick("descend"),
            ScheduleSection::Random => pick("random"),
            ScheduleSection::Explicit { values } => SensitivitySchedule::explicit(values.clone()),
            ScheduleSection::File { path } => SensitivitySchedule::parse(&std::fs::read_to_string(path)?),
        }
    }
}

/// A resolved instance together with its feasible set.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub instance: Instance,
    pub set: FeasibleSet,
}

impl Problem {
    pub fn constants(&self) -> Result<ConstantsBundle> {
        let inst = &self.instance;
        let profile = SensitivityProfile::new(inst.map.eps.clone(), inst.map.xi.clone());
        compute_constants(&inst.system, (&inst.cost).into(), &profile, self.set.radius(inst.system.d_u()))
    }
}

pub fn mat_from_rows(what: &str, rows: &[Vec<f64>]) -> Result<Mat> {
    ensure(!rows.is_empty() && !rows[0].is_empty(), || format!("{what} is empty"))?;
    let cols = rows[0].len();
    ensure(rows.iter().all(|r| r.len() == cols), || format!("{what} has ragged rows"))?;
    ensure(rows.iter().flatten().all(|v| v.is_finite()), || format!("{what} has non-finite entries"))?;
    Ok(Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn seed_pair(&self) -> SeedPair {
        SeedPair::new(self.seed, 0)
    }

    /// Stock parameters with the top-level seed applied.
    pub fn stock_config(&self) -> Option<StockMarketConfig> {
        self.stock.clone().map(|s| StockMarketConfig { seed: self.seed, ..s })
    }

    pub fn problem(&self) -> Result<Problem> {
        if let Some(sys) = &self.system {
            return self.generic_problem(sys);
        }
        let Some(stock) = self.stock_config() else {
            return Err(Error::InvalidConfig("config needs a [system] or a [stock] section".into()));
        };
        let schedule = self.schedule.clone().unwrap_or(ScheduleSection::Ascend).resolve(stock.days)?;
        Ok(Problem {
            instance: build_stock_instance(&stock, &schedule)?,
            set: stock.feasible_set(),
        })
    }

    fn generic_problem(&self, sys: &SystemSection) -> Result<Problem> {
        let a = mat_from_rows("system.a", &sys.a)?;
        let b = mat_from_rows("system.b", &sys.b)?;
        let (dx, du) = (a.nrows(), b.ncols());
        let k = match &sys.k {
            Some(k) => mat_from_rows("system.k", k)?,
            None => Mat::zeros(du, dx),
        };
        let noise = match self.noise.as_ref().ok_or_else(|| Error::InvalidConfig("missing [noise]".into()))? {
            NoiseSection::Zero => NoiseModel::Zero { dim: dx },
            NoiseSection::Rademacher { scale } => NoiseModel::rademacher(dx, *scale),
            NoiseSection::AxisPairs { scale } => NoiseModel::axis_pairs(dx, *scale),
            NoiseSection::UniformBox { half_width } => NoiseModel::UniformBox {
                lo: half_width.iter().map(|h| -h).collect(),
                hi: half_width.clone(),
            },
            NoiseSection::Discrete { atoms, probs } => NoiseModel::Discrete {
                atoms: atoms.iter().map(|a| Vector::from_column_slice(a)).collect(),
                probs: probs.clone(),
            },
        };
        noise.validate()?;
        let x0 = match &sys.x0 {
            Some(v) => Vector::from_column_slice(v),
            None => Vector::zeros(dx),
        };
        let system = SystemConfig {
            a,
            b,
            k,
            horizon: sys.horizon,
            memory: sys.memory,
            noise_bound: sys.noise_bound.unwrap_or_else(|| noise.norm_bound()),
            x0_bound: sys.x0_bound.unwrap_or_else(|| x0.norm()),
            sigma2: sys.sigma2.unwrap_or_else(|| noise.covariance_floor()),
            kappa: sys.kappa,
            gamma: sys.gamma,
        };
        let cost_sec = self.cost.as_ref().ok_or_else(|| Error::InvalidConfig("missing [cost]".into()))?;
        let cost = CostModel::quadratic(mat_from_rows("cost.q", &cost_sec.q)?, mat_from_rows("cost.r", &cost_sec.r)?)?;
        let map = match &self.perturbation {
            PerturbationSection::Null => PerturbationMap::null(sys.horizon),
            PerturbationSection::ScaledFactor {
                gains,
                direction,
                offset,
                atoms,
                probs,
            } => PerturbationMap::scaled_factor(ScaledFactor {
                gains: gains.clone(),
                direction: mat_from_rows("perturbation.direction", direction)?,
                offset: *offset,
                atoms: atoms
                    .iter()
                    .map(|a| mat_from_rows("perturbation.atoms", a))
                    .collect::<Result<_>>()?,
                probs: probs.clone(),
            })?,
        };
        let set = match self.policy.set {
            SetSection::Ball { radius } => FeasibleSet::FrobeniusBall { radius },
            SetSection::RowSimplex { scale } => FeasibleSet::RowSimplex { scale },
        };
        Ok(Problem {
            instance: Instance::new(system, cost, map, noise, x0)?,
            set,
        })
    }

    /// Configured starting policy, projected onto the feasible set.
    pub fn initial_policy(&self, problem: &Problem) -> Result<Policy> {
        let cfg = &problem.instance.system;
        let raw = match &self.policy.init {
            Some(rows) => {
                let m = mat_from_rows("policy.init", rows)?;
                ensure(m.shape() == (cfg.d_u(), cfg.window_len()), || {
                    format!("policy.init must be {}x{}", cfg.d_u(), cfg.window_len())
                })?;
                m
            }
            None => Policy::zeros(cfg, problem.set).m,
        };
        crate::solvers::project_policy(&raw, &problem.set)
    }

    /// Step plan for RSGD; validated against the convergence conditions
    /// unless validation is switched off.
    pub fn step_plan(&self, problem: &Problem) -> Result<StepSizePlan> {
        let r = &self.rsgd;
        if !r.validate {
            let kind = match r.steps {
                StepSection::Diminishing { phi1, phi2 } => StepKind::Diminishing { phi1, phi2 },
                StepSection::Constant { eta } => StepKind::Constant { eta },
                StepSection::Auto { .. } => {
                    return Err(Error::InvalidConfig("automatic steps need validation switched on".into()))
                }
            };
            return Ok(StepSizePlan::unchecked(kind));
        }
        let bundle = problem.constants()?;
        let plan = match r.steps {
            StepSection::Diminishing { phi1, phi2 } => plan_diminishing_steps(&bundle, phi1, phi2)?,
            StepSection::Constant { eta } => validate_step_sizes_general(&bundle, &StepKind::Constant { eta }, r.iterations)?,
            StepSection::Auto { max_exponent } => find_diminishing_plan(&bundle, max_exponent).ok_or_else(|| {
                Error::InvalidPlan(vec![format!("no valid diminishing plan with phi2 <= 1e{max_exponent}")])
            })?,
        };
        if plan.is_invalid() {
            return Err(Error::InvalidPlan(plan.violated));
        }
        Ok(plan)
    }
}
