//! The stock-investment instance, its sensitivity schedules, experiment
//! orchestration and file formats.

pub mod config;
pub mod io;
mod schedule;
mod stock;

pub use schedule::{paper_schedules, shuffled, PaperSchedules, ScheduleOrder, SensitivitySchedule, ASSET_CHECKSUMS, ASSET_DAYS};
pub use stock::{
    build_stock_instance, degenerate_days, random_stock_policy, sample_volatility_perturbation,
    StockMarketConfig, StockRegime,
};

use serde::{Deserialize, Serialize};

use crate::analysis::{check_psc_condition, compute_constants, ConditionReport, SensitivityProfile, StepKind, StepSizePlan};
use crate::cost::ExpectationRoute;
use crate::error::Result;
use crate::instance::Instance;
use crate::linalg::Mat;
use crate::rng::SeedPair;
use crate::solvers::{reference_by_route, rsgd_run, RsgdConfig, TraceRow};

/// Where the stable policy used for the error column comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum ReferenceSource {
    None,
    Given(Mat),
    /// Repeated exact minimization to the given tolerance.
    Computed { tol: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub replicate: u64,
    pub schedule: String,
    pub synthetic_schedule: bool,
    pub iterations: usize,
    pub diverged_at: Option<usize>,
    /// The perturbation law has mean zero.
    pub zero_mean_perturbation: bool,
    pub degenerate_days: Vec<usize>,
    pub condition: ConditionReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<TraceRow>,
    pub metadata: RunMetadata,
    pub final_policy: Mat,
    pub reference: Option<Mat>,
}

/// Existence-condition report for an instance, with the policy radius of
/// its feasible set.
pub fn condition_report(inst: &Instance, radius: f64) -> Result<ConditionReport> {
    let profile = SensitivityProfile::new(inst.map.eps.clone(), inst.map.xi.clone());
    let bundle = compute_constants(&inst.system, (&inst.cost).into(), &profile, radius)?;
    Ok(check_psc_condition(&bundle))
}

pub fn step_plan(cfg: &StockMarketConfig) -> StepSizePlan {
    let kind = match cfg.eta_decay {
        None => StepKind::Constant { eta: cfg.eta },
        Some(phi2) => StepKind::Diminishing {
            phi1: cfg.eta * (1.0 + phi2),
            phi2,
        },
    };
    StepSizePlan::unchecked(kind)
}

#[derive(Serialize)]
struct HashedRun<'a> {
    stock: &'a StockMarketConfig,
    schedule: &'a [f64],
}

/// Digest of every input that determines a stock run.
pub fn run_hash(cfg: &StockMarketConfig, schedule: &SensitivitySchedule) -> Result<String> {
    io::config_hash(&[&HashedRun {
        stock: cfg,
        schedule: &schedule.values,
    }])
}

/// Stable portfolio policy of a stock market by repeated exact minimization.
pub fn stock_reference(cfg: &StockMarketConfig, schedule: &SensitivitySchedule, tol: f64) -> Result<Mat> {
    let inst = build_stock_instance(cfg, schedule)?;
    Ok(reference_by_route(&inst, &cfg.feasible_set(), tol, ExpectationRoute::Moments)?.m)
}

/// RSGD on the stock market from a random feasible portfolio.
pub fn run_experiment(cfg: &StockMarketConfig, schedule: &SensitivitySchedule, reference: &ReferenceSource, replicate: u64) -> Result<ExperimentOutput> {
    let inst = build_stock_instance(cfg, schedule)?;
    let set = cfg.feasible_set();
    let reference = match reference {
        ReferenceSource::None => None,
        ReferenceSource::Given(m) => Some(m.clone()),
        ReferenceSource::Computed { tol } => Some(stock_reference(cfg, schedule, *tol)?),
    };
    let seed = SeedPair::new(cfg.seed, replicate);
    let mut rsgd = RsgdConfig::new(step_plan(cfg), cfg.iterations, random_stock_policy(cfg.assets, set, seed.child(u64::MAX)), seed);
    if cfg.eval_samples > 0 {
        rsgd.cost_eval = Some(ExpectationRoute::SampleAverage {
            n_samples: cfg.eval_samples,
            seed: seed.child(u64::MAX - 1),
        });
    }
    let trace = rsgd_run(&inst, &rsgd, reference.as_ref())?;
    let metadata = RunMetadata {
        config_hash: run_hash(cfg, schedule)?,
        seed: cfg.seed,
        replicate,
        schedule: schedule.name().into(),
        synthetic_schedule: schedule.synthetic,
        iterations: cfg.iterations,
        diverged_at: trace.diverged_at,
        zero_mean_perturbation: inst.map.is_zero_mean(),
        degenerate_days: degenerate_days(schedule),
        condition: condition_report(&inst, set.radius(inst.system.d_u()))?,
    };
    Ok(ExperimentOutput {
        rows: trace.rows,
        metadata,
        final_policy: trace.final_policy.m,
        reference,
    })
}
