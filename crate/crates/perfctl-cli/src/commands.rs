use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use perfctl::analysis::{check_psc_condition, ConditionReport, ConstantsBundle, StepSizePlan};
use perfctl::dynamics::simulate_trajectory;
use perfctl::experiments::config::{Problem, RunConfig};
use perfctl::experiments::io::{config_hash, to_toml, write_fixed_point_csv, write_trace_csv, write_trajectory_csv};
use perfctl::experiments::{
    paper_schedules, run_experiment, run_hash, stock_reference, ExperimentOutput, ReferenceSource, SensitivitySchedule,
    StockMarketConfig, StockRegime,
};
use perfctl::solvers::{reference_by_route, rrm_run, rsgd_run, InnerBudget, RsgdConfig};
use perfctl::{Error, Result};

use crate::{Cli, Command, RegimeArg, ScaleArg, ScheduleArg, StockArgs};

pub enum Outcome {
    Completed,
    Diverged,
}

/// 2 for anything the user can fix in the configuration or flags.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::Parse(_) | Error::Dimension { .. } | Error::InvalidPlan(_) => 2,
        Error::InitialState { .. } | Error::ConditionFails { .. } | Error::Io(_) => 2,
        _ => 1,
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.jobs == 0 {
        return Err(Error::InvalidConfig("--jobs must be at least 1".into()));
    }
    fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::Simulate => simulate(&cfg, &cli.out),
        Command::Analyze => analyze(&cfg, &cli.out),
        Command::Rsgd => rsgd(&cfg, &cli.out),
        Command::Rrm => rrm(&cfg, &cli.out),
        Command::Stock(args) => stock(&cfg, args, cli.jobs, &cli.out),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_toml(value)?)?;
    Ok(())
}

fn simulate(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let problem = cfg.problem()?;
    let inst = &problem.instance;
    let policy = cfg.initial_policy(&problem)?;
    let record = simulate_trajectory(&inst.system, &inst.cost, &policy, &inst.map, &inst.noise, &inst.x0, cfg.seed_pair())?;
    write_trajectory_csv(create(&out.join("trajectory.csv"))?, &record)?;
    println!("total cost {:.6e}", record.total_cost());
    Ok(Outcome::Completed)
}

#[derive(Serialize)]
struct Analysis {
    holds: bool,
    lhs: f64,
    mu_tilde: f64,
    margin: f64,
    contraction_ratio: f64,
    at_boundary: bool,
    zero_mean_perturbation: bool,
    config_hash: String,
    condition: ConditionReport,
    constants: ConstantsBundle,
}

fn analyze(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let problem = cfg.problem()?;
    let constants = problem.constants()?;
    let condition = check_psc_condition(&constants);
    let analysis = Analysis {
        holds: condition.holds,
        lhs: condition.lhs,
        mu_tilde: condition.rhs,
        margin: condition.margin,
        contraction_ratio: condition.contraction_ratio,
        at_boundary: condition.at_boundary,
        zero_mean_perturbation: problem.instance.map.is_zero_mean(),
        config_hash: config_hash(&[cfg])?,
        condition,
        constants,
    };
    write_toml(&out.join("analysis.toml"), &analysis)?;
    println!("holds = {}", analysis.holds);
    Ok(Outcome::Completed)
}

#[derive(Serialize)]
struct RsgdMetadata {
    config_hash: String,
    seed: u64,
    plan: StepSizePlan,
    iterations: usize,
    diverged_at: Option<usize>,
    max_recovery_error: f64,
    condition: ConditionReport,
}

fn rsgd(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let problem = cfg.problem()?;
    let plan = cfg.step_plan(&problem)?;
    let reference = match cfg.rsgd.reference {
        Some(route) => Some(reference(cfg, &problem, route)?),
        None => None,
    };
    let mut run = RsgdConfig::new(plan.clone(), cfg.rsgd.iterations, cfg.initial_policy(&problem)?, cfg.seed_pair());
    run.log_every = cfg.rsgd.log_every;
    run.batch = cfg.rsgd.batch;
    run.cost_eval = cfg.rsgd.cost_eval.map(|r| r.route(cfg.seed_pair().child(u64::MAX - 1)));
    let trace = rsgd_run(&problem.instance, &run, reference.as_ref())?;
    write_trace_csv(create(&out.join("rsgd.csv"))?, &trace.rows)?;
    let meta = RsgdMetadata {
        config_hash: config_hash(&[cfg])?,
        seed: cfg.seed,
        plan,
        iterations: cfg.rsgd.iterations,
        diverged_at: trace.diverged_at,
        max_recovery_error: trace.max_recovery_error,
        condition: check_psc_condition(&problem.constants()?),
    };
    write_toml(&out.join("rsgd.meta.toml"), &meta)?;
    Ok(if trace.diverged() { Outcome::Diverged } else { Outcome::Completed })
}

fn reference(cfg: &RunConfig, problem: &Problem, route: perfctl::experiments::config::RouteSection) -> Result<perfctl::linalg::Mat> {
    let route = route.route(cfg.seed_pair().child(u64::MAX - 2));
    Ok(reference_by_route(&problem.instance, &problem.set, cfg.rsgd.reference_tol, route)?.m)
}

#[derive(Serialize)]
struct RrmMetadata {
    config_hash: String,
    iterations: usize,
    residual: f64,
    converged: bool,
    inner_converged: bool,
    condition: ConditionReport,
}

fn rrm(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let problem = cfg.problem()?;
    let r = &cfg.rrm;
    let route = r.route.route(cfg.seed_pair().child(u64::MAX - 2));
    let budget = InnerBudget::new(r.inner_tol.unwrap_or(r.tol / 10.0), route);
    let result = rrm_run(&problem.instance, &cfg.initial_policy(&problem)?, r.max_iters, r.tol, &budget)?;
    write_fixed_point_csv(create(&out.join("rrm.csv"))?, &result)?;
    let meta = RrmMetadata {
        config_hash: config_hash(&[cfg])?,
        iterations: result.iterations,
        residual: result.residual,
        converged: result.converged,
        inner_converged: result.inner_converged,
        condition: check_psc_condition(&problem.constants()?),
    };
    write_toml(&out.join("rrm.meta.toml"), &meta)?;
    Ok(if result.converged { Outcome::Completed } else { Outcome::Diverged })
}

fn stock_config(cfg: &RunConfig, args: &StockArgs) -> StockMarketConfig {
    if let Some(stock) = cfg.stock_config() {
        return stock;
    }
    let base = match args.scale {
        ScaleArg::Paper => StockMarketConfig::paper(),
        ScaleArg::Reduced => StockMarketConfig::reduced(),
    };
    let regime = match args.regime {
        RegimeArg::Stable => StockRegime::Stable,
        RegimeArg::Unstable => StockRegime::Unstable,
        RegimeArg::General => StockRegime::General,
    };
    StockMarketConfig {
        seed: cfg.seed,
        ..base.with_regime(regime)
    }
}

fn stock_schedule(args: &StockArgs, days: usize) -> Result<SensitivitySchedule> {
    let name = match args.schedule {
        ScheduleArg::Ascend => "ascend",
        ScheduleArg::Descend => "descend",
        ScheduleArg::Random => "random",
        ScheduleArg::File => {
            let path = args
                .schedule_file
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("--schedule file needs --schedule-file".into()))?;
            return SensitivitySchedule::parse(&fs::read_to_string(path)?);
        }
    };
    Ok(paper_schedules(days)?.by_name(name).expect("known schedule").clone())
}

fn stock(cfg: &RunConfig, args: &StockArgs, jobs: usize, out: &Path) -> Result<Outcome> {
    let stock = stock_config(cfg, args);
    stock.validate()?;
    let schedule = stock_schedule(args, stock.days)?;
    if args.replicates == 0 {
        return Err(Error::InvalidConfig("--replicates must be at least 1".into()));
    }
    let reference = match stock_reference(&stock, &schedule, args.reference_tol) {
        Ok(m) => ReferenceSource::Given(m),
        Err(Error::NotConverged { residual, .. }) => {
            eprintln!("stable-policy reference unavailable (residual {residual:e}); error column left empty");
            ReferenceSource::None
        }
        Err(e) => return Err(e),
    };
    let next = AtomicU64::new(0);
    let diverged = Mutex::new(false);
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let worker = || loop {
        let k = next.fetch_add(1, Ordering::SeqCst);
        if k >= args.replicates || failure.lock().expect("lock").is_some() {
            break;
        }
        let result = run_experiment(&stock, &schedule, &reference, k).and_then(|o| write_stock_run(out, &schedule, k, &o).map(|_| o));
        match result {
            Ok(o) => *diverged.lock().expect("lock") |= o.metadata.diverged_at.is_some(),
            Err(e) => *failure.lock().expect("lock") = Some(e),
        }
    };
    std::thread::scope(|s| {
        for _ in 0..jobs.min(args.replicates as usize) {
            s.spawn(worker);
        }
    });
    if let Some(e) = failure.into_inner().expect("lock") {
        return Err(e);
    }
    println!("config hash {}", run_hash(&stock, &schedule)?);
    Ok(if diverged.into_inner().expect("lock") { Outcome::Diverged } else { Outcome::Completed })
}

fn write_stock_run(out: &Path, schedule: &SensitivitySchedule, k: u64, o: &ExperimentOutput) -> Result<()> {
    let stem = format!("stock_{}_{k}", schedule.name());
    write_trace_csv(create(&out.join(format!("{stem}.csv")))?, &o.rows)?;
    write_toml(&out.join(format!("{stem}.meta.toml")), &o.metadata)
}
