use perfctl::dynamics::{FeasibleSet, NoiseModel, PerturbationMap, Policy, ScaledFactor, SystemConfig};
use perfctl::experiments::io::{config_hash, read_trace_csv, write_trace_csv};
use perfctl::experiments::{paper_schedules, run_hash, StockMarketConfig};
use perfctl::analysis::{StepKind, StepSizePlan};
use perfctl::cost::CostModel;
use perfctl::instance::Instance;
use perfctl::linalg::{frob_inner, Mat, Vector};
use perfctl::rng::SeedPair;
use perfctl::solvers::{project_matrix, rsgd_run, RsgdConfig, TraceRow};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-3.0..3.0f64, rows * cols).prop_map(move |v| Mat::from_row_slice(rows, cols, &v))
}

fn sets() -> impl Strategy<Value = FeasibleSet> {
    prop_oneof![
        (0.1..5.0f64).prop_map(|radius| FeasibleSet::FrobeniusBall { radius }),
        (0.1..3.0f64).prop_map(|scale| FeasibleSet::RowSimplex { scale }),
        Just(FeasibleSet::TiedRowSimplex { copies: 2, scale: 1.0 }),
        Just(FeasibleSet::TiedRowAffine { copies: 2, scale: 1.0 }),
    ]
}

proptest! {
    #[test]
    fn projection_is_idempotent_and_feasible(set in sets(), raw in matrix(4, 4)) {
        let p = project_matrix(&raw, &set).unwrap();
        prop_assert!(set.contains(&p, 1e-9));
        let again = project_matrix(&p, &set).unwrap();
        prop_assert!((&again - &p).amax() <= 1e-12);
    }

    /// Variational inequality `⟨x − P x, y − P x⟩ ≤ 0` for feasible `y`.
    #[test]
    fn projection_is_optimal(set in sets(), raw in matrix(4, 4), other in matrix(4, 4)) {
        let p = project_matrix(&raw, &set).unwrap();
        let y = project_matrix(&other, &set).unwrap();
        let slack = frob_inner(&(&raw - &p), &(&y - &p));
        prop_assert!(slack <= 1e-9 * (1.0 + raw.norm() * y.norm()), "slack {slack}");
        prop_assert!((&raw - &p).norm() <= (&raw - &y).norm() + 1e-9);
    }

    #[test]
    fn trace_csv_round_trips(rows in prop::collection::vec(
        (prop::option::of(any::<f64>()), prop::option::of(-1e300..1e300f64), prop::option::of(0.0..1e10f64)), 0..40)
    ) {
        let rows: Vec<TraceRow> = rows
            .into_iter()
            .enumerate()
            .map(|(n, (ps, cost, se))| TraceRow {
                n,
                // NaN never equals itself, so keep the values comparable
                ps_error: ps.filter(|v| v.is_finite()),
                expected_cost: cost,
                cost_std_error: se,
            })
            .collect();
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &rows).unwrap();
        prop_assert_eq!(read_trace_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn factor_perturbations_respect_their_bound(seed in any::<u64>(), gain in 0.0..2.0f64, off in -1.0..1.0f64, deploy in matrix(1, 2)) {
        let u = Mat::from_row_slice(2, 2, &[0.3, -1.0, 0.5, 0.2]);
        let map = PerturbationMap::scaled_factor(ScaledFactor {
            gains: vec![gain, 0.5 * gain],
            direction: Mat::from_row_slice(1, 2, &[0.6, 0.8]),
            offset: off,
            atoms: vec![u.clone(), -u],
            probs: vec![0.5, 0.5],
        }).unwrap();
        let mut rng = SeedPair::new(seed, 0).rng(perfctl::rng::Stream::Perturbation);
        for t in 0..2 {
            let d = map.sample(t, &deploy, 2, &mut rng);
            prop_assert!(perfctl::linalg::spectral_norm(&d) <= map.xi[t] * (1.0 + 1e-12));
        }
    }
}

#[test]
fn stock_hash_changes_with_every_field() {
    let base = StockMarketConfig::reduced();
    let schedule = paper_schedules(base.days).unwrap().ascending;
    let h0 = run_hash(&base, &schedule).unwrap();
    let variants: Vec<StockMarketConfig> = vec![
        StockMarketConfig { assets: 4, ..base.clone() },
        StockMarketConfig { days: 13, ..base.clone() },
        StockMarketConfig { rate: 0.06, ..base.clone() },
        StockMarketConfig { vol_std: 0.3, ..base.clone() },
        StockMarketConfig { vol_clip: 0.5, ..base.clone() },
        StockMarketConfig { vol_shift: 0.1, ..base.clone() },
        StockMarketConfig { noise_lo: 0.1, ..base.clone() },
        StockMarketConfig { noise_hi: 0.9, ..base.clone() },
        StockMarketConfig { iterations: 7, ..base.clone() },
        StockMarketConfig { eta: 0.02, ..base.clone() },
        StockMarketConfig { eta_decay: None, ..base.clone() },
        StockMarketConfig { seed: 1, ..base.clone() },
        StockMarketConfig { initial_investment: 1.0, ..base.clone() },
        StockMarketConfig { sum_only: true, ..base.clone() },
        StockMarketConfig { eval_samples: 7, ..base.clone() },
    ];
    let mut seen = vec![h0.clone()];
    for v in &variants {
        let h = run_hash(v, &schedule).unwrap();
        assert!(!seen.contains(&h), "{v:?}");
        seen.push(h);
    }
    let other = paper_schedules(base.days).unwrap().descending;
    assert_ne!(run_hash(&base, &other).unwrap(), h0);
    assert_eq!(run_hash(&base.clone(), &schedule).unwrap(), h0);
    assert_eq!(config_hash(&[&base]).unwrap(), config_hash(&[&base.clone()]).unwrap());
}

fn small_instance() -> Instance {
    let system = SystemConfig {
        a: Mat::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.4]),
        b: Mat::from_row_slice(2, 1, &[1.0, 0.3]),
        k: Mat::zeros(1, 2),
        horizon: 5,
        memory: 2,
        noise_bound: 2f64.sqrt() * 0.5,
        x0_bound: 1.0,
        sigma2: 0.25,
        kappa: 1.0,
        gamma: 0.5,
    };
    let cost = CostModel::quadratic(Mat::identity(2, 2), Mat::identity(1, 1)).unwrap();
    Instance::new(system, cost, PerturbationMap::null(5), NoiseModel::rademacher(2, 0.5), Vector::from_row_slice(&[0.3, 0.4])).unwrap()
}

#[test]
fn logged_rows_have_no_gaps() {
    let inst = small_instance();
    let set = FeasibleSet::FrobeniusBall { radius: 1.0 };
    for log_every in [1, 3, 7] {
        let mut cfg = RsgdConfig::new(
            StepSizePlan::unchecked(StepKind::Constant { eta: 0.01 }),
            40,
            Policy::zeros(&inst.system, set),
            SeedPair::new(9, 0),
        );
        cfg.log_every = log_every;
        let trace = rsgd_run(&inst, &cfg, Some(&Mat::zeros(1, 4))).unwrap();
        let ns: Vec<usize> = trace.rows.iter().map(|r| r.n).collect();
        let mut expected: Vec<usize> = (0..=40).step_by(log_every).collect();
        if *expected.last().unwrap() != 40 {
            expected.push(40);
        }
        assert_eq!(ns, expected);
        assert!(trace.rows.iter().all(|r| r.ps_error.is_some()));
    }
}
