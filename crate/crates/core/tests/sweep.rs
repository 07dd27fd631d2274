//! Monte Carlo harness: summary identities and output contracts.

use npjive::experiment::{run_sweep, Estimator, SweepConfig, CSV_HEADER};
use npjive::simulate::{ContinuousDgpParams, Dgp, ExactIdDgpParams};

fn config(dgp: Dgp) -> SweepConfig {
    SweepConfig {
        dgp,
        k_grid: vec![8, 16],
        n_grid: vec![12],
        replications: 7,
        estimators: Estimator::ALL.to_vec(),
        fit: None,
        debias: None,
        seed: 21,
        workers: 2,
        timing: false,
        output: None,
        svg: None,
    }
}

#[test]
fn rows_satisfy_the_mse_decomposition() {
    for dgp in [
        Dgp::Continuous(ContinuousDgpParams { n_new: 100, ..Default::default() }),
        Dgp::ExactId(ExactIdDgpParams { n_new: 100, ..Default::default() }),
    ] {
        let s = run_sweep(&config(dgp)).unwrap();
        assert_eq!(s.rows.len(), 2 * Estimator::ALL.len());
        for r in &s.rows {
            if r.successes == 0 {
                continue;
            }
            assert!((r.mse - (r.bias_sq + r.variance)).abs() <= 1e-10, "{r:?}");
            assert!((r.bias_sq - r.bias * r.bias).abs() <= 1e-12);
            assert!((0.0..=1.0).contains(&r.coverage95));
            assert_eq!(r.successes + r.failures.values().sum::<usize>(), r.replications);
        }
    }
}

#[test]
fn csv_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("summary.csv");
    let svg = dir.path().join("summary.svg");
    let cfg = SweepConfig { output: Some(out.clone()), svg: Some(svg.clone()), ..config(Dgp::Continuous(ContinuousDgpParams { n_new: 100, ..Default::default() })) };
    let s = run_sweep(&cfg).unwrap();
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text, s.to_csv_string().unwrap());
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), CSV_HEADER.len());
        assert_eq!(cols[12], "", "runtime column is blank unless timing is on");
    }
    assert!(std::fs::read_to_string(&svg).unwrap().contains("</svg>"));

    let timed = run_sweep(&SweepConfig { timing: true, output: None, svg: None, ..cfg }).unwrap();
    assert!(timed.rows.iter().all(|r| r.mean_runtime_ms.is_some_and(|ms| ms >= 0.0)));
}

#[test]
fn seeds_change_results_and_repeat_exactly() {
    let base = config(Dgp::ExactId(ExactIdDgpParams { n_new: 100, ..Default::default() }));
    let a = run_sweep(&base).unwrap().to_csv_string().unwrap();
    let b = run_sweep(&SweepConfig { workers: 1, ..base.clone() }).unwrap().to_csv_string().unwrap();
    let c = run_sweep(&SweepConfig { seed: 22, ..base }).unwrap().to_csv_string().unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn invalid_configs_are_rejected() {
    let base = config(Dgp::Continuous(ContinuousDgpParams::default()));
    for bad in [
        SweepConfig { replications: 0, ..base.clone() },
        SweepConfig { k_grid: vec![], ..base.clone() },
        SweepConfig { estimators: vec![], ..base.clone() },
        SweepConfig { workers: 0, ..base },
    ] {
        assert!(run_sweep(&bad).is_err());
    }
}
