use std::io::Write;

use dp_ipw::harness::emit::{from_json_str, to_csv_string, to_json_string, CSV_HEADER};
use dp_ipw::harness::{
    run_sweep, run_sweep_with, run_trial, CsvSource, DataSource, Execution, ExperimentConfig, SourceData, TrialOutcome,
    TrialStage,
};
use dp_ipw::ingest::{CsvSchema, ResampleKind, ResampleProtocol};

fn small(trials: usize) -> ExperimentConfig {
    ExperimentConfig {
        trials,
        epsilon_grid: vec![0.3, 0.99],
        m_grid: vec![200, 400],
        n_estimate: 200,
        tau_grid: vec![2.0],
        ..Default::default()
    }
}

#[test]
fn one_trial_sweep_matches_run_trial() {
    let mut config = small(1);
    config.keep_trials = true;
    let report = run_sweep(&config).unwrap();
    let source = SourceData::load(&config).unwrap();
    for cell in &report.sweeps[0].cells {
        let direct = run_trial(&config, &source, Some(2.0), cell.m, cell.epsilon, 0);
        assert_eq!(cell.records.as_ref().unwrap()[0], direct);
        let rec = direct.record().unwrap();
        assert_eq!(cell.tau_hat.mean, Some(rec.tau_hat));
        assert_eq!(cell.tau_n_eps.mean, Some(rec.tau_n_eps));
        assert_eq!(cell.tau_hat.half_width, None);
    }
}

#[test]
fn trial_is_bitwise_reproducible() {
    let config = small(1);
    let source = SourceData::load(&config).unwrap();
    let a = run_trial(&config, &source, Some(2.0), 400, 0.3, 7);
    let b = run_trial(&config, &source, Some(2.0), 400, 0.3, 7);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn serial_and_parallel_agree() {
    let config = small(6);
    let p = run_sweep_with(&config, Execution::Parallel).unwrap();
    let s = run_sweep_with(&config, Execution::Serial).unwrap();
    assert_eq!(to_json_string(&p).unwrap(), to_json_string(&s).unwrap());
}

#[test]
fn records_are_consistent() {
    let mut config = small(8);
    config.keep_trials = true;
    config.trim_xi = Some(0.05);
    let report = run_sweep(&config).unwrap();
    for cell in &report.sweeps[0].cells {
        for o in cell.records.as_ref().unwrap() {
            let r = o.record().expect("trial completed");
            assert_eq!(r.sign_flags.tau_n_nonpositive, r.tau_n <= 0.0);
            assert_eq!(r.sign_flags.tau_n_eps_nonpositive, r.tau_n_eps <= 0.0);
            assert_eq!(r.sign_flags.joint, r.tau_n <= 0.0 && r.tau_n_eps <= 0.0);
            if let (Some(t1), Some(t2)) = (r.theory.thm1_bound, r.theory.thm2_bound) {
                assert!(t2.value <= t1.value);
            }
            assert!(r.tau_n.abs() <= r.theory.eta.eta * (1.0 + 1e-12));
        }
        for freq in [&cell.rho_n, &cell.rho_n_eps, &cell.joint_flip] {
            let f = freq.mean.unwrap();
            assert!((0.0..=1.0).contains(&f));
        }
    }
}

#[test]
fn json_round_trip_and_csv_shape() {
    let report = run_sweep(&small(3)).unwrap();
    let json = to_json_string(&report).unwrap();
    assert_eq!(from_json_str(&json).unwrap(), report);

    let csv = to_csv_string(&report).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    let cells = &report.sweeps[0].cells;
    let metrics = cells[0].metrics().len();
    assert_eq!(lines.count(), cells.len() * metrics);
    assert_eq!(cells.len(), 4);
    let value = csv.lines().nth(1).unwrap().rsplit(',').next().unwrap();
    let mantissa = value.split('e').next().unwrap();
    assert_eq!(mantissa.chars().filter(char::is_ascii_digit).count(), 17);
}

#[test]
fn high_epsilon_large_effect_rarely_flips() {
    let config = ExperimentConfig {
        trials: 40,
        epsilon_grid: vec![0.99],
        m_grid: vec![2500],
        n_estimate: 1000,
        tau_grid: vec![2.0],
        ..Default::default()
    };
    let report = run_sweep(&config).unwrap();
    let joint = report.sweeps[0].cells[0].joint_flip.mean.unwrap();
    assert!(joint < 0.1, "joint flip frequency {joint}");
}

#[test]
fn flips_decrease_with_epsilon_and_estimates_converge_with_m() {
    let config = ExperimentConfig {
        trials: 40,
        epsilon_grid: vec![0.1, 0.5, 0.99],
        m_grid: vec![500, 2500],
        n_estimate: 1000,
        tau_grid: vec![2.0],
        ..Default::default()
    };
    let report = run_sweep(&config).unwrap();
    let sweep = &report.sweeps[0];
    for m in [500, 2500] {
        let cells: Vec<_> = [0.1, 0.5, 0.99].iter().map(|&e| sweep.cell(m, e).unwrap()).collect();
        for w in cells.windows(2) {
            let (a, b) = (&w[0].rho_n_eps, &w[1].rho_n_eps);
            let lo_b = b.mean.unwrap() - b.half_width.unwrap();
            let hi_a = a.mean.unwrap() + a.half_width.unwrap();
            assert!(lo_b <= hi_a, "rho_n_eps increased beyond CI overlap at m = {m}");
        }
    }
    let gap = |m| {
        let c = sweep.cell(m, 0.1).unwrap();
        (c.tau_n.mean.unwrap() - c.tau_hat.mean.unwrap()).abs()
    };
    assert!(gap(2500) < gap(500));
}

fn zero_outcome_csv() -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "t,y,x1,x2").unwrap();
    for i in 0..300 {
        let t = i % 2;
        let a = (i as f64 * 0.37).sin();
        let b = (i as f64 * 0.11).cos();
        writeln!(f, "{t},0,{a},{b}").unwrap();
    }
    f
}

fn csv_config(path: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        source: DataSource::Csv(CsvSource {
            path: path.to_path_buf(),
            schema: CsvSchema::new("t", "y", &["x1", "x2"]).unwrap(),
            protocol: ResampleProtocol::new(ResampleKind::LalondeBalanced),
        }),
        trials: 5,
        epsilon_grid: vec![0.5],
        m_grid: vec![100],
        n_estimate: 40,
        keep_trials: true,
        ..Default::default()
    }
}

#[test]
fn zero_outcomes_give_zero_estimates() {
    let f = zero_outcome_csv();
    let config = csv_config(f.path());
    let report = run_sweep(&config).unwrap();
    assert_eq!(report.sweeps[0].tau_true, None);
    for o in report.sweeps[0].cells[0].records.as_ref().unwrap() {
        let r = o.record().unwrap();
        assert_eq!((r.tau_hat, r.tau_n, r.tau_n_eps), (0.0, 0.0, 0.0));
        assert_eq!(r.c_y, 0.0);
        assert!(r.theory.thm1_bound.is_none());
    }

    // With an assumed outcome bound the released value is pure noise.
    let config = ExperimentConfig {
        c_y: Some(1.0),
        ..csv_config(f.path())
    };
    let report = run_sweep(&config).unwrap();
    for o in report.sweeps[0].cells[0].records.as_ref().unwrap() {
        let r = o.record().unwrap();
        assert_eq!((r.tau_hat, r.tau_n), (0.0, 0.0));
        assert!(r.tau_n_eps != 0.0);
    }
}

#[test]
fn failing_trials_mark_cells_degraded() {
    let f = zero_outcome_csv();
    // 150 units per arm cannot supply 200 per arm without replacement.
    let config = ExperimentConfig {
        n_estimate: 400,
        ..csv_config(f.path())
    };
    let report = run_sweep(&config).unwrap();
    let cell = &report.sweeps[0].cells[0];
    assert!(cell.degraded);
    assert_eq!(cell.completed, 0);
    assert_eq!(cell.failures.len(), 5);
    assert_eq!(cell.failures[0].stage, TrialStage::Resample);
    assert!(matches!(cell.records.as_ref().unwrap()[0], TrialOutcome::Failed(_)));
}

#[test]
fn config_from_toml_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(
        &path,
        r#"
trials = 7
epsilon_grid = [0.5]
m_grid = [300]
trim_xi = 0.1
estimand = "ATT"

[source]
kind = "synthetic"
d = 5
freeze_coefficients = true

[train]
tol = 1e-6
"#,
    )
    .unwrap();
    let c = ExperimentConfig::from_path(&path).unwrap();
    assert_eq!(c.trials, 7);
    assert_eq!(c.trim_xi, Some(0.1));
    assert_eq!(c.train.tol, 1e-6);
    assert_eq!(c.train.max_iters, 100_000);
    assert!(matches!(c.source, DataSource::Synthetic(s) if s.d == 5 && s.freeze_coefficients));

    for bad in [
        ExperimentConfig { trials: 0, ..Default::default() },
        ExperimentConfig { epsilon_grid: vec![], ..Default::default() },
        ExperimentConfig { epsilon_grid: vec![1.0], ..Default::default() },
        ExperimentConfig { m_grid: vec![], ..Default::default() },
        ExperimentConfig { trim_xi: Some(0.5), ..Default::default() },
    ] {
        assert!(bad.validate().is_err());
    }
    std::fs::write(&path, "trials = 3\nunknown_field = 1\n").unwrap();
    assert!(ExperimentConfig::from_path(&path).is_err());
}

#[test]
fn frozen_coefficients_are_shared_across_trials() {
    let mut config = small(2);
    config.source = DataSource::Synthetic(dp_ipw::harness::SyntheticSource {
        freeze_coefficients: true,
        d: 5,
        ..Default::default()
    });
    let a = SourceData::load(&config).unwrap();
    let b = SourceData::load(&config).unwrap();
    match (a, b) {
        (SourceData::Synthetic { frozen: Some(x) }, SourceData::Synthetic { frozen: Some(y) }) => assert_eq!(x, y),
        _ => panic!("expected frozen coefficients"),
    }
    assert!(run_sweep(&config).unwrap().sweeps[0].cells.iter().all(|c| c.completed == 2));
}
