mod common;

use std::fs;

use common::*;
use nalgebra::{dmatrix, DMatrix};
use tpdv_core::bench::{
    make_quadratic_saddle, quadratic_saddle_from_parts, report, run, ProblemKind, QuadraticSaddleSpec, RunConfig, ScaleMode,
};
use tpdv_core::darcy::Variant;
use tpdv_core::error::Error;
use tpdv_core::tpdv::{ConvergenceRecord, ParamMode, RecordRow, RunStatus};

fn spec(seed: u64, n: usize, m: usize, cond: f64) -> QuadraticSaddleSpec {
    QuadraticSaddleSpec { n, m, cond_a: cond, seed, scale_mode: ScaleMode::Raw }
}

fn csv_column(text: &str, name: &str) -> Vec<f64> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().parse().unwrap()).collect()
}

#[test]
fn hand_example() {
    let q = quadratic_saddle_from_parts(DMatrix::identity(2, 2), vec![0.0, 0.0], dmatrix![1.0, 0.0], vec![1.0], ScaleMode::Raw)
        .unwrap();
    assert!(max_abs(&sub(&q.ustar, &[1.0, 0.0])) < 1e-15);
    assert!((q.pstar[0] + 1.0).abs() < 1e-15);
}

#[test]
fn generated_saddles_satisfy_kkt() {
    for seed in 0..20 {
        let (n, m, cond) = (5 + seed as usize % 20, 1 + seed as usize % 5, 1.5 + 5.0 * seed as f64);
        let q = make_quadratic_saddle(&spec(seed, n, m, cond)).unwrap();
        let a = q.f.hessian();
        let eigs = pencil_eigs(a, &DMatrix::identity(n, n));
        assert!((eigs[n - 1] / eigs[0] / cond - 1.0).abs() <= 0.05);
        let bu = mv(&q.b_dense, &q.ustar);
        assert!(max_abs(&sub(&bu, &q.problem.rhs)) <= 1e-11);
        let mut station = sub(&mv(a, &q.ustar), q.f.linear());
        let btp = mv(&q.b_dense.transpose(), &q.pstar);
        station.iter_mut().zip(&btp).for_each(|(s, b)| *s += b);
        assert!(max_abs(&station) <= 1e-11);
        let (u, p) = dense_kkt(a, q.f.linear(), &q.b_dense, &q.problem.rhs);
        assert!(max_abs(&sub(&u, &q.ustar)) <= 1e-9 && max_abs(&sub(&p, &q.pstar)) <= 1e-9);
        assert!(pencil_eigs(&(&q.b_dense * q.b_dense.transpose()), &DMatrix::identity(m, m))[0] > 1e-8);
    }
}

#[test]
fn invalid_configs_name_their_field() {
    let bad = [
        (RunConfig { alpha: Some(0.0), ..RunConfig::default() }, "alpha"),
        (RunConfig { gamma: Some(-1.0), ..RunConfig::default() }, "gamma"),
        (RunConfig { tol: 1.0, ..RunConfig::default() }, "tol"),
        (RunConfig { tol: 0.0, ..RunConfig::default() }, "tol"),
        (RunConfig { mdim: 10, ..RunConfig::default() }, "mdim"),
        (
            RunConfig { problem: ProblemKind::Darcy, param_mode: Some(ParamMode::Theoretical), ..RunConfig::default() },
            "param_mode",
        ),
    ];
    for (cfg, field) in bad {
        match run(&cfg) {
            Err(Error::Config { field: f, .. }) => assert_eq!(f, field),
            other => panic!("expected a config error on {field}, got {other:?}"),
        }
    }
}

#[test]
fn quadratic_run_decreases_lyapunov() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { output: Some(dir.path().to_path_buf()), seed: 3, ..RunConfig::default() };
    let summary = run(&cfg).unwrap();
    assert!(summary.success());
    assert_eq!(summary.lines.len(), 1);
    assert!(summary.lines[0].contains("converged"));
    let text = fs::read_to_string(&summary.artifacts[0]).unwrap();
    let e = csv_column(&text, "lyapunov");
    assert!(e.windows(2).all(|w| w[1] < w[0]));
    let res = csv_column(&text, "residual_inf");
    assert!(res[res.len() - 1] <= 1e-6 * res[0]);
}

#[test]
fn flow_run_has_no_violations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { problem: ProblemKind::Flow, output: Some(dir.path().to_path_buf()), flow_tend: 2.0, ..RunConfig::default() };
    let summary = run(&cfg).unwrap();
    assert!(summary.success());
    let report = summary.decay.unwrap();
    assert_eq!(report.violations, 0);
    let text = fs::read_to_string(&summary.artifacts[0]).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,E,bound,margin");
    assert_eq!(text.lines().count(), 2001 + 1);
    assert!(csv_column(&text, "margin").iter().all(|&m| m >= -1e-4 * report.rows[0].e));
}

#[test]
fn unconverged_runs_fail_the_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { output: Some(dir.path().to_path_buf()), max_iter: Some(5), ..RunConfig::default() };
    let summary = run(&cfg).unwrap();
    assert_eq!(summary.status, RunStatus::MaxIter);
    assert!(!summary.success());
}

fn record(label: &str, dofs: usize, lyap: Option<[f64; 3]>) -> ConvergenceRecord {
    let rows = (0..3)
        .map(|k| RecordRow {
            k,
            residual_inf: 1.0 / (k + 1) as f64,
            residual_u_inf: 0.0,
            residual_p_inf: 0.0,
            lyapunov: lyap.map(|l| l[k]),
            alpha: 0.5,
            gamma: 0.5,
            vcycles: 1,
        })
        .collect();
    ConvergenceRecord { label: label.into(), dofs, rows, status: RunStatus::Converged, seconds: 0.0 }
}

#[test]
fn report_layout() {
    let single = report(&[record("one", 10, Some([1.0, 0.25, 0.0625]))]);
    let lines: Vec<&str> = single.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].trim_end().ends_with("0.250000"));
    let empty = report(&[record("bare", 10, None)]);
    assert!(empty.lines().nth(1).unwrap().trim_end().ends_with("converged"));
    let two = report(&[record("fine", 400, None), record("coarse", 40, None)]);
    let rows: Vec<&str> = two.lines().skip(1).collect();
    assert!(rows[0].starts_with("coarse") && rows[1].starts_with("fine"));
}

#[test]
fn repeated_runs_write_identical_files() {
    for cfg in [
        RunConfig { seed: 5, dim: 12, mdim: 3, cond: 6.0, ..RunConfig::default() },
        RunConfig { problem: ProblemKind::Flow, seed: 2, flow_tend: 1.0, ..RunConfig::default() },
        RunConfig { problem: ProblemKind::Darcy, algo: Variant::TpdvImex, n: vec![8, 16], ..RunConfig::default() },
    ] {
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let s1 = run(&RunConfig { output: Some(d1.path().to_path_buf()), ..cfg.clone() }).unwrap();
        let s2 = run(&RunConfig { output: Some(d2.path().to_path_buf()), ..cfg.clone() }).unwrap();
        assert!(s1.success() && s2.success());
        for (a, b) in s1.artifacts.iter().zip(&s2.artifacts) {
            if a.file_name().unwrap().to_string_lossy().ends_with("benchmark.csv") {
                continue;
            }
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap(), "{}", a.display());
        }
    }
}
