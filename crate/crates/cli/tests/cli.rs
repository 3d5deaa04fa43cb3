use std::path::Path;
use std::process::{Command, Output};

use clbf_core::certificate::ClbfParams;
use clbf_core::model::{Model, ModelMeta};
use clbf_core::nn::Layer;
use clbf_core::{EnvSpec, FilteredCertificate, Method, Mlp};

fn clbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clbf"))
        .args(args)
        .env("CLBF_THREADS", "1")
        .output()
        .expect("run clbf")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Pendulum model with a linear PD policy and a constant certificate.
fn write_model(path: &Path, cert_value: f64) {
    let env = EnvSpec::pendulum();
    let policy = Mlp::new(vec![Layer::new(1, 2, vec![-0.28125, -0.1125], vec![0.0]).unwrap()], vec![]).unwrap();
    let net = Mlp::new(vec![Layer::new(1, 2, vec![0.0, 0.0], vec![cert_value]).unwrap()], vec![]).unwrap();
    let cert = FilteredCertificate::new(net, ClbfParams::for_env(&env), env).unwrap();
    let meta = ModelMeta {
        method: Method::Vanilla,
        seed: 0,
        certified: false,
        verified_delta: 0.0,
        tau: None,
    };
    Model::new(policy, cert, meta).unwrap().save(path).unwrap();
}

#[test]
fn no_arguments_prints_usage_and_exits_2() {
    let o = clbf(&[]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn unknown_flag_exits_2() {
    assert_eq!(code(&clbf(&["evaluate", "--no-such-flag"])), 2);
}

#[test]
fn env_mismatch_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.clbf");
    write_model(&m, 0.5);
    let o = clbf(&["evaluate", "--model", m.to_str().unwrap(), "--env", "docking2d"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn evaluate_writes_csv_to_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.clbf");
    write_model(&m, 0.5);
    let svg = dir.path().join("chart.svg");
    let args = [
        "evaluate",
        "--model",
        m.to_str().unwrap(),
        "--env",
        "pendulum",
        "--mode",
        "adv",
        "--delta",
        "0.01",
        "--n-states",
        "200",
        "--svg",
        svg.to_str().unwrap(),
    ];
    let o = clbf(&args);
    assert_eq!(code(&o), 0);
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "mode,delta,n,reached,unsafe,timed_out,rate,ci_low,ci_high,mean_steps,max_steps");
    assert!(lines[1].starts_with("adv,0.01,200,"));
    assert_eq!(lines.len(), 2);
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<svg"));
    // identical bytes on a second run
    assert_eq!(stdout(&clbf(&args)), out);
}

#[test]
fn verify_reports_counterexample_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.clbf");
    // constant 1.1 > β violates the initial condition everywhere
    write_model(&m, 1.1);
    let o = clbf(&["verify", "--model", m.to_str().unwrap(), "--env", "pendulum", "--deterministic"]);
    assert_eq!(code(&o), 1);
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("init,counterexample,")), "{out}");
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "beta = 1\nnot_a_key = 3\n").unwrap();
    let out = dir.path().join("m.clbf");
    let o = clbf(&[
        "train",
        "--env",
        "pendulum",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

/// Train, verify, certify and export on the pendulum with a short budget.
#[test]
fn train_verify_certify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("p.clbf");
    let ms = m.to_str().unwrap();
    let o = clbf(&[
        "train",
        "--env",
        "pendulum",
        "--method",
        "vanilla",
        "--seed",
        "0",
        "--deterministic",
        "--set",
        "max_iters=10",
        "--out",
        ms,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("certified"));
    let log = std::fs::read_to_string(format!("{ms}.log.csv")).unwrap();
    assert!(log.starts_with("iteration,loss,ce_count,wall_seconds"));

    let o = clbf(&["verify", "--model", ms, "--env", "pendulum", "--deterministic"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().filter(|l| l.contains(",proved,")).count(), 3);

    let o = clbf(&[
        "certify",
        "--model",
        ms,
        "--env",
        "pendulum",
        "--delta-hi",
        "0.004",
        "--tolerance",
        "0.002",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
    let lo: f64 = row[0].parse().unwrap();
    assert!((0.0..=0.004).contains(&lo));
    if !row[1].is_empty() {
        let up: f64 = row[1].parse().unwrap();
        assert!(up - lo < 0.002 + 1e-12);
    }

    let rep = dir.path().join("report");
    let o = clbf(&[
        "export-report",
        "--model",
        ms,
        "--env",
        "pendulum",
        "--out",
        rep.to_str().unwrap(),
        "--n-states",
        "100",
        "--deltas",
        "0",
        "--delta-hi",
        "0.004",
        "--tolerance",
        "0.002",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["verify.csv", "certify.csv", "evaluate.csv", "evaluate.svg"] {
        assert!(rep.join(f).exists(), "{f}");
    }
}
