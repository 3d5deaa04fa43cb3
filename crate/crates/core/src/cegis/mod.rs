//! Counterexample-guided synthesis of a policy and its certificate:
//! warm start, train to zero loss, verify, resample around the
//! counterexamples, repeat.

mod tau;
mod teacher;
mod train;

use std::fmt;
use std::time::{Duration, Instant};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::certificate::{FilteredCertificate, CERT_HIDDEN};
use crate::config::RunConfig;
use crate::envs::EnvSpec;
use crate::error::{ClbfError, Result};
use crate::interval::IntervalBox;
use crate::nn::Mlp;
use crate::verifier::{
    check_init, check_robust_decrease, check_safety, BnbConfig, Condition, Status, Verdict,
};

pub use tau::{tau_search, TauSearch};
pub use teacher::{
    fit_teacher, policy_hidden, policy_widths, teacher, teacher_mse, DOCKING_GAIN, DOCKING_KP,
    DOCKING_KV, PENDULUM_GAINS, TEACHER_FIT_STATES, TEACHER_MSE_TARGET,
};
pub use train::{CeData, Learner, PhaseReport, ZERO_LOSS};

/// What a verification round reports back to the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifierReport {
    pub certified: bool,
    pub counterexamples: Vec<(Condition, Vec<f64>)>,
    pub summary: String,
}

pub trait Verifier {
    fn verify(
        &mut self,
        cert: &FilteredCertificate,
        policy: &Mlp,
        env: &EnvSpec,
    ) -> Result<VerifierReport>;
}

/// Branch-and-bound verification of all three conditions. Undecided boxes
/// contribute their centres as counterexample candidates when no concrete
/// counterexample was found.
#[derive(Debug, Clone)]
pub struct BnbVerifier {
    pub delta: f64,
    pub epsilon: f64,
    pub bnb: BnbConfig,
    pub max_unknown_points: usize,
    pub last: Vec<Verdict>,
}

impl BnbVerifier {
    pub fn new(delta: f64, epsilon: f64, bnb: BnbConfig) -> Self {
        BnbVerifier {
            delta,
            epsilon,
            bnb,
            max_unknown_points: 32,
            last: Vec::new(),
        }
    }

    pub fn from_config(cfg: &RunConfig) -> Self {
        BnbVerifier::new(cfg.params.delta, cfg.verify_epsilon, cfg.bnb.clone())
    }
}

impl Verifier for BnbVerifier {
    fn verify(
        &mut self,
        cert: &FilteredCertificate,
        policy: &Mlp,
        env: &EnvSpec,
    ) -> Result<VerifierReport> {
        let safety = check_safety(cert, env);
        if safety.status != Status::Proved {
            return Err(ClbfError::Config(format!(
                "safety condition fails: {}",
                safety.summary()
            )));
        }
        let init = check_init(cert, env, &self.bnb);
        let dec = check_robust_decrease(cert, policy, env, self.delta, self.epsilon, &self.bnb);
        let mut ces = Vec::new();
        for v in [&init, &dec] {
            ces.extend(
                v.counterexamples
                    .iter()
                    .map(|w| (v.condition, w.state.clone())),
            );
            if v.counterexamples.is_empty() && v.status == Status::Unknown {
                let step = (v.unknown_boxes.len() / self.max_unknown_points).max(1);
                ces.extend(
                    v.unknown_boxes
                        .iter()
                        .step_by(step)
                        .take(self.max_unknown_points)
                        .map(|b| (v.condition, b.center())),
                );
            }
        }
        let certified = init.is_proved() && dec.is_proved();
        let summary = format!(
            "{}; {}; {}",
            init.summary(),
            dec.summary(),
            safety.summary()
        );
        self.last = vec![init, dec, safety];
        Ok(VerifierReport {
            certified,
            counterexamples: ces,
            summary,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunStatus {
    Certified,
    MaxIterations,
    TimedOut,
    /// Verification failed but produced nothing to learn from.
    Stalled,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Certified => "certified",
            RunStatus::MaxIterations => "max_iterations",
            RunStatus::TimedOut => "timed_out",
            RunStatus::Stalled => "stalled",
        })
    }
}

/// One row of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub loss: f64,
    pub ce_count: usize,
    pub wall_seconds: f64,
}

impl IterationLog {
    pub const CSV_HEADER: &'static str = "iteration,loss,ce_count,wall_seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{},{:.3}",
            self.iteration, self.loss, self.ce_count, self.wall_seconds
        )
    }
}

pub fn run_log_csv(rows: &[IterationLog]) -> String {
    let mut s = String::from(IterationLog::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Loop state between iterations.
#[derive(Debug, Clone)]
pub struct CegisState {
    pub learner: Learner,
    pub ce: CeData,
    pub iteration: usize,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct CegisOutcome {
    pub policy: Mlp,
    pub cert: FilteredCertificate,
    pub status: RunStatus,
    pub iterations: usize,
    pub log: Vec<IterationLog>,
    pub ce: CeData,
    pub last_report: Option<VerifierReport>,
}

impl CegisOutcome {
    pub fn certified(&self) -> bool {
        self.status == RunStatus::Certified
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmReport {
    pub policy_mse: f64,
    pub cert_loss: f64,
}

/// Fresh networks for `env`: the policy regressed onto the teacher, then
/// the certificate trained for `cfg.warm_cert_epochs` with the policy frozen.
pub fn warm_start<R: Rng + ?Sized>(
    env: &EnvSpec,
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<(Mlp, FilteredCertificate, WarmReport)> {
    let mut policy = Mlp::glorot(&policy_widths(env), rng)?;
    let policy_mse = fit_teacher(env, &mut policy, cfg.warm_policy_epochs, 3e-3, rng)?;
    if policy_mse >= TEACHER_MSE_TARGET {
        warn!(
            "teacher regression stopped at mse {policy_mse:.3e}; continuing with the best effort"
        );
    } else {
        info!("teacher regression mse {policy_mse:.3e}");
    }
    let mut widths = vec![env.state_dim()];
    widths.extend_from_slice(&CERT_HIDDEN);
    widths.push(1);
    let net = Mlp::glorot(&widths, rng)?;
    let cert = FilteredCertificate::new(net, cfg.params, env.clone())?;
    let mut learner = Learner::new(policy, cert, cfg.learning_rate);
    let r = learner.train(
        env,
        cfg,
        &CeData::default(),
        false,
        cfg.warm_cert_epochs,
        None,
        rng,
    )?;
    info!(
        "certificate pretraining: {} epochs, loss {:.3e}",
        r.epochs, r.final_loss
    );
    Ok((
        learner.policy,
        learner.cert,
        WarmReport {
            policy_mse,
            cert_loss: r.final_loss,
        },
    ))
}

/// `m` uniform points in `ball ∩ region` (the intersection is non-empty
/// because the centre lies in `region`).
pub fn resample_ball<R: Rng + ?Sized>(
    center: &[f64],
    radius: f64,
    region: &IntervalBox,
    m: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let ball = IntervalBox::ball_inf(center, radius);
    let b = ball.intersection(region).unwrap_or(ball);
    (0..m).map(|_| b.sample(rng)).collect()
}

/// Region an initial-set counterexample is resampled in: the initial box
/// that contains it.
fn init_region(env: &EnvSpec, x: &[f64]) -> IntervalBox {
    env.init
        .boxes()
        .iter()
        .find(|b| b.contains(x))
        .cloned()
        .unwrap_or_else(|| env.domain.clone())
}

/// Runs the loop from `start` (or a fresh warm start) until the verifier
/// certifies the pair, the iteration cap, or the wall-clock limit.
pub fn cegis_run(
    env: &EnvSpec,
    cfg: &RunConfig,
    verifier: &mut dyn Verifier,
    start: Option<(Mlp, FilteredCertificate)>,
    on_iteration: &mut dyn FnMut(&IterationLog),
) -> Result<CegisOutcome> {
    cfg.validate()?;
    let t0 = Instant::now();
    let deadline = t0 + Duration::from_secs_f64((cfg.timeout_hours * 3600.0).min(1e9));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (policy, cert) = match start {
        Some(pc) => pc,
        None => {
            let (p, c, _) = warm_start(env, cfg, &mut rng)?;
            (p, c)
        }
    };
    if cert.params != cfg.params {
        return Err(ClbfError::Config(
            "certificate parameters differ from the run configuration".into(),
        ));
    }
    let mut state = CegisState {
        learner: Learner::new(policy, cert, cfg.learning_rate),
        ce: CeData::default(),
        iteration: 0,
        rng,
    };
    let mut log = Vec::new();
    let mut last_report = None;
    let radius = cfg.resample_radius();
    let status = loop {
        if state.iteration >= cfg.max_iters {
            break RunStatus::MaxIterations;
        }
        if Instant::now() >= deadline {
            break RunStatus::TimedOut;
        }
        state.iteration += 1;
        let phase = state.learner.train(
            env,
            cfg,
            &state.ce,
            true,
            cfg.epochs,
            Some(deadline),
            &mut state.rng,
        )?;
        if phase.timed_out {
            break RunStatus::TimedOut;
        }
        let report = verifier.verify(&state.learner.cert, &state.learner.policy, env)?;
        let row = IterationLog {
            iteration: state.iteration,
            loss: phase.final_loss,
            ce_count: report.counterexamples.len(),
            wall_seconds: t0.elapsed().as_secs_f64(),
        };
        info!(
            "iteration {}: {} epochs, loss {:.3e}, {} counterexamples; {}",
            row.iteration, phase.epochs, row.loss, row.ce_count, report.summary
        );
        on_iteration(&row);
        log.push(row);
        let certified = report.certified;
        let empty = report.counterexamples.is_empty();
        for (cond, x) in &report.counterexamples {
            match cond {
                Condition::Init => {
                    let region = init_region(env, x);
                    let pts = resample_ball(x, radius, &region, cfg.resample_m, &mut state.rng);
                    state.ce.init.extend(pts);
                }
                _ => {
                    let pts = resample_ball(x, radius, &env.domain, cfg.resample_m, &mut state.rng);
                    state.ce.dec.extend(pts);
                }
            }
        }
        last_report = Some(report);
        if certified {
            break RunStatus::Certified;
        }
        if empty {
            break RunStatus::Stalled;
        }
    };
    Ok(CegisOutcome {
        policy: state.learner.policy,
        cert: state.learner.cert,
        status,
        iterations: state.iteration,
        log,
        ce: state.ce,
        last_report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::ClbfParams;
    use crate::losses::Method;
    use crate::model::{Model, ModelMeta};

    struct Stub {
        answers: Vec<VerifierReport>,
        calls: usize,
    }

    impl Verifier for Stub {
        fn verify(
            &mut self,
            _: &FilteredCertificate,
            _: &Mlp,
            _: &EnvSpec,
        ) -> Result<VerifierReport> {
            let r = self
                .answers
                .get(self.calls)
                .cloned()
                .unwrap_or(VerifierReport {
                    certified: true,
                    counterexamples: vec![],
                    summary: String::new(),
                });
            self.calls += 1;
            Ok(r)
        }
    }

    fn tiny(env: &EnvSpec, seed: u64) -> (Mlp, FilteredCertificate, RunConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = Mlp::glorot(&[env.state_dim(), 8, env.control_dim()], &mut rng).unwrap();
        let net = Mlp::glorot(&[env.state_dim(), 8, 1], &mut rng).unwrap();
        let mut cfg = RunConfig::defaults(env, Method::Vanilla);
        cfg.epochs = 5;
        cfg.batch_size = 16;
        cfg.init_batch_size = 8;
        cfg.warm_policy_epochs = 20;
        cfg.warm_cert_epochs = 5;
        cfg.seed = seed;
        let cert = FilteredCertificate::new(net, cfg.params, env.clone()).unwrap();
        (policy, cert, cfg)
    }

    #[test]
    fn exits_after_one_iteration_without_counterexamples() {
        let env = EnvSpec::pendulum();
        let (p, c, cfg) = tiny(&env, 0);
        let mut stub = Stub {
            answers: vec![],
            calls: 0,
        };
        let out = cegis_run(&env, &cfg, &mut stub, Some((p, c)), &mut |_| {}).unwrap();
        assert_eq!(out.status, RunStatus::Certified);
        assert_eq!((out.iterations, stub.calls), (1, 1));
        assert!(out.ce.is_empty());
    }

    #[test]
    fn one_counterexample_adds_m_points() {
        let env = EnvSpec::pendulum();
        let (p, c, cfg) = tiny(&env, 1);
        let ce = vec![0.45, -0.1];
        let mut stub = Stub {
            answers: vec![VerifierReport {
                certified: false,
                counterexamples: vec![(Condition::RobustDecrease, ce.clone())],
                summary: String::new(),
            }],
            calls: 0,
        };
        let mut rows = Vec::new();
        let out = cegis_run(&env, &cfg, &mut stub, Some((p, c)), &mut |r| {
            rows.push(r.clone())
        })
        .unwrap();
        assert_eq!(out.status, RunStatus::Certified);
        assert_eq!(out.iterations, 2);
        assert_eq!(out.ce.dec.len(), cfg.resample_m);
        assert!(out.ce.init.is_empty());
        let r = cfg.resample_radius();
        for s in &out.ce.dec {
            assert!(s.iter().zip(&ce).all(|(a, b)| (a - b).abs() <= r));
        }
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].ce_count, 1);
        let csv = run_log_csv(&rows);
        assert!(csv.starts_with(IterationLog::CSV_HEADER));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn init_counterexamples_stay_in_the_initial_set() {
        let env = EnvSpec::docking2d();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = vec![0.99995, -0.3, 0.0, 0.0];
        let pts = resample_ball(&x, 1e-3, &init_region(&env, &x), 200, &mut rng);
        for p in &pts {
            assert!(env.is_init(p));
            assert!(p.iter().zip(&x).all(|(a, b)| (a - b).abs() <= 1e-3));
        }
    }

    #[test]
    fn max_iterations_and_stall() {
        let env = EnvSpec::pendulum();
        let (p, c, mut cfg) = tiny(&env, 2);
        cfg.max_iters = 2;
        let bad = VerifierReport {
            certified: false,
            counterexamples: vec![(Condition::Init, vec![0.1, 0.1])],
            summary: String::new(),
        };
        let mut stub = Stub {
            answers: vec![bad.clone(); 5],
            calls: 0,
        };
        let out = cegis_run(
            &env,
            &cfg,
            &mut stub,
            Some((p.clone(), c.clone())),
            &mut |_| {},
        )
        .unwrap();
        assert_eq!(out.status, RunStatus::MaxIterations);
        assert_eq!(out.ce.init.len(), 2 * cfg.resample_m);
        let mut stub = Stub {
            answers: vec![VerifierReport {
                counterexamples: vec![],
                ..bad
            }],
            calls: 0,
        };
        let out = cegis_run(&env, &cfg, &mut stub, Some((p, c)), &mut |_| {}).unwrap();
        assert_eq!(out.status, RunStatus::Stalled);
    }

    #[test]
    fn mismatched_params_are_rejected() {
        let env = EnvSpec::pendulum();
        let (p, c, mut cfg) = tiny(&env, 3);
        cfg.params.beta = 0.9;
        let mut stub = Stub {
            answers: vec![],
            calls: 0,
        };
        assert!(cegis_run(&env, &cfg, &mut stub, Some((p, c)), &mut |_| {}).is_err());
    }

    fn bytes_of_run(seed: u64) -> String {
        let env = EnvSpec::pendulum();
        let (_, _, mut cfg) = tiny(&env, seed);
        cfg.bnb.deterministic = true;
        cfg.bnb.max_boxes = 2000;
        cfg.max_iters = 2;
        let mut v = BnbVerifier::from_config(&cfg);
        let out = cegis_run(&env, &cfg, &mut v, None, &mut |_| {}).unwrap();
        let meta = ModelMeta {
            method: cfg.method,
            seed,
            certified: out.certified(),
            verified_delta: cfg.params.delta,
            tau: None,
        };
        Model::new(out.policy, out.cert, meta)
            .unwrap()
            .to_json()
            .unwrap()
    }

    #[test]
    fn identical_seed_gives_identical_bytes() {
        assert_eq!(bytes_of_run(11), bytes_of_run(11));
        assert_ne!(bytes_of_run(11), bytes_of_run(12));
    }

    #[test]
    fn bnb_verifier_reports_counterexamples_of_a_bad_certificate() {
        let env = EnvSpec::pendulum();
        let net = Mlp::new(
            vec![crate::nn::Layer::new(1, 2, vec![0.0, 0.0], vec![1.1]).unwrap()],
            vec![],
        )
        .unwrap();
        let cert = FilteredCertificate::new(net, ClbfParams::for_env(&env), env.clone()).unwrap();
        let policy = Mlp::new(vec![crate::nn::Layer::zeros(1, 2)], vec![]).unwrap();
        let mut v = BnbVerifier::new(
            0.0,
            1e-6,
            BnbConfig {
                deterministic: true,
                ..Default::default()
            },
        );
        let r = v.verify(&cert, &policy, &env).unwrap();
        assert!(!r.certified);
        assert!(r
            .counterexamples
            .iter()
            .any(|(c, x)| *c == Condition::Init && env.is_init(x)));
        assert_eq!(v.last.len(), 3);
    }
}
