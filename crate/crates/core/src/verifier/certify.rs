use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{check_init, check_robust_decrease, check_safety, BnbConfig, Status};
use crate::certificate::FilteredCertificate;
use crate::envs::EnvSpec;
use crate::nn::Mlp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    /// Upper end of the search interval for δ.
    pub delta_hi: f64,
    /// Stop when the bracket is narrower than this.
    pub tolerance: f64,
    /// Descent margin used while certifying.
    pub epsilon: f64,
    pub bnb: BnbConfig,
}

impl CertifyConfig {
    pub fn for_env(env: &EnvSpec) -> Self {
        CertifyConfig {
            delta_hi: 0.05,
            tolerance: 1e-4,
            epsilon: 1e-6,
            bnb: BnbConfig::for_env(env),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyOutcome {
    /// Largest δ proved.
    pub delta_lower: f64,
    /// Smallest δ at which proving failed (`None` if `delta_hi` passed).
    pub delta_upper: Option<f64>,
    pub evaluations: usize,
    pub diagnostic: Option<String>,
}

/// Bisection for the largest `δ ∈ [0, hi]` with `passes(δ)`, to within
/// `tol`. The returned pair is `(proved lower end, failed upper end)`.
/// `passes(0)` failing yields `(0, Some(0))`.
pub fn bisect_threshold<F>(hi: f64, tol: f64, mut passes: F) -> (f64, Option<f64>, usize)
where
    F: FnMut(f64) -> bool,
{
    let mut evals = 1;
    if !passes(0.0) {
        return (0.0, Some(0.0), evals);
    }
    evals += 1;
    if passes(hi) {
        return (hi, None, evals);
    }
    let (mut lo, mut up) = (0.0, hi);
    while up - lo >= tol {
        let mid = 0.5 * (lo + up);
        evals += 1;
        if passes(mid) {
            lo = mid;
        } else {
            up = mid;
        }
    }
    (lo, Some(up), evals)
}

/// Largest perturbation radius for which all three conditions are proved,
/// as a lower bound within `cfg.tolerance`. Undecided verdicts count as
/// failures.
pub fn certify_delta(
    cert: &FilteredCertificate,
    policy: &Mlp,
    env: &EnvSpec,
    cfg: &CertifyConfig,
) -> CertifyOutcome {
    let init = check_init(cert, env, &cfg.bnb);
    let safety = check_safety(cert, env);
    if !init.is_proved() || !safety.is_proved() {
        let msg = format!(
            "preconditions not proved: {}; {}",
            init.summary(),
            safety.summary()
        );
        warn!("{msg}");
        return CertifyOutcome {
            delta_lower: 0.0,
            delta_upper: Some(0.0),
            evaluations: 0,
            diagnostic: Some(msg),
        };
    }
    let mut last_fail = None;
    let (lo, up, evals) = bisect_threshold(cfg.delta_hi, cfg.tolerance, |d| {
        let v = check_robust_decrease(cert, policy, env, d, cfg.epsilon, &cfg.bnb);
        info!("certify: delta {d:.6} -> {}", v.summary());
        if v.status != Status::Proved {
            last_fail = Some(v.summary());
        }
        v.status == Status::Proved
    });
    let diagnostic = if lo == 0.0 && up == Some(0.0) {
        Some(format!(
            "decrease condition not proved at delta = 0: {}",
            last_fail.unwrap_or_default()
        ))
    } else {
        None
    };
    CertifyOutcome {
        delta_lower: lo,
        delta_upper: up,
        evaluations: evals,
        diagnostic,
    }
}
