//! One training phase: Adam on fresh batches plus the counterexample set,
//! until the loss stays at zero or the epoch cap is hit.

use std::time::Instant;

use rand::Rng;

use crate::certificate::FilteredCertificate;
use crate::config::RunConfig;
use crate::envs::EnvSpec;
use crate::error::{ClbfError, Result};
use crate::losses::{adversarial_offsets, Batch, Method, Objective, ObjectiveAux, Origin};
use crate::nn::{Adam, Mlp, SpectralTracker, TRAIN_POWER_ITERS};

/// Losses below this count as zero.
pub const ZERO_LOSS: f64 = 1e-12;

/// Counterexample points kept for training, split by the condition they
/// came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CeData {
    pub init: Vec<Vec<f64>>,
    pub dec: Vec<Vec<f64>>,
}

impl CeData {
    pub fn len(&self) -> usize {
        self.init.len() + self.dec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Parameters being trained and their optimiser state.
#[derive(Debug, Clone)]
pub struct Learner {
    pub policy: Mlp,
    pub cert: FilteredCertificate,
    cert_opt: Adam,
    policy_opt: Adam,
    spectral: SpectralTracker,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseReport {
    pub epochs: usize,
    pub final_loss: f64,
    pub converged: bool,
    pub timed_out: bool,
}

impl Learner {
    pub fn new(policy: Mlp, cert: FilteredCertificate, lr: f64) -> Self {
        Learner {
            cert_opt: Adam::new(cert.net.num_params(), lr),
            policy_opt: Adam::new(policy.num_params(), lr),
            policy,
            cert,
            spectral: SpectralTracker::new(),
        }
    }

    /// Runs up to `max_epochs` Adam steps. Each step draws a fresh batch of
    /// ordinary states and adds (up to `ce_batch_size` of) the
    /// counterexample points, weighted by `ce_weight`.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        env: &EnvSpec,
        cfg: &RunConfig,
        ce: &CeData,
        update_policy: bool,
        max_epochs: usize,
        deadline: Option<Instant>,
        rng: &mut R,
    ) -> Result<PhaseReport> {
        let pgd = cfg.pgd();
        let mut streak = 0;
        let mut last = f64::INFINITY;
        for epoch in 0..max_epochs {
            if deadline.is_some_and(|d| Instant::now() >= d) {
                return Ok(PhaseReport {
                    epochs: epoch,
                    final_loss: last,
                    converged: false,
                    timed_out: true,
                });
            }
            let mut init = Batch::sample_init(env, cfg.init_batch_size, rng);
            for x in subset(&ce.init, cfg.ce_batch_size, rng) {
                init.push(x, Origin::Counterexample);
            }
            let mut dec = Batch::sample(env, cfg.batch_size, rng);
            for x in subset(&ce.dec, cfg.ce_batch_size, rng) {
                dec.push(x, Origin::Counterexample);
            }
            let spectral = match cfg.method {
                Method::LipReg | Method::LipNeighbor => {
                    Some(self.spectral.estimate(&self.cert.net, TRAIN_POWER_ITERS)?)
                }
                _ => None,
            };
            let offsets = (cfg.method == Method::Pgd).then(|| {
                adversarial_offsets(&self.cert, &self.policy, env, &dec.states, &pgd, rng)
            });
            let objective = Objective {
                cert: &self.cert,
                policy: &self.policy,
                env,
                method: cfg.method,
                weights: &cfg.weights,
                init_target: cfg.params.beta - cfg.init_margin,
                delta: cfg.params.delta,
            };
            let aux = ObjectiveAux {
                offsets: offsets.as_deref(),
                spectral: spectral.as_ref(),
            };
            let ev = objective.evaluate(&init, &dec, &aux, true, false)?;
            last = ev.total;
            if !ev.total.is_finite() {
                return Err(ClbfError::Diverged(format!(
                    "loss {} at epoch {epoch}",
                    ev.total
                )));
            }
            if ev.total < ZERO_LOSS {
                streak += 1;
                if streak >= cfg.zero_streak {
                    return Ok(PhaseReport {
                        epochs: epoch + 1,
                        final_loss: ev.total,
                        converged: true,
                        timed_out: false,
                    });
                }
                continue;
            }
            streak = 0;
            let grads = ev.grads.expect("gradients requested");
            let mut p = self.cert.net.params();
            self.cert_opt.step(&mut p, &grads.cert.flatten());
            self.cert.net.set_params(&p)?;
            if update_policy {
                let mut q = self.policy.params();
                self.policy_opt.step(&mut q, &grads.policy.flatten());
                self.policy.set_params(&q)?;
            }
            if !self.cert.net.all_finite() || !self.policy.all_finite() {
                return Err(ClbfError::Diverged(format!(
                    "non-finite parameters after epoch {epoch}"
                )));
            }
        }
        Ok(PhaseReport {
            epochs: max_epochs,
            final_loss: last,
            converged: false,
            timed_out: false,
        })
    }
}

/// All of `pool` if it fits in `k`, otherwise `k` draws with replacement.
fn subset<R: Rng + ?Sized>(pool: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    if pool.len() <= k {
        pool.to_vec()
    } else {
        (0..k)
            .map(|_| pool[rng.gen_range(0..pool.len())].clone())
            .collect()
    }
}
