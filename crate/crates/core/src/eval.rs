//! Closed-loop rollouts under bounded perturbations and success-rate
//! campaigns.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{attack_step, PgdConfig, DEFAULT_PGD_RESTARTS, DEFAULT_PGD_STEPS};
use crate::certificate::{ClbfParams, FilteredCertificate};
use crate::envs::EnvSpec;
use crate::error::{ClbfError, Result};
use crate::nn::Mlp;

pub const DEFAULT_N_STATES: usize = 10_000;
pub const DEFAULT_HORIZON: usize = 200;
/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// PGD on the certificate around each nominal successor.
    Adversarial,
    /// Uniform noise in `[−δ, δ]` per coordinate.
    Random,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Adversarial => "adv",
            Mode::Random => "random",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = ClbfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adv" | "adversarial" => Ok(Mode::Adversarial),
            "random" | "rand" => Ok(Mode::Random),
            other => Err(ClbfError::Config(format!(
                "unknown mode '{other}' (expected adv | random)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    ReachedGoal(usize),
    EnteredUnsafe(usize),
    TimedOut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    pub outcome: Outcome,
    /// Number of transitions taken.
    pub length: usize,
    pub mode: Mode,
    pub delta: f64,
}

impl RolloutResult {
    pub fn success(&self) -> bool {
        matches!(self.outcome, Outcome::ReachedGoal(_))
    }
}

/// Upper bound on the steps a certified trajectory needs to reach the goal.
pub fn steps_to_goal_bound(params: &ClbfParams) -> usize {
    ((params.beta - params.c) / params.epsilon).ceil() as usize
}

/// Simulates from `x0` until the goal or the unsafe set is entered, or for
/// `horizon` steps. Unsafe entry is checked before goal entry.
#[allow(clippy::too_many_arguments)]
pub fn rollout<R: Rng + ?Sized>(
    policy: &Mlp,
    cert: &FilteredCertificate,
    env: &EnvSpec,
    x0: &[f64],
    mode: Mode,
    pgd: &PgdConfig,
    horizon: usize,
    rng: &mut R,
) -> RolloutResult {
    let delta = pgd.delta;
    let mut x = x0.to_vec();
    for t in 1..=horizon {
        x = match mode {
            _ if delta == 0.0 => env.closed_loop(policy, &x),
            Mode::Adversarial => attack_step(cert, policy, env, &x, pgd, rng),
            Mode::Random => {
                let mut y = env.closed_loop(policy, &x);
                for v in y.iter_mut() {
                    *v += rng.gen_range(-delta..=delta);
                }
                y
            }
        };
        let outcome = if env.is_unsafe(&x) {
            Some(Outcome::EnteredUnsafe(t))
        } else if env.is_goal(&x) {
            Some(Outcome::ReachedGoal(t))
        } else {
            None
        };
        if let Some(outcome) = outcome {
            return RolloutResult {
                outcome,
                length: t,
                mode,
                delta,
            };
        }
    }
    RolloutResult {
        outcome: Outcome::TimedOut,
        length: horizon,
        mode,
        delta,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub n_states: usize,
    pub horizon: usize,
    pub modes: Vec<(Mode, f64)>,
    pub seed: u64,
    pub pgd_steps: usize,
    pub pgd_restarts: usize,
    pub deterministic: bool,
}

impl Campaign {
    pub fn new(modes: Vec<(Mode, f64)>, seed: u64) -> Self {
        Campaign {
            n_states: DEFAULT_N_STATES,
            horizon: DEFAULT_HORIZON,
            modes,
            seed,
            pgd_steps: DEFAULT_PGD_STEPS,
            pgd_restarts: DEFAULT_PGD_RESTARTS,
            deterministic: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.horizon == 0 || self.modes.is_empty() {
            return Err(ClbfError::Config(
                "campaign needs states, a horizon and at least one mode".into(),
            ));
        }
        for (_, d) in &self.modes {
            if !(*d >= 0.0 && d.is_finite()) {
                return Err(ClbfError::Config(format!(
                    "perturbation radius {d} must be non-negative"
                )));
            }
        }
        Ok(())
    }

    /// Initial states, drawn from `init ∖ goal`; identical for every mode.
    pub fn initial_states(&self, env: &EnvSpec) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.n_states)
            .map(|_| env.sample_init_outside_goal(&mut rng))
            .collect()
    }
}

/// Wilson score interval at 95% for `k` successes out of `n`.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z95 / denom * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    let lo = if k == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let hi = if k == n {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (lo, hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub mode: Mode,
    pub delta: f64,
    pub n: usize,
    pub reached: usize,
    pub unsafe_entries: usize,
    pub timed_out: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean steps to the goal over successful rollouts.
    pub mean_steps: f64,
    /// Largest steps to the goal over successful rollouts.
    pub max_steps: usize,
}

impl CampaignRow {
    pub const CSV_HEADER: &'static str =
        "mode,delta,n,reached,unsafe,timed_out,rate,ci_low,ci_high,mean_steps,max_steps";

    pub fn from_results(mode: Mode, delta: f64, results: &[RolloutResult]) -> Self {
        let mut reached = 0;
        let mut unsafe_entries = 0;
        let mut timed_out = 0;
        let mut steps = 0usize;
        let mut max_steps = 0;
        for r in results {
            match r.outcome {
                Outcome::ReachedGoal(t) => {
                    reached += 1;
                    steps += t;
                    max_steps = max_steps.max(t);
                }
                Outcome::EnteredUnsafe(_) => unsafe_entries += 1,
                Outcome::TimedOut => timed_out += 1,
            }
        }
        let n = results.len();
        let (ci_low, ci_high) = wilson_interval(reached, n);
        CampaignRow {
            mode,
            delta,
            n,
            reached,
            unsafe_entries,
            timed_out,
            rate: if n == 0 {
                0.0
            } else {
                reached as f64 / n as f64
            },
            ci_low,
            ci_high,
            mean_steps: if reached == 0 {
                0.0
            } else {
                steps as f64 / reached as f64
            },
            max_steps,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.3},{}",
            self.mode,
            self.delta,
            self.n,
            self.reached,
            self.unsafe_entries,
            self.timed_out,
            self.rate,
            self.ci_low,
            self.ci_high,
            self.mean_steps,
            self.max_steps
        )
    }
}

/// All rollouts of one campaign mode, in initial-state order. Each rollout
/// owns a ChaCha stream derived from the campaign seed and its index, so the
/// result does not depend on scheduling.
pub fn run_mode(
    policy: &Mlp,
    cert: &FilteredCertificate,
    env: &EnvSpec,
    campaign: &Campaign,
    mode_index: usize,
    starts: &[Vec<f64>],
) -> Vec<RolloutResult> {
    let (mode, delta) = campaign.modes[mode_index];
    let pgd = PgdConfig {
        steps: campaign.pgd_steps,
        restarts: campaign.pgd_restarts,
        ..PgdConfig::with_delta(delta)
    };
    let one = |i: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(campaign.seed);
        rng.set_stream(1 + (mode_index * campaign.n_states + i) as u64);
        rollout(
            policy,
            cert,
            env,
            &starts[i],
            mode,
            &pgd,
            campaign.horizon,
            &mut rng,
        )
    };
    if campaign.deterministic || crate::verifier::worker_count() == 1 {
        (0..starts.len()).map(one).collect()
    } else {
        (0..starts.len()).into_par_iter().map(one).collect()
    }
}

pub fn run_campaign(
    policy: &Mlp,
    cert: &FilteredCertificate,
    env: &EnvSpec,
    campaign: &Campaign,
) -> Result<Vec<CampaignRow>> {
    campaign.validate()?;
    if cert.env.name() != env.name()
        || policy.input_dim() != env.state_dim()
        || policy.output_dim() != env.control_dim()
    {
        return Err(ClbfError::Config(format!(
            "model does not match environment '{}'",
            env.name()
        )));
    }
    let starts = campaign.initial_states(env);
    Ok((0..campaign.modes.len())
        .map(|k| {
            let results = run_mode(policy, cert, env, campaign, k, &starts);
            let (mode, delta) = campaign.modes[k];
            CampaignRow::from_results(mode, delta, &results)
        })
        .collect())
}

pub fn campaign_csv(rows: &[CampaignRow]) -> String {
    let mut s = String::from(CampaignRow::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Bar chart of success rates with Wilson whiskers.
pub fn campaign_svg(title: &str, rows: &[CampaignRow]) -> String {
    let bar = 60.0;
    let gap = 30.0;
    let (left, top, plot_h) = (60.0, 40.0, 240.0);
    let width = left + rows.len() as f64 * (bar + gap) + gap;
    let height = top + plot_h + 60.0;
    let y = |v: f64| top + plot_h * (1.0 - v);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    s.push_str(&format!(
        "<text x=\"{left}\" y=\"20\" font-size=\"14\">{}</text>\n",
        escape(title)
    ));
    s.push_str(&format!(
        "<line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>\n",
        y(0.0)
    ));
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.0}%</text>\n",
            left - 6.0,
            y(tick) + 4.0,
            tick * 100.0
        ));
    }
    for (i, r) in rows.iter().enumerate() {
        let x = left + gap + i as f64 * (bar + gap);
        s.push_str(&format!(
            "<rect x=\"{x}\" y=\"{}\" width=\"{bar}\" height=\"{}\" fill=\"#4477aa\"/>\n",
            y(r.rate),
            plot_h * r.rate
        ));
        let cx = x + bar / 2.0;
        s.push_str(&format!(
            "<line x1=\"{cx}\" y1=\"{}\" x2=\"{cx}\" y2=\"{}\" stroke=\"black\"/>\n",
            y(r.ci_low),
            y(r.ci_high)
        ));
        s.push_str(&format!(
            "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\">{} {}</text>\n",
            y(0.0) + 18.0,
            r.mode,
            r.delta
        ));
        s.push_str(&format!(
            "<text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\">{:.1}%</text>\n",
            y(r.rate) - 6.0,
            r.rate * 100.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
