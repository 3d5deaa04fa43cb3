//! Sound branch-and-bound verification of the robust certificate
//! conditions over boxes.
//!
//! Each box is first tested with interval bounds (plain propagation, then
//! centred mean-value forms); a box that cannot be discharged is searched
//! for a concrete violation, which is re-checked exactly before being
//! reported, and otherwise bisected along its widest side.

mod certify;
mod checks;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvKind, EnvSpec};
use crate::interval::IntervalBox;

pub use certify::{bisect_threshold, certify_delta, CertifyConfig, CertifyOutcome};
pub use checks::{
    check_init, check_robust_decrease, check_robust_decrease_over, check_safety, ibp_policy_bounds,
    verify_all,
};

/// Smallest exact violation accepted as a counterexample.
pub const WITNESS_MIN_VIOLATION: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Proved,
    Counterexample,
    Unknown,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Proved => "proved",
            Status::Counterexample => "counterexample",
            Status::Unknown => "unknown",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    Init,
    RobustDecrease,
    Safety,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Init => "init",
            Condition::RobustDecrease => "robust_decrease",
            Condition::Safety => "safety",
        })
    }
}

/// A concrete violating state. For the decrease condition `next` holds the
/// perturbed successor that breaks it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub condition: Condition,
    pub state: Vec<f64>,
    pub next: Option<Vec<f64>>,
    /// Exact amount by which the condition fails (positive).
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub condition: Condition,
    pub status: Status,
    /// First counterexample in search order.
    pub witness: Option<Witness>,
    /// All counterexamples collected (up to the configured limit).
    pub counterexamples: Vec<Witness>,
    /// Undecided boxes (possibly truncated; the fraction covers all of them).
    pub unknown_boxes: Vec<IntervalBox>,
    pub unknown_volume_fraction: f64,
    pub boxes_processed: usize,
    pub budget_exhausted: bool,
}

impl Verdict {
    pub(crate) fn proved(condition: Condition) -> Self {
        Verdict {
            condition,
            status: Status::Proved,
            witness: None,
            counterexamples: Vec::new(),
            unknown_boxes: Vec::new(),
            unknown_volume_fraction: 0.0,
            boxes_processed: 0,
            budget_exhausted: false,
        }
    }

    pub fn is_proved(&self) -> bool {
        self.status == Status::Proved
    }

    pub const CSV_HEADER: &'static str =
        "condition,status,witness,violation,unknown_volume_fraction,boxes";

    /// One CSV line; witness coordinates are `;`-separated.
    pub fn csv_row(&self) -> String {
        let (w, v) = match &self.witness {
            Some(w) => (
                w.state
                    .iter()
                    .map(|x| format!("{x:e}"))
                    .collect::<Vec<_>>()
                    .join(";"),
                format!("{:e}", w.violation),
            ),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{},{},{:e},{}",
            self.condition, self.status, w, v, self.unknown_volume_fraction, self.boxes_processed
        )
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{}: {} ({} boxes)",
            self.condition, self.status, self.boxes_processed
        );
        if let Some(w) = &self.witness {
            s.push_str(&format!(
                ", witness {:?} violates by {:.3e}",
                w.state, w.violation
            ));
        }
        if self.status == Status::Unknown {
            s.push_str(&format!(
                ", {} undecided boxes covering {:.3e} of the region{}",
                self.unknown_boxes.len(),
                self.unknown_volume_fraction,
                if self.budget_exhausted {
                    " (budget exhausted)"
                } else {
                    ""
                }
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnbConfig {
    pub max_boxes: usize,
    pub min_width: f64,
    /// Stop after this many counterexamples.
    pub max_counterexamples: usize,
    /// Single-threaded, fixed search order.
    pub deterministic: bool,
    pub seed: u64,
    pub pgd_steps: usize,
    pub pgd_restarts: usize,
    /// Ascent steps over the state box when looking for a violating state.
    pub state_search_steps: usize,
    /// At most this many undecided boxes are kept in the verdict.
    pub max_reported_boxes: usize,
}

impl Default for BnbConfig {
    fn default() -> Self {
        BnbConfig {
            max_boxes: 2_000_000,
            min_width: 1e-4,
            max_counterexamples: 1,
            deterministic: false,
            seed: 0,
            pgd_steps: crate::adversary::DEFAULT_PGD_STEPS,
            pgd_restarts: crate::adversary::DEFAULT_PGD_RESTARTS,
            state_search_steps: 4,
            max_reported_boxes: 10_000,
        }
    }
}

impl BnbConfig {
    pub fn for_env(env: &EnvSpec) -> Self {
        let max_boxes = match env.kind {
            EnvKind::Pendulum => 2_000_000,
            EnvKind::Docking2d => 20_000_000,
        };
        BnbConfig {
            max_boxes,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.max_boxes == 0 || !(self.min_width > 0.0) || self.max_counterexamples == 0 {
            return Err(crate::ClbfError::Config(
                "need max_boxes ≥ 1, min_width > 0, max_counterexamples ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) enum BoxOutcome {
    Pass,
    Violation(Witness),
    Split,
}

/// Lebesgue measure over the coordinates in which the region is not flat.
struct Measure {
    active: Vec<bool>,
}

impl Measure {
    fn new(roots: &[IntervalBox]) -> Self {
        let dim = roots[0].dim();
        let active = (0..dim)
            .map(|d| roots.iter().any(|b| b.hi()[d] > b.lo()[d]))
            .collect();
        Measure { active }
    }

    fn of(&self, b: &IntervalBox) -> f64 {
        b.widths()
            .iter()
            .zip(&self.active)
            .filter(|(_, a)| **a)
            .map(|(w, _)| *w)
            .product()
    }
}

struct Partial {
    witnesses: Vec<Witness>,
    unknown: Vec<IntervalBox>,
    unknown_measure: f64,
    processed: usize,
    exhausted: bool,
}

struct Shared<'a> {
    cfg: &'a BnbConfig,
    processed: AtomicUsize,
    found: AtomicUsize,
    measure: Measure,
}

fn dfs<F>(root: IntervalBox, shared: &Shared<'_>, rng: &mut ChaCha8Rng, check: &F) -> Partial
where
    F: Fn(&IntervalBox, &mut ChaCha8Rng) -> BoxOutcome + Sync,
{
    let cfg = shared.cfg;
    let mut out = Partial {
        witnesses: Vec::new(),
        unknown: Vec::new(),
        unknown_measure: 0.0,
        processed: 0,
        exhausted: false,
    };
    let mut stack = vec![root];
    let undecided = |b: IntervalBox, out: &mut Partial| {
        out.unknown_measure += shared.measure.of(&b);
        if out.unknown.len() < cfg.max_reported_boxes {
            out.unknown.push(b);
        }
    };
    while let Some(b) = stack.pop() {
        if shared.found.load(Ordering::Relaxed) >= cfg.max_counterexamples {
            return out;
        }
        if shared.processed.fetch_add(1, Ordering::Relaxed) >= cfg.max_boxes {
            out.exhausted = true;
            undecided(b, &mut out);
            while let Some(rest) = stack.pop() {
                undecided(rest, &mut out);
            }
            return out;
        }
        out.processed += 1;
        match check(&b, rng) {
            BoxOutcome::Pass => {}
            BoxOutcome::Violation(w) => {
                shared.found.fetch_add(1, Ordering::Relaxed);
                out.witnesses.push(w);
            }
            BoxOutcome::Split => {
                if b.max_width() <= cfg.min_width {
                    undecided(b, &mut out);
                } else {
                    let (lo, hi) = b.bisect(b.widest_dim());
                    // lower half first
                    stack.push(hi);
                    stack.push(lo);
                }
            }
        }
    }
    out
}

/// Worker threads: `CLBF_THREADS` if set, else the rayon pool size.
pub fn worker_count() -> usize {
    std::env::var("CLBF_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n >= 1)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Runs the search over `roots` with `check` deciding each box.
pub(crate) fn branch_and_bound<F>(
    condition: Condition,
    roots: Vec<IntervalBox>,
    cfg: &BnbConfig,
    check: F,
) -> Verdict
where
    F: Fn(&IntervalBox, &mut ChaCha8Rng) -> BoxOutcome + Sync,
{
    let measure = Measure::new(&roots);
    let total: f64 = roots.iter().map(|b| measure.of(b)).sum();
    let shared = Shared {
        cfg,
        processed: AtomicUsize::new(0),
        found: AtomicUsize::new(0),
        measure,
    };
    let workers = if cfg.deterministic { 1 } else { worker_count() };
    let parts: Vec<Partial> = if workers <= 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        roots
            .into_iter()
            .map(|r| dfs(r, &shared, &mut rng, &check))
            .collect()
    } else {
        // pre-split into enough chunks to keep every worker busy
        let mut chunks = roots;
        while chunks.len() < 8 * workers {
            let mut next = Vec::with_capacity(chunks.len() * 2);
            for b in chunks {
                if b.max_width() > cfg.min_width {
                    let (a, c) = b.bisect(b.widest_dim());
                    next.push(a);
                    next.push(c);
                } else {
                    next.push(b);
                }
            }
            if next.is_empty() || next.iter().all(|b| b.max_width() <= cfg.min_width) {
                chunks = next;
                break;
            }
            chunks = next;
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build();
        let run = || {
            chunks
                .into_par_iter()
                .enumerate()
                .map(|(i, r)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                    rng.set_stream(i as u64);
                    dfs(r, &shared, &mut rng, &check)
                })
                .collect()
        };
        match pool {
            Ok(p) => p.install(run),
            Err(_) => run(),
        }
    };

    let mut verdict = Verdict::proved(condition);
    let mut unknown_measure = 0.0;
    for p in parts {
        verdict.counterexamples.extend(p.witnesses);
        for b in p.unknown {
            if verdict.unknown_boxes.len() < cfg.max_reported_boxes {
                verdict.unknown_boxes.push(b);
            }
        }
        unknown_measure += p.unknown_measure;
        verdict.boxes_processed += p.processed;
        verdict.budget_exhausted |= p.exhausted;
    }
    verdict.counterexamples.truncate(cfg.max_counterexamples);
    verdict.unknown_volume_fraction = if total > 0.0 {
        unknown_measure / total
    } else {
        0.0
    };
    verdict.witness = verdict.counterexamples.first().cloned();
    verdict.status = if verdict.witness.is_some() {
        Status::Counterexample
    } else if unknown_measure > 0.0 || !verdict.unknown_boxes.is_empty() {
        Status::Unknown
    } else {
        Status::Proved
    };
    verdict
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> BnbConfig {
        BnbConfig {
            deterministic: true,
            min_width: 1e-3,
            ..Default::default()
        }
    }

    #[test]
    fn driver_proves_when_every_box_passes() {
        let v = branch_and_bound(
            Condition::Init,
            vec![IntervalBox::from_bounds(&[(0.0, 1.0)])],
            &cfg(),
            |_, _| BoxOutcome::Pass,
        );
        assert_eq!(v.status, Status::Proved);
        assert_eq!(v.boxes_processed, 1);
    }

    #[test]
    fn driver_reports_undecided_volume() {
        // boxes pass unless they touch x = 0.5
        let v = branch_and_bound(
            Condition::Init,
            vec![IntervalBox::from_bounds(&[(0.0, 1.0)])],
            &cfg(),
            |b, _| {
                if b.contains(&[0.5]) {
                    BoxOutcome::Split
                } else {
                    BoxOutcome::Pass
                }
            },
        );
        assert_eq!(v.status, Status::Unknown);
        assert!(v.unknown_volume_fraction > 0.0 && v.unknown_volume_fraction < 3e-3);
    }

    #[test]
    fn driver_budget_exhaustion_is_unknown() {
        let c = BnbConfig {
            max_boxes: 5,
            ..cfg()
        };
        let v = branch_and_bound(
            Condition::Init,
            vec![IntervalBox::from_bounds(&[(0.0, 1.0), (0.0, 1.0)])],
            &c,
            |_, _| BoxOutcome::Split,
        );
        assert_eq!(v.status, Status::Unknown);
        assert!(v.budget_exhausted);
        assert!((v.unknown_volume_fraction - 1.0).abs() < 1e-12);
    }

    #[test]
    fn driver_stops_at_first_counterexample_in_order() {
        let v = branch_and_bound(
            Condition::Init,
            vec![IntervalBox::from_bounds(&[(0.0, 1.0)])],
            &cfg(),
            |b, _| {
                if b.hi()[0] > 0.3 {
                    if b.max_width() < 0.1 {
                        BoxOutcome::Violation(Witness {
                            condition: Condition::Init,
                            state: b.center(),
                            next: None,
                            violation: 1.0,
                        })
                    } else {
                        BoxOutcome::Split
                    }
                } else {
                    BoxOutcome::Pass
                }
            },
        );
        assert_eq!(v.status, Status::Counterexample);
        let w = v.witness.unwrap();
        assert!(w.state[0] < 0.4, "{:?}", w.state);
    }
}
