use rand_chacha::ChaCha8Rng;

use super::{
    branch_and_bound, BnbConfig, BoxOutcome, Condition, Status, Verdict, Witness,
    WITNESS_MIN_VIOLATION,
};
use crate::adversary::{ascend_in_box, pgd_maximize, start_points, PgdConfig};
use crate::certificate::FilteredCertificate;
use crate::envs::{EnvSpec, CONTROL_HI, CONTROL_LO};
use crate::ibp::{clamp_derivative, ibp_trace, interval_jacobian, IbpTrace};
use crate::interval::{Interval, IntervalBox};
use crate::losses::{descent_term, LossGrads, NextValue};
use crate::nn::{value_and_input_grad, Mlp};

/// Sound bounds on `π(x)` over `b`, clamped to the control box.
pub fn ibp_policy_bounds(policy: &Mlp, b: &IntervalBox) -> IntervalBox {
    let out = crate::ibp::ibp(policy, &b.intervals());
    let clamped: Vec<Interval> = out
        .iter()
        .map(|i| i.clamp(CONTROL_LO, CONTROL_HI))
        .collect();
    IntervalBox::from_intervals(&clamped)
}

/// Absolute allowance for rounding in a point evaluation of a network.
fn eval_pad(v: f64) -> f64 {
    1e-10 * (1.0 + v.abs())
}

/// Radii of `b` around its (rounded) centre, nudged to cover the box.
fn covering_radii(b: &IntervalBox, c: &[f64]) -> Vec<f64> {
    (0..b.dim())
        .map(|d| (b.hi()[d] - c[d]).max(c[d] - b.lo()[d]) * (1.0 + 4.0 * f64::EPSILON))
        .collect()
}

/// Interval enclosure of the raw certificate over a box, with lazily
/// computed mean-value refinement.
struct NetEnclosure {
    trace: IbpTrace,
    ibp: Interval,
    jac: Option<Vec<Interval>>,
}

impl NetEnclosure {
    fn new(net: &Mlp, b: &IntervalBox) -> Self {
        let trace = ibp_trace(net, &b.intervals());
        let ibp = trace.output()[0];
        NetEnclosure {
            trace,
            ibp,
            jac: None,
        }
    }

    fn jacobian(&mut self, net: &Mlp) -> &[Interval] {
        if self.jac.is_none() {
            self.jac = Some(interval_jacobian(net, &self.trace));
        }
        self.jac.as_deref().expect("just set")
    }

    /// Mean-value form intersected with plain IBP.
    fn refined(&mut self, net: &Mlp, b: &IntervalBox) -> Interval {
        let c = b.center();
        let r = covering_radii(b, &c);
        let vc = net.eval_scalar(&c);
        let spread: f64 = self
            .jacobian(net)
            .iter()
            .zip(&r)
            .map(|(j, ri)| j.magnitude() * ri)
            .sum();
        let pad = eval_pad(vc) + spread * 4.0 * f64::EPSILON;
        let lo = (vc - spread - pad).max(self.ibp.lo);
        let hi = (vc + spread + pad).min(self.ibp.hi);
        Interval::new(lo.min(hi), hi.max(lo))
    }
}

/// V ≤ β on the initial set.
pub fn check_init(cert: &FilteredCertificate, env: &EnvSpec, cfg: &BnbConfig) -> Verdict {
    let beta = cert.params.beta;
    let p = cert.params;
    let roots = env.init.boxes().to_vec();
    let check = |b: &IntervalBox, rng: &mut ChaCha8Rng| -> BoxOutcome {
        let touches_unsafe = env.box_touches_unsafe(b);
        if touches_unsafe && p.unsafe_mask > beta {
            return concrete_init(cert, env, b, cfg, rng);
        }
        if !touches_unsafe && env.box_in_goal(b) {
            return if p.goal_mask <= beta {
                BoxOutcome::Pass
            } else {
                concrete_init(cert, env, b, cfg, rng)
            };
        }
        let goal_hi = if env.box_touches_goal(b) {
            p.goal_mask
        } else {
            f64::NEG_INFINITY
        };
        if goal_hi > beta {
            return concrete_init(cert, env, b, cfg, rng);
        }
        let mut enc = NetEnclosure::new(&cert.net, b);
        if enc.ibp.hi <= beta || enc.refined(&cert.net, b).hi <= beta {
            return BoxOutcome::Pass;
        }
        concrete_init(cert, env, b, cfg, rng)
    };
    branch_and_bound(Condition::Init, roots, cfg, check)
}

fn concrete_init(
    cert: &FilteredCertificate,
    _env: &EnvSpec,
    b: &IntervalBox,
    cfg: &BnbConfig,
    rng: &mut ChaCha8Rng,
) -> BoxOutcome {
    let beta = cert.params.beta;
    let starts = start_points(b, cfg.pgd_restarts.max(1), rng);
    let steps: Vec<f64> = b.radii().iter().map(|r| r / 4.0).collect();
    let (x, _) = ascend_in_box(
        |y| value_and_input_grad(&cert.net, y),
        b,
        &starts,
        cfg.pgd_steps,
        &steps,
    );
    // masked sets can hide the centre, so corners are tried as well
    let mut candidates = vec![b.center(), x];
    candidates.extend(b.corners());
    candidates.extend(starts);
    for x in candidates {
        let v = cert.value(&x);
        if v - beta >= WITNESS_MIN_VIOLATION {
            return BoxOutcome::Violation(Witness {
                condition: Condition::Init,
                state: x,
                next: None,
                violation: v - beta,
            });
        }
    }
    BoxOutcome::Split
}

/// V ≥ α on the unsafe set. The filter makes this a statement about the
/// mask constant, checked here together with a point query.
pub fn check_safety(cert: &FilteredCertificate, env: &EnvSpec) -> Verdict {
    let p = cert.params;
    let probe = env
        .unsafe_point_in(&env.domain.inflate(1.0))
        .unwrap_or_else(|| env.domain.hi().iter().map(|v| v + 1.0).collect());
    let v = cert.value(&probe);
    if p.unsafe_mask >= p.alpha && v >= p.alpha {
        let mut out = Verdict::proved(Condition::Safety);
        out.boxes_processed = 1;
        return out;
    }
    let w = Witness {
        condition: Condition::Safety,
        state: probe,
        next: None,
        violation: p.alpha - v,
    };
    Verdict {
        condition: Condition::Safety,
        status: Status::Counterexample,
        witness: Some(w.clone()),
        counterexamples: vec![w],
        unknown_boxes: Vec::new(),
        unknown_volume_fraction: 0.0,
        boxes_processed: 1,
        budget_exhausted: false,
    }
}

/// Exact check of the robust decrease condition at one state; returns the
/// worst successor found and the violation, if it is a real one.
const ASCENT_WIDTH_FACTOR: f64 = 64.0;
const SUCCESSOR_SPLITS: usize = 64;

#[allow(clippy::too_many_arguments)]
fn exact_decrease_violation(
    cert: &FilteredCertificate,
    policy: &Mlp,
    env: &EnvSpec,
    x: &[f64],
    delta: f64,
    epsilon: f64,
    pgd: &PgdConfig,
    slope: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Option<(Vec<f64>, f64)> {
    if cert.mask_at(x).is_some() {
        return None;
    }
    let vx = cert.raw(x);
    if vx > cert.params.beta {
        return None;
    }
    let next = env.closed_loop(policy, x);
    // `slope` bounds the l1 norm of the network gradient over the ball
    if let Some(l) = slope {
        let ball = IntervalBox::ball_inf(&next, delta);
        if !env.box_touches_unsafe(&ball) && vx - cert.raw(&next) - l * delta >= epsilon {
            return None;
        }
    }
    let mut candidates = vec![next.clone()];
    if delta > 0.0 {
        candidates.push(pgd_maximize(&cert.net, &next, pgd, rng));
        let ball = IntervalBox::ball_inf(&next, delta);
        if let Some(u) = env.unsafe_point_in(&ball) {
            candidates.push(u);
        }
    }
    let mut worst: Option<(Vec<f64>, f64)> = None;
    for y in candidates {
        let viol = epsilon - (vx - cert.value(&y));
        if worst.as_ref().is_none_or(|(_, w)| viol > *w) {
            worst = Some((y, viol));
        }
    }
    worst.filter(|(_, v)| *v >= WITNESS_MIN_VIOLATION)
}

/// Robust decrease: for x outside the goal with V(x) ≤ β and every y in the
/// δ-ball around f(x, π(x)), V(x) − V(y) ≥ ε.
pub fn check_robust_decrease(
    cert: &FilteredCertificate,
    policy: &Mlp,
    env: &EnvSpec,
    delta: f64,
    epsilon: f64,
    cfg: &BnbConfig,
) -> Verdict {
    check_robust_decrease_over(
        cert,
        policy,
        env,
        vec![env.domain.clone()],
        delta,
        epsilon,
        cfg,
    )
}

/// Whether the filtered certificate stays `≤ target` on `region`, bisecting
/// the region at most `budget` times.
fn filtered_upper_below(
    cert: &FilteredCertificate,
    env: &EnvSpec,
    region: &IntervalBox,
    target: f64,
    budget: &mut usize,
) -> bool {
    let p = cert.params;
    let mut stack = vec![region.clone()];
    while let Some(r) = stack.pop() {
        let ok = if env.box_touches_unsafe(&r) {
            p.unsafe_mask <= target
        } else if env.box_in_goal(&r) {
            p.goal_mask <= target
        } else {
            let goal = if env.box_touches_goal(&r) {
                p.goal_mask
            } else {
                f64::NEG_INFINITY
            };
            let mut e = NetEnclosure::new(&cert.net, &r);
            e.ibp.hi.max(goal) <= target || e.refined(&cert.net, &r).hi.max(goal) <= target
        };
        if ok {
            continue;
        }
        if *budget == 0 || env.box_in_unsafe(&r) {
            return false;
        }
        *budget -= 1;
        let (a, b) = r.bisect(r.widest_dim());
        stack.push(a);
        stack.push(b);
    }
    true
}

/// Cuts `roots` along every face of the goal and unsafe boxes, so that no
/// descendant box straddles a set boundary.
fn cut_along_sets(roots: Vec<IntervalBox>, env: &EnvSpec) -> Vec<IntervalBox> {
    let faces: Vec<(usize, f64)> = env
        .goal
        .boxes()
        .iter()
        .chain(env.unsafe_set.boxes())
        .flat_map(|s| (0..s.dim()).flat_map(move |d| [(d, s.lo()[d]), (d, s.hi()[d])]))
        .collect();
    let mut out = roots;
    for (d, t) in faces {
        let mut next = Vec::with_capacity(out.len());
        for b in out {
            if t.is_finite() && b.lo()[d] < t && t < b.hi()[d] {
                let (mut lo, mut hi) = (b.lo().to_vec(), b.hi().to_vec());
                hi[d] = t;
                next.push(IntervalBox::new(b.lo().to_vec(), hi).expect("valid cut"));
                lo[d] = t;
                next.push(IntervalBox::new(lo, b.hi().to_vec()).expect("valid cut"));
            } else {
                next.push(b);
            }
        }
        out = next;
    }
    out
}

/// [`check_robust_decrease`] restricted to the given root boxes.
pub fn check_robust_decrease_over(
    cert: &FilteredCertificate,
    policy: &Mlp,
    env: &EnvSpec,
    roots: Vec<IntervalBox>,
    delta: f64,
    epsilon: f64,
    cfg: &BnbConfig,
) -> Verdict {
    let roots = cut_along_sets(roots, env);
    let p = cert.params;
    let beta = p.beta;
    let pgd = PgdConfig {
        steps: cfg.pgd_steps.max(1),
        restarts: cfg.pgd_restarts.max(1),
        ..PgdConfig::with_delta(delta)
    };
    // ascent direction for the state search: a probe certificate whose
    // hinge is always active
    let mut probe = cert.clone();
    probe.params.epsilon = 1e6;
    probe.params.beta = f64::INFINITY;

    let check = |b: &IntervalBox, rng: &mut ChaCha8Rng| -> BoxOutcome {
        if env.box_in_unsafe(b) {
            return BoxOutcome::Pass; // V = unsafe mask > β: nothing to show
        }
        if env.box_in_goal(b) && !env.box_touches_unsafe(b) {
            return BoxOutcome::Pass;
        }
        // x side: only the raw network can bring V(x) ≤ β
        let mut ex = NetEnclosure::new(&cert.net, b);
        if ex.ibp.lo > beta {
            return BoxOutcome::Pass;
        }
        let u_raw = crate::ibp::ibp_trace(policy, &b.intervals());
        let u: Vec<Interval> = u_raw
            .output()
            .iter()
            .map(|i| i.clamp(CONTROL_LO, CONTROL_HI))
            .collect();
        let ubox = IntervalBox::from_intervals(&u);
        let n = env.step_interval(b, &ubox);
        let ninf = n.inflate(delta);

        // y side: masks met by the ball, and the network unless the ball is
        // entirely masked
        let ball_unsafe_only = env.box_in_unsafe(&ninf);
        let touches_unsafe = env.box_touches_unsafe(&ninf);
        let goal_only = !touches_unsafe && env.box_in_goal(&ninf);
        let mut mask_hi = f64::NEG_INFINITY;
        if touches_unsafe {
            mask_hi = mask_hi.max(p.unsafe_mask);
        }
        if env.box_touches_goal(&ninf) && !ball_unsafe_only {
            mask_hi = mask_hi.max(p.goal_mask);
        }
        let net_needed = !ball_unsafe_only && !goal_only;
        let mut ey = net_needed.then(|| NetEnclosure::new(&cert.net, &ninf));

        let mut x_lo = ex.ibp.lo;
        let y_hi = |ey: &Option<NetEnclosure>| {
            ey.as_ref()
                .map_or(f64::NEG_INFINITY, |e| e.ibp.hi)
                .max(mask_hi)
        };
        if x_lo - y_hi(&ey) >= epsilon {
            return BoxOutcome::Pass;
        }
        // mean-value refinement on both sides
        x_lo = ex.refined(&cert.net, b).lo;
        if x_lo > beta {
            return BoxOutcome::Pass;
        }
        let mut y_top = mask_hi;
        if let Some(e) = ey.as_mut() {
            y_top = y_top.max(e.refined(&cert.net, &ninf).hi);
        }
        if x_lo - y_top >= epsilon {
            return BoxOutcome::Pass;
        }
        // joint mean-value form of V(x) − V(f(x, π(x)) + d) for the
        // network/network pair; masks must separately clear the margin
        if net_needed && x_lo - mask_hi >= epsilon {
            let jy: Vec<Interval> = ey
                .as_mut()
                .expect("net needed")
                .jacobian(&cert.net)
                .to_vec();
            let jx_v: Vec<Interval> = ex.jacobian(&cert.net).to_vec();
            let lo = joint_lower_bound(cert, policy, env, b, &u_raw, &jx_v, &jy, delta);
            if lo >= epsilon {
                return BoxOutcome::Pass;
            }
        }

        // subdivide the successor box, which does not shrink with `b`
        let near_limit = b.max_width() <= ASCENT_WIDTH_FACTOR * cfg.min_width;
        if near_limit && x_lo - p.goal_mask >= epsilon {
            let mut budget = SUCCESSOR_SPLITS;
            if filtered_upper_below(cert, env, &ninf, x_lo - epsilon, &mut budget) {
                return BoxOutcome::Pass;
            }
        }

        // concrete search; a masked centre is replaced by the unmasked
        // corners so that boxes straddling a set boundary are still probed
        let c = b.center();
        let mut xs = vec![c.clone()];
        let mut start = c.clone();
        if cert.mask_at(&c).is_some() {
            xs.extend(
                b.corners()
                    .into_iter()
                    .filter(|x| cert.mask_at(x).is_none()),
            );
            if let Some(s) = xs.get(1) {
                start = s.clone();
            }
        }
        // the ascent only pays off on boxes close to the resolution limit
        if cfg.state_search_steps > 0 && b.max_width() > 0.0 && near_limit {
            let steps: Vec<f64> = b.radii().iter().map(|r| r / 4.0).collect();
            let (xa, _) = ascend_in_box(
                |x| {
                    let mut g = LossGrads::new(&probe.net, policy, Some(1), x.len());
                    let v = descent_term(
                        &probe,
                        policy,
                        env,
                        &[x.to_vec()],
                        NextValue::Nominal,
                        &|_| 1.0,
                        Some(&mut g),
                    );
                    (v, g.states.expect("requested").pop().expect("one state"))
                },
                b,
                &[start],
                cfg.state_search_steps,
                &steps,
            );
            xs.push(xa);
        }
        let slope = ey.as_mut().map(|e| {
            e.jacobian(&cert.net)
                .iter()
                .map(|g| g.magnitude())
                .sum::<f64>()
        });
        for x in xs {
            if let Some((y, viol)) =
                exact_decrease_violation(cert, policy, env, &x, delta, epsilon, &pgd, slope, rng)
            {
                return BoxOutcome::Violation(Witness {
                    condition: Condition::RobustDecrease,
                    state: x,
                    next: Some(y),
                    violation: viol,
                });
            }
        }
        BoxOutcome::Split
    };
    branch_and_bound(Condition::RobustDecrease, roots, cfg, check)
}

/// Lower bound of `V(x) − V(f(x, π(x)) + d)` over `x ∈ b`, `‖d‖∞ ≤ δ` by the
/// mean-value theorem with interval Jacobians.
#[allow(clippy::too_many_arguments)]
fn joint_lower_bound(
    cert: &FilteredCertificate,
    policy: &Mlp,
    env: &EnvSpec,
    b: &IntervalBox,
    pi_trace: &IbpTrace,
    jv_x: &[Interval],
    jv_y: &[Interval],
    delta: f64,
) -> f64 {
    let n = env.state_dim();
    let m = env.control_dim();
    let c = b.center();
    let r = covering_radii(b, &c);
    let vc = cert.raw(&c);
    let vn = cert.raw(&env.closed_loop(policy, &c));
    let d0 = vc - vn;

    let (a, bu) = env.jacobian_interval(b);
    let jpi = interval_jacobian(policy, pi_trace); // m × n
    let dclamp: Vec<Interval> = pi_trace
        .output()
        .iter()
        .map(|z| clamp_derivative(z, CONTROL_LO, CONTROL_HI))
        .collect();
    let widen = |i: Interval| i.widen(1e-12 * (1.0 + i.magnitude()));
    // J_f = A + B_u · diag(clamp') · J_π
    let mut jf = a.clone();
    for row in 0..n {
        for col in 0..n {
            let mut acc = jf[row * n + col];
            for k in 0..m {
                let t = bu[row * m + k].mul(&dclamp[k]).mul(&jpi[k * n + col]);
                acc = acc.add(&t);
            }
            jf[row * n + col] = widen(acc);
        }
    }
    // J_x = ∇V(x) − J_fᵀ ∇V(y)
    let mut spread = 0.0;
    for col in 0..n {
        let mut acc = jv_x[col];
        for row in 0..n {
            acc = acc.sub(&jv_y[row].mul(&jf[row * n + col]));
        }
        spread += widen(acc).magnitude() * r[col];
    }
    let dspread: f64 = jv_y.iter().map(|j| j.magnitude() * delta).sum();
    let pad = eval_pad(vc) + eval_pad(vn) + 8.0 * f64::EPSILON * (spread + dspread);
    d0 - spread - dspread - pad
}

/// All three conditions; decrease at `delta`, `epsilon`.
pub fn verify_all(
    cert: &FilteredCertificate,
    policy: &Mlp,
    env: &EnvSpec,
    delta: f64,
    epsilon: f64,
    cfg: &BnbConfig,
) -> [Verdict; 3] {
    [
        check_init(cert, env, cfg),
        check_robust_decrease(cert, policy, env, delta, epsilon, cfg),
        check_safety(cert, env),
    ]
}
