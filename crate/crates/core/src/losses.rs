//! Training losses: the initial-set hinge, three descent variants, the
//! global Lipschitz penalty, and their per-method combination.
//!
//! Every term is evaluated by one routine that can also accumulate exact
//! gradients w.r.t. certificate parameters, policy parameters and the input
//! states. Descent gradients flow through the policy and the dynamics
//! Jacobian; adversarial next states enter as frozen offsets.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{pgd_maximize, PgdConfig};
use crate::certificate::FilteredCertificate;
use crate::envs::{EnvSpec, CONTROL_HI, CONTROL_LO};
use crate::error::{ClbfError, Result};
use crate::interval::IntervalBox;
use crate::lipschitz::{norm_conversion_constant, NormKind};
use crate::nn::{lipschitz_upper_bound_l2, GradientTape, Mlp, MlpGrad, SpectralProduct};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "pgd")]
    Pgd,
    #[serde(rename = "lip-neighbor")]
    LipNeighbor,
    #[serde(rename = "lip-reg")]
    LipReg,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Vanilla,
        Method::Pgd,
        Method::LipNeighbor,
        Method::LipReg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Pgd => "pgd",
            Method::LipNeighbor => "lip-neighbor",
            Method::LipReg => "lip-reg",
        }
    }

    /// Whether the descent term looks at a perturbation ball during training.
    pub fn trains_robustly(self) -> bool {
        matches!(self, Method::Pgd | Method::LipNeighbor)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ClbfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(Method::Vanilla),
            "pgd" => Ok(Method::Pgd),
            "lip-neighbor" | "lip_neighbor" => Ok(Method::LipNeighbor),
            "lip-reg" | "lip_reg" => Ok(Method::LipReg),
            other => Err(ClbfError::Config(format!(
                "unknown method '{other}' (expected vanilla | pgd | lip-neighbor | lip-reg)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_init: f64,
    pub lambda_dec: f64,
    pub lambda_dec_adv: f64,
    pub lambda_dec_neighbor: f64,
    pub lambda_lip_global: f64,
    pub tau: f64,
    pub ce_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_init: 1.0,
            lambda_dec: 10.0,
            lambda_dec_adv: 10.0,
            lambda_dec_neighbor: 10.0,
            lambda_lip_global: 1.0,
            tau: 3.0,
            ce_weight: 100.0,
        }
    }
}

impl LossWeights {
    /// Weight of the descent term that `method` uses.
    pub fn descent_weight(&self, method: Method) -> f64 {
        match method {
            Method::Vanilla | Method::LipReg => self.lambda_dec,
            Method::Pgd => self.lambda_dec_adv,
            Method::LipNeighbor => self.lambda_dec_neighbor,
        }
    }

    pub fn validate(&self, method: Method) -> Result<()> {
        let all = [
            self.lambda_init,
            self.lambda_dec,
            self.lambda_dec_adv,
            self.lambda_dec_neighbor,
            self.lambda_lip_global,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ClbfError::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if !(self.ce_weight >= 1.0 && self.ce_weight.is_finite()) {
            return Err(ClbfError::Config("ce_weight must be at least 1".into()));
        }
        if !(self.descent_weight(method) > 0.0) {
            return Err(ClbfError::Config(format!(
                "method {method} needs a positive weight on its descent term"
            )));
        }
        if method == Method::LipReg {
            if !(self.tau > 0.0 && self.tau.is_finite()) {
                return Err(ClbfError::Config("lip-reg needs tau > 0".into()));
            }
            if !(self.lambda_lip_global > 0.0) {
                return Err(ClbfError::Config(
                    "lip-reg needs lambda_lip_global > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Original,
    Counterexample,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Batch {
    pub states: Vec<Vec<f64>>,
    pub origins: Vec<Origin>,
}

impl Batch {
    pub fn original(states: Vec<Vec<f64>>) -> Self {
        let origins = vec![Origin::Original; states.len()];
        Batch { states, origins }
    }

    pub fn push(&mut self, x: Vec<f64>, origin: Origin) {
        self.states.push(x);
        self.origins.push(origin);
    }

    pub fn extend(&mut self, other: &Batch) {
        self.states.extend(other.states.iter().cloned());
        self.origins.extend_from_slice(&other.origins);
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `n` fresh states uniform over `domain ∖ (goal ∪ unsafe)`.
    pub fn sample<R: Rng + ?Sized>(env: &EnvSpec, n: usize, rng: &mut R) -> Self {
        Batch::original((0..n).map(|_| env.sample_training_state(rng)).collect())
    }

    /// `n` fresh states uniform over the initial set.
    pub fn sample_init<R: Rng + ?Sized>(env: &EnvSpec, n: usize, rng: &mut R) -> Self {
        Batch::original((0..n).map(|_| env.sample_init(rng)).collect())
    }
}

/// How the next-state value in a descent summand is formed.
#[derive(Debug, Clone, Copy)]
pub enum NextValue<'a> {
    /// Filtered `V(f(x, π(x)))`.
    Nominal,
    /// Filtered `V(f(x, π(x)) + o_i)` with frozen offsets `o_i`.
    Offsets(&'a [Vec<f64>]),
    /// Upper bound of the filtered value over the δ-ball around the next
    /// state: `V_raw(next) + L·δ` on the unmasked part, mask values on any
    /// masked set the ball meets.
    Neighbor { l_p: f64, delta: f64 },
}

/// Gradient accumulators.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub cert: MlpGrad,
    pub policy: MlpGrad,
    /// Gradient w.r.t. each input state, when requested.
    pub states: Option<Vec<Vec<f64>>>,
    /// Accumulated coefficient of `∂L_p/∂θ` (neighbor term only).
    pub lip_coeff: f64,
}

impl LossGrads {
    pub fn new(cert: &Mlp, policy: &Mlp, n_states: Option<usize>, dim: usize) -> Self {
        LossGrads {
            cert: MlpGrad::zeros_like(cert),
            policy: MlpGrad::zeros_like(policy),
            states: n_states.map(|n| vec![vec![0.0; dim]; n]),
            lip_coeff: 0.0,
        }
    }
}

/// Σ s_i · max(0, V_raw(x_i) − target), optionally with gradients.
pub fn init_term(
    cert: &FilteredCertificate,
    states: &[Vec<f64>],
    target: f64,
    scale: &dyn Fn(usize) -> f64,
    mut grads: Option<&mut LossGrads>,
) -> f64 {
    let mut total = 0.0;
    let mut tape = GradientTape::new();
    for (i, x) in states.iter().enumerate() {
        let s = scale(i);
        if s == 0.0 {
            continue;
        }
        let v = tape.forward(&cert.net, x).expect("state dimension")[0];
        let h = v - target;
        if h <= 0.0 {
            continue;
        }
        total += s * h;
        if let Some(g) = grads.as_deref_mut() {
            let gx = tape.backward(&cert.net, &[s], &mut g.cert).expect("tape");
            if let Some(sg) = g.states.as_mut() {
                sg[i].iter_mut().zip(&gx).for_each(|(a, b)| *a += b);
            }
        }
    }
    total
}

/// Next-state value and, when the raw network is what determines it, the
/// point at which it is evaluated.
fn next_value(cert: &FilteredCertificate, y: &[f64], mode: NextValue<'_>) -> (f64, bool) {
    let p = &cert.params;
    match mode {
        NextValue::Nominal | NextValue::Offsets(_) => match cert.mask_at(y) {
            Some(m) => (m, false),
            None => (cert.raw(y), true),
        },
        NextValue::Neighbor { l_p, delta } => {
            if delta == 0.0 {
                return next_value(cert, y, NextValue::Nominal);
            }
            let ball = IntervalBox::ball_inf(y, delta);
            let env = &cert.env;
            if env.box_in_unsafe(&ball) {
                return (p.unsafe_mask, false);
            }
            let touches_unsafe = env.box_touches_unsafe(&ball);
            let mut best = f64::NEG_INFINITY;
            let mut raw = false;
            if touches_unsafe || !env.box_in_goal(&ball) {
                best = cert.raw(y) + l_p * delta;
                raw = true;
            }
            if touches_unsafe && p.unsafe_mask > best {
                best = p.unsafe_mask;
                raw = false;
            }
            if env.box_touches_goal(&ball) && p.goal_mask > best {
                best = p.goal_mask;
                raw = false;
            }
            (best, raw)
        }
    }
}

/// Σ s_i · max(0, ε − (V(x_i) − V_next,i)) over states outside the goal
/// with `V(x_i) ≤ β`, optionally with gradients.
#[allow(clippy::too_many_arguments)]
pub fn descent_term(
    cert: &FilteredCertificate,
    policy: &Mlp,
    env: &EnvSpec,
    states: &[Vec<f64>],
    mode: NextValue<'_>,
    scale: &dyn Fn(usize) -> f64,
    mut grads: Option<&mut LossGrads>,
) -> f64 {
    let p = &cert.params;
    let n = env.state_dim();
    let m = env.control_dim();
    let mut total = 0.0;
    let mut tape_x = GradientTape::new();
    let mut tape_y = GradientTape::new();
    let mut tape_pi = GradientTape::new();
    for (i, x) in states.iter().enumerate() {
        let s = scale(i);
        if s == 0.0 {
            continue;
        }
        let (vx, x_raw) = match cert.mask_at(x) {
            Some(_) if env.is_goal(x) && !env.is_unsafe(x) => continue,
            Some(mv) => (mv, false),
            None => (
                tape_x.forward(&cert.net, x).expect("state dimension")[0],
                true,
            ),
        };
        if vx > p.beta {
            continue;
        }
        let u_raw = tape_pi.forward(policy, x).expect("policy input");
        let u: Vec<f64> = u_raw
            .iter()
            .map(|v| v.clamp(CONTROL_LO, CONTROL_HI))
            .collect();
        let mut y = env.step(x, &u);
        if let NextValue::Offsets(off) = mode {
            y.iter_mut().zip(&off[i]).for_each(|(a, b)| *a += b);
        }
        let (vy, y_raw) = next_value(cert, &y, mode);
        let h = p.epsilon - (vx - vy);
        if h <= 0.0 {
            continue;
        }
        total += s * h;
        let Some(g) = grads.as_deref_mut() else {
            continue;
        };

        let mut gx_total = vec![0.0; n];
        if x_raw {
            let gx = tape_x
                .backward(&cert.net, &[-s], &mut g.cert)
                .expect("tape");
            gx_total.iter_mut().zip(&gx).for_each(|(a, b)| *a += b);
        }
        if y_raw {
            tape_y.forward(&cert.net, &y).expect("state dimension");
            let gy = tape_y.backward(&cert.net, &[s], &mut g.cert).expect("tape");
            if let NextValue::Neighbor { delta, .. } = mode {
                g.lip_coeff += s * delta;
            }
            let (a, b) = env.jacobian(x);
            // through the dynamics: Aᵀ g_y
            for r in 0..n {
                for c in 0..n {
                    gx_total[c] += a[r * n + c] * gy[r];
                }
            }
            // through the control: Bᵀ g_y, masked by the clamp derivative
            let mut gu = vec![0.0; m];
            for (c, guc) in gu.iter_mut().enumerate() {
                if u_raw[c] > CONTROL_LO && u_raw[c] < CONTROL_HI {
                    *guc = (0..n).map(|r| b[r * m + c] * gy[r]).sum();
                }
            }
            if gu.iter().any(|v| *v != 0.0) {
                let gxp = tape_pi.backward(policy, &gu, &mut g.policy).expect("tape");
                gx_total.iter_mut().zip(&gxp).for_each(|(a, b)| *a += b);
            }
        }
        if let Some(sg) = g.states.as_mut() {
            sg[i].iter_mut().zip(&gx_total).for_each(|(a, b)| *a += b);
        }
    }
    total
}

/// `max(0, ∏σ − τ)` from a spectral estimate, accumulating `scale · ∂` into `grad`.
pub fn lip_global_term(
    prod: &SpectralProduct,
    tau: f64,
    scale: f64,
    grad: Option<&mut MlpGrad>,
) -> f64 {
    let h = prod.product - tau;
    if h <= 0.0 {
        return 0.0;
    }
    if let Some(g) = grad {
        prod.accumulate_grad(scale, g);
    }
    h
}

fn unit(_: usize) -> f64 {
    1.0
}

/// `Σ max(0, V_raw(x) − β)`.
pub fn loss_init(cert: &FilteredCertificate, batch_init: &[Vec<f64>]) -> f64 {
    init_term(cert, batch_init, cert.params.beta, &unit, None)
}

pub fn loss_dec(
    cert: &FilteredCertificate,
    policy: &Mlp,
    env: &EnvSpec,
    batch: &[Vec<f64>],
) -> f64 {
    descent_term(cert, policy, env, batch, NextValue::Nominal, &unit, None)
}

/// Offsets `ŷ_i − f(x_i, π(x_i))` of the PGD maximiser, chosen between the
/// nominal next state and the PGD point by filtered value.
pub fn adversarial_offsets<R: Rng + ?Sized>(
    cert: &FilteredCertificate,
    policy: &Mlp,
    env: &EnvSpec,
    batch: &[Vec<f64>],
    pgd: &PgdConfig,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    batch
        .iter()
        .map(|x| {
            let next = env.closed_loop(policy, x);
            if pgd.delta == 0.0 {
                return vec![0.0; next.len()];
            }
            let y = pgd_maximize(&cert.net, &next, pgd, rng);
            if cert.value(&y) > cert.value(&next) {
                y.iter().zip(&next).map(|(a, b)| a - b).collect()
            } else {
                vec![0.0; next.len()]
            }
        })
        .collect()
}

pub fn loss_dec_adv<R: Rng + ?Sized>(
    cert: &FilteredCertificate,
    policy: &Mlp,
    env: &EnvSpec,
    batch: &[Vec<f64>],
    pgd: &PgdConfig,
    rng: &mut R,
) -> f64 {
    let off = adversarial_offsets(cert, policy, env, batch, pgd, rng);
    descent_term(
        cert,
        policy,
        env,
        batch,
        NextValue::Offsets(&off),
        &unit,
        None,
    )
}

pub fn loss_dec_neighbor(
    cert: &FilteredCertificate,
    policy: &Mlp,
    env: &EnvSpec,
    batch: &[Vec<f64>],
    l_p: f64,
    delta: f64,
) -> f64 {
    descent_term(
        cert,
        policy,
        env,
        batch,
        NextValue::Neighbor { l_p, delta },
        &unit,
        None,
    )
}

/// `max(0, ∏‖W_k‖₂ − τ)`.
pub fn loss_lip_global(net: &Mlp, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(ClbfError::invalid("tau must be positive"));
    }
    Ok((lipschitz_upper_bound_l2(net)? - tau).max(0.0))
}

/// Unweighted loss components over one data set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Components {
    pub init: f64,
    pub dec: f64,
    pub dec_adv: f64,
    pub dec_neighbor: f64,
    pub lip_global: f64,
}

impl Components {
    fn weighted(&self, method: Method, w: &LossWeights) -> f64 {
        let descent = match method {
            Method::Vanilla | Method::LipReg => w.lambda_dec * self.dec,
            Method::Pgd => w.lambda_dec_adv * self.dec_adv,
            Method::LipNeighbor => w.lambda_dec_neighbor * self.dec_neighbor,
        };
        w.lambda_init * self.init + descent
    }
}

/// `L_orig + w · L_ce`, with the method's active terms. The global
/// Lipschitz penalty does not depend on data and is counted once (taken
/// from `orig`).
pub fn total_loss(
    method: Method,
    weights: &LossWeights,
    orig: &Components,
    ce: &Components,
) -> Result<f64> {
    weights.validate(method)?;
    let mut total =
        orig.weighted(method, weights) + weights.ce_weight * ce.weighted(method, weights);
    if method == Method::LipReg {
        total += weights.lambda_lip_global * orig.lip_global;
    }
    Ok(total)
}

/// Everything needed to evaluate the training objective once.
pub struct Objective<'a> {
    pub cert: &'a FilteredCertificate,
    pub policy: &'a Mlp,
    pub env: &'a EnvSpec,
    pub method: Method,
    pub weights: &'a LossWeights,
    /// Initial-set hinge threshold (β minus a training margin).
    pub init_target: f64,
    /// Training perturbation radius (used by the robust methods).
    pub delta: f64,
}

/// Per-call inputs that depend on the current parameters.
pub struct ObjectiveAux<'a> {
    /// Frozen PGD offsets, one per descent state (PGD method).
    pub offsets: Option<&'a [Vec<f64>]>,
    /// Spectral estimate of the certificate net (LipReg, LipNeighbor).
    pub spectral: Option<&'a SpectralProduct>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub orig: Components,
    pub ce: Components,
    pub total: f64,
    pub grads: Option<LossGrads>,
}

impl<'a> Objective<'a> {
    fn l_p(&self, aux: &ObjectiveAux<'_>) -> f64 {
        let k =
            norm_conversion_constant(NormKind::LInf, self.cert.net.input_dim(), 1).expect("dims");
        k * aux
            .spectral
            .expect("neighbor loss needs a spectral estimate")
            .product
    }

    /// Loss value and, if `with_grads`, gradients (state gradients included
    /// when `state_grads`).
    pub fn evaluate(
        &self,
        init: &Batch,
        dec: &Batch,
        aux: &ObjectiveAux<'_>,
        with_grads: bool,
        state_grads: bool,
    ) -> Result<Evaluation> {
        self.weights.validate(self.method)?;
        let w = self.weights;
        let dim = self.env.state_dim();
        let mut g_init = with_grads.then(|| {
            LossGrads::new(
                &self.cert.net,
                self.policy,
                state_grads.then_some(init.len()),
                dim,
            )
        });
        let mut g_dec = with_grads.then(|| {
            LossGrads::new(
                &self.cert.net,
                self.policy,
                state_grads.then_some(dec.len()),
                dim,
            )
        });

        let mut orig = Components::default();
        let mut ce = Components::default();
        let cw = w.ce_weight;

        let split = |b: &Batch, want: Origin| -> Vec<f64> {
            b.origins
                .iter()
                .map(|o| if *o == want { 1.0 } else { 0.0 })
                .collect()
        };
        let init_o = split(init, Origin::Original);
        let init_c = split(init, Origin::Counterexample);
        let dec_o = split(dec, Origin::Original);
        let dec_c = split(dec, Origin::Counterexample);

        // value pass per origin (for reporting), gradient pass once with the
        // combined per-state weights
        orig.init = init_term(
            self.cert,
            &init.states,
            self.init_target,
            &|i| init_o[i],
            None,
        );
        ce.init = init_term(
            self.cert,
            &init.states,
            self.init_target,
            &|i| init_c[i],
            None,
        );
        let init_scale = |i: usize| w.lambda_init * (init_o[i] + cw * init_c[i]);
        if let Some(g) = g_init.as_mut() {
            init_term(
                self.cert,
                &init.states,
                self.init_target,
                &init_scale,
                Some(g),
            );
        }

        let mode = match self.method {
            Method::Vanilla | Method::LipReg => NextValue::Nominal,
            Method::Pgd => match aux.offsets {
                Some(off) => {
                    ClbfError::check_dim(dec.len(), off.len())?;
                    NextValue::Offsets(off)
                }
                None => NextValue::Nominal,
            },
            Method::LipNeighbor => NextValue::Neighbor {
                l_p: self.l_p(aux),
                delta: self.delta,
            },
        };
        let lam = w.descent_weight(self.method);
        let d_o = descent_term(
            self.cert,
            self.policy,
            self.env,
            &dec.states,
            mode,
            &|i| dec_o[i],
            None,
        );
        let d_c = descent_term(
            self.cert,
            self.policy,
            self.env,
            &dec.states,
            mode,
            &|i| dec_c[i],
            None,
        );
        let dec_scale = |i: usize| lam * (dec_o[i] + cw * dec_c[i]);
        if let Some(g) = g_dec.as_mut() {
            descent_term(
                self.cert,
                self.policy,
                self.env,
                &dec.states,
                mode,
                &dec_scale,
                Some(g),
            );
        }
        match self.method {
            Method::Vanilla | Method::LipReg => {
                orig.dec = d_o;
                ce.dec = d_c;
            }
            Method::Pgd => {
                orig.dec_adv = d_o;
                ce.dec_adv = d_c;
            }
            Method::LipNeighbor => {
                orig.dec_neighbor = d_o;
                ce.dec_neighbor = d_c;
            }
        }

        if self.method == Method::LipReg {
            let prod = aux.spectral.expect("lip-reg needs a spectral estimate");
            let gref = g_dec.as_mut().map(|g| &mut g.cert);
            orig.lip_global = lip_global_term(prod, w.tau, w.lambda_lip_global, gref);
        }

        let total = total_loss(self.method, w, &orig, &ce)?;

        let grads = match (g_init, g_dec) {
            (Some(gi), Some(mut gd)) => {
                gd.cert.add_scaled(&gi.cert, 1.0);
                if gd.lip_coeff != 0.0 {
                    let prod = aux.spectral.expect("neighbor needs spectral estimate");
                    let k = norm_conversion_constant(NormKind::LInf, self.cert.net.input_dim(), 1)?;
                    prod.accumulate_grad(gd.lip_coeff * k, &mut gd.cert);
                }
                if let (Some(sd), Some(si)) = (gd.states.as_mut(), gi.states) {
                    // init-state gradients are appended after the descent ones
                    sd.extend(si);
                }
                Some(gd)
            }
            _ => None,
        };
        Ok(Evaluation {
            orig,
            ce,
            total,
            grads,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::ClbfParams;
    use crate::nn::{Activation, Layer, SpectralTracker};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Certificate whose raw value is `w·x + b`, plus a zero policy.
    fn linear_cert(env: &EnvSpec, w: &[f64], b: f64) -> FilteredCertificate {
        let net = Mlp::new(
            vec![Layer::new(1, w.len(), w.to_vec(), vec![b]).unwrap()],
            vec![],
        )
        .unwrap();
        FilteredCertificate::new(net, ClbfParams::for_env(env), env.clone()).unwrap()
    }

    fn zero_policy(env: &EnvSpec) -> Mlp {
        Mlp::new(
            vec![Layer::zeros(env.control_dim(), env.state_dim())],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn init_examples() {
        let env = EnvSpec::pendulum();
        // V(x) = x0 + 1 on states with chosen first coordinate
        let cert = linear_cert(&env, &[1.0, 0.0], 1.0);
        let s = |v: f64| vec![v - 1.0, 0.0];
        assert_eq!(loss_init(&cert, &[s(0.5), s(1.0)]), 0.0);
        assert!((loss_init(&cert, &[s(1.5)]) - 0.5).abs() < 1e-12);
        assert!((loss_init(&cert, &[s(0.5), s(1.5), s(1.2)]) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn lip_global_examples() {
        let two = Layer::new(2, 2, vec![2.0, 0.0, 0.0, 2.0], vec![0.0; 2]).unwrap();
        let three = Layer::new(2, 2, vec![3.0, 0.0, 0.0, 3.0], vec![0.0; 2]).unwrap();
        let net = Mlp::new(vec![two, three], vec![Activation::Relu]).unwrap();
        assert_eq!(loss_lip_global(&net, 10.0).unwrap(), 0.0);
        assert!((loss_lip_global(&net, 4.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(loss_lip_global(&net, 6.0).unwrap().abs() < 1e-12);
        assert!(loss_lip_global(&net, 0.0).is_err());
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        let z = Components::default();
        assert_eq!(total_loss(Method::Vanilla, &w, &z, &z).unwrap(), 0.0);
        let o = Components {
            init: 0.5,
            dec: 0.1,
            ..z
        };
        assert!((total_loss(Method::Vanilla, &w, &o, &z).unwrap() - 1.5).abs() < 1e-12);
        let c = Components { dec: 0.01, ..z };
        assert!((total_loss(Method::Vanilla, &w, &z, &c).unwrap() - 10.0).abs() < 1e-12);
        let bad = LossWeights {
            lambda_dec_adv: 0.0,
            ..w
        };
        assert!(total_loss(Method::Pgd, &bad, &z, &z).is_err());
        assert!(total_loss(
            Method::Vanilla,
            &LossWeights {
                ce_weight: 0.5,
                ..w
            },
            &z,
            &z
        )
        .is_err());
    }

    /// Hinge with a prescribed V(x) and V(next): V(x) is set through the
    /// bias of a net that only reads coordinate 0, and the dynamics are the
    /// pendulum's, so the pair is computed rather than assumed.
    #[test]
    fn descent_hinge_arithmetic() {
        let env = EnvSpec::pendulum();
        let policy = zero_policy(&env);
        let x = vec![0.5, -0.3];
        let next = env.closed_loop(&policy, &x);
        // V = a·θ + b with V(x) = 1 and V(next) = target
        let mk = |target: f64| {
            let a = (1.0 - target) / (x[0] - next[0]);
            linear_cert(&env, &[a, 0.0], 1.0 - a * x[0])
        };
        let eps = ClbfParams::for_env(&env).epsilon;
        let c = mk(0.98);
        assert_eq!(loss_dec(&c, &policy, &env, std::slice::from_ref(&x)), 0.0);
        let c = mk(1.0 - eps / 2.0);
        assert!((loss_dec(&c, &policy, &env, std::slice::from_ref(&x)) - eps / 2.0).abs() < 1e-12);
        // V(x) > β: excluded
        let c = linear_cert(&env, &[0.0, 0.0], 1.3);
        assert_eq!(loss_dec(&c, &policy, &env, std::slice::from_ref(&x)), 0.0);

        // neighbor examples with ε = 0.01
        let mut c = mk(0.9);
        c.params.epsilon = 0.01;
        assert!(loss_dec_neighbor(&c, &policy, &env, std::slice::from_ref(&x), 2.0, 0.01).abs() < 1e-12);
        let v = loss_dec_neighbor(&c, &policy, &env, std::slice::from_ref(&x), 2.0, 0.05);
        assert!((v - 0.01).abs() < 1e-9);
        assert_eq!(
            loss_dec_neighbor(&c, &policy, &env, std::slice::from_ref(&x), 2.0, 0.0),
            loss_dec(&c, &policy, &env, &[x])
        );
    }

    #[test]
    fn adversarial_linear_example() {
        let env = EnvSpec::pendulum();
        let policy = zero_policy(&env);
        let mut cert = linear_cert(&env, &[1.0, -2.0], 0.0);
        cert.params.epsilon = 1.0;
        let x = vec![0.45, 0.05];
        let next = env.closed_loop(&policy, &x);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let off = adversarial_offsets(
            &cert,
            &policy,
            &env,
            std::slice::from_ref(&x),
            &PgdConfig::with_delta(0.1),
            &mut rng,
        );
        assert!((off[0][0] - 0.1).abs() < 1e-12 && (off[0][1] + 0.1).abs() < 1e-12);
        let adv = loss_dec_adv(
            &cert,
            &policy,
            &env,
            std::slice::from_ref(&x),
            &PgdConfig::with_delta(0.1),
            &mut rng,
        );
        let vx = cert.raw(&x);
        let want = 1.0 - (vx - (cert.raw(&next) + 0.3));
        assert!((adv - want).abs() < 1e-12);
        let zero = loss_dec_adv(
            &cert,
            &policy,
            &env,
            std::slice::from_ref(&x),
            &PgdConfig::with_delta(0.0),
            &mut rng,
        );
        assert_eq!(zero, loss_dec(&cert, &policy, &env, &[x]));
    }

    fn random_pair(env: &EnvSpec, seed: u64) -> (FilteredCertificate, Mlp) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = env.state_dim();
        let mut net = Mlp::glorot(&[n, 16, 8, 1], &mut rng).unwrap();
        for l in net.layers_mut() {
            l.bias
                .iter_mut()
                .for_each(|b| *b = rng.gen_range(-0.3..0.3));
        }
        let mut policy = Mlp::glorot(&[n, 12, 12, env.control_dim()], &mut rng).unwrap();
        for l in policy.layers_mut() {
            l.weights.iter_mut().for_each(|w| *w *= 0.5);
        }
        let mut params = ClbfParams::for_env(env);
        params.epsilon = 0.5;
        params.beta = 5.0;
        params.alpha = 6.0;
        params.unsafe_mask = 6.0;
        (
            FilteredCertificate::new(net, params, env.clone()).unwrap(),
            policy,
        )
    }

    #[test]
    fn adversarial_dominates_nominal() {
        for env in [EnvSpec::pendulum(), EnvSpec::docking2d()] {
            for seed in 0..50 {
                let (cert, policy) = random_pair(&env, seed);
                let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
                let batch = Batch::sample(&env, 16, &mut rng).states;
                let nom = loss_dec(&cert, &policy, &env, &batch);
                let adv = loss_dec_adv(
                    &cert,
                    &policy,
                    &env,
                    &batch,
                    &PgdConfig::with_delta(0.02),
                    &mut rng,
                );
                assert!(adv >= nom - 1e-12, "{adv} < {nom}");
            }
        }
    }

    #[test]
    fn parsing_and_validation() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert!(LossWeights::default().validate(m).is_ok());
        }
        assert!("lipreg".parse::<Method>().is_err());
        let w = LossWeights {
            tau: 0.0,
            ..Default::default()
        };
        assert!(w.validate(Method::LipReg).is_err());
        assert!(w.validate(Method::Vanilla).is_ok());
    }

    #[test]
    fn objective_gradients_match_finite_differences() {
        for (k, method) in Method::ALL.into_iter().enumerate() {
            let env = if k % 2 == 0 {
                EnvSpec::pendulum()
            } else {
                EnvSpec::docking2d()
            };
            let (cert, policy) = random_pair(&env, 7 + k as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
            let mut dec = Batch::sample(&env, 6, &mut rng);
            dec.origins[0] = Origin::Counterexample;
            let init = Batch::sample_init(&env, 4, &mut rng);
            let weights = LossWeights {
                tau: 0.5,
                ..Default::default()
            };
            let eval = |c: &FilteredCertificate, p: &Mlp, grads: bool| {
                let mut tr = SpectralTracker::new();
                let sp = tr.estimate(&c.net, 400).unwrap();
                let mut r = ChaCha8Rng::seed_from_u64(99);
                let off = adversarial_offsets(
                    &cert,
                    &policy,
                    &env,
                    &dec.states,
                    &PgdConfig::with_delta(0.01),
                    &mut r,
                );
                let obj = Objective {
                    cert: c,
                    policy: p,
                    env: &env,
                    method,
                    weights: &weights,
                    init_target: c.params.beta - 4.5,
                    delta: 0.01,
                };
                let aux = ObjectiveAux {
                    offsets: Some(&off),
                    spectral: Some(&sp),
                };
                obj.evaluate(&init, &dec, &aux, grads, false).unwrap()
            };
            let base = eval(&cert, &policy, true);
            assert!(base.total > 0.0);
            let g = base.grads.unwrap();
            let h = 1e-6;
            let ga = g.cert.flatten();
            let pc = cert.net.params();
            for idx in (0..pc.len()).step_by(7) {
                let mut c2 = cert.clone();
                let mut q = pc.clone();
                q[idx] += h;
                c2.net.set_params(&q).unwrap();
                let up = eval(&c2, &policy, false).total;
                q[idx] -= 2.0 * h;
                c2.net.set_params(&q).unwrap();
                let dn = eval(&c2, &policy, false).total;
                let fd = (up - dn) / (2.0 * h);
                assert!(
                    (fd - ga[idx]).abs() <= 1e-4 * fd.abs().max(ga[idx].abs()) + 1e-6,
                    "{method} cert[{idx}] fd {fd} an {}",
                    ga[idx]
                );
            }
            let gp = g.policy.flatten();
            let pp = policy.params();
            for idx in (0..pp.len()).step_by(5) {
                let mut p2 = policy.clone();
                let mut q = pp.clone();
                q[idx] += h;
                p2.set_params(&q).unwrap();
                let up = eval(&cert, &p2, false).total;
                q[idx] -= 2.0 * h;
                p2.set_params(&q).unwrap();
                let dn = eval(&cert, &p2, false).total;
                let fd = (up - dn) / (2.0 * h);
                assert!(
                    (fd - gp[idx]).abs() <= 1e-4 * fd.abs().max(gp[idx].abs()) + 1e-6,
                    "{method} policy[{idx}] fd {fd} an {}",
                    gp[idx]
                );
            }
        }
    }
}
