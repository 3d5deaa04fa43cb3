//! The filtered Lyapunov-barrier certificate and its scalar parameters.

use serde::{Deserialize, Serialize};

use crate::envs::EnvSpec;
use crate::error::{ClbfError, Result};
use crate::ibp::ibp;
use crate::interval::IntervalBox;
use crate::lipschitz::NormKind;
use crate::nn::Mlp;

/// Hidden widths of the certificate network.
pub const CERT_HIDDEN: [usize; 3] = [64, 32, 16];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClbfParams {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub c: f64,
    pub delta: f64,
    pub p: NormKind,
    pub goal_mask: f64,
    pub unsafe_mask: f64,
}

impl Default for ClbfParams {
    fn default() -> Self {
        ClbfParams {
            alpha: 1.2,
            beta: 1.0,
            epsilon: 5e-3,
            c: -10.0,
            delta: 0.0,
            p: NormKind::LInf,
            goal_mask: -10.0,
            unsafe_mask: 1.2,
        }
    }
}

impl ClbfParams {
    /// Defaults for an environment (only the descent margin differs).
    pub fn for_env(env: &EnvSpec) -> Self {
        let epsilon = match env.kind {
            crate::envs::EnvKind::Pendulum => 5e-3,
            crate::envs::EnvKind::Docking2d => 1e-2,
        };
        ClbfParams {
            epsilon,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha,
            self.beta,
            self.epsilon,
            self.c,
            self.delta,
            self.goal_mask,
            self.unsafe_mask,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ClbfError::Config(
                "certificate parameters must be finite".into(),
            ));
        }
        if !(self.alpha > self.beta && self.beta > self.c) {
            return Err(ClbfError::Config(format!(
                "need alpha > beta > c, got {} / {} / {}",
                self.alpha, self.beta, self.c
            )));
        }
        if self.epsilon <= 0.0 {
            return Err(ClbfError::Config("epsilon must be positive".into()));
        }
        if self.delta < 0.0 {
            return Err(ClbfError::Config("delta must be non-negative".into()));
        }
        if self.goal_mask != self.c {
            return Err(ClbfError::Config("goal mask must equal c".into()));
        }
        if self.unsafe_mask < self.alpha {
            return Err(ClbfError::Config(
                "unsafe mask must be at least alpha".into(),
            ));
        }
        Ok(())
    }
}

/// `V(x)`: the goal mask on the goal set, the unsafe mask on the unsafe set
/// (and outside the domain), the raw network elsewhere. Where the two sets
/// overlap the unsafe mask wins.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredCertificate {
    pub net: Mlp,
    pub params: ClbfParams,
    pub env: EnvSpec,
}

impl FilteredCertificate {
    pub fn new(net: Mlp, params: ClbfParams, env: EnvSpec) -> Result<Self> {
        ClbfError::check_dim(env.state_dim(), net.input_dim())?;
        ClbfError::check_dim(1, net.output_dim())?;
        Ok(FilteredCertificate { net, params, env })
    }

    pub fn raw(&self, x: &[f64]) -> f64 {
        self.net.eval_scalar(x)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        if self.env.is_unsafe(x) {
            self.params.unsafe_mask
        } else if self.env.is_goal(x) {
            self.params.goal_mask
        } else {
            self.raw(x)
        }
    }

    /// Mask that applies at `x`, if any.
    pub fn mask_at(&self, x: &[f64]) -> Option<f64> {
        if self.env.is_unsafe(x) {
            Some(self.params.unsafe_mask)
        } else if self.env.is_goal(x) {
            Some(self.params.goal_mask)
        } else {
            None
        }
    }

    /// Sound `(lower, upper)` bounds of the filtered value over `b`.
    ///
    /// `net_bounds` overrides the raw-network enclosure (callers with a
    /// tighter enclosure pass it in); by default plain IBP is used.
    pub fn value_bounds(&self, b: &IntervalBox) -> (f64, f64) {
        self.value_bounds_with(b, None)
    }

    pub fn value_bounds_with(&self, b: &IntervalBox, net_bounds: Option<(f64, f64)>) -> (f64, f64) {
        let p = &self.params;
        if self.env.box_in_unsafe(b) {
            return (p.unsafe_mask, p.unsafe_mask);
        }
        let touches_unsafe = self.env.box_touches_unsafe(b);
        if !touches_unsafe && self.env.box_in_goal(b) {
            return (p.goal_mask, p.goal_mask);
        }
        let (mut lo, mut hi) = net_bounds.unwrap_or_else(|| {
            let out = ibp(&self.net, &b.intervals())[0];
            (out.lo, out.hi)
        });
        if touches_unsafe {
            lo = lo.min(p.unsafe_mask);
            hi = hi.max(p.unsafe_mask);
        }
        if self.env.box_touches_goal(b) {
            lo = lo.min(p.goal_mask);
            hi = hi.max(p.goal_mask);
        }
        (lo, hi)
    }
}
