//! Discrete-time inverted pendulum, state `(θ, θ̇)`, torque `u ∈ [−1, 1]`.

use serde::{Deserialize, Serialize};

use crate::envs::trig::trig_interval;
use crate::interval::{rounding_slack, Interval};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pendulum {
    pub g: f64,
    pub m: f64,
    pub l: f64,
    pub b: f64,
    pub dt: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Pendulum {
            g: 10.0,
            m: 0.15,
            l: 0.5,
            b: 0.1,
            dt: 0.05,
        }
    }
}

impl Pendulum {
    /// Coefficient of `sin θ` in the angular acceleration.
    #[inline]
    fn gravity_coeff(&self) -> f64 {
        1.5 * self.g / (2.0 * self.l)
    }

    /// Coefficient of `u` in the angular acceleration.
    #[inline]
    fn torque_coeff(&self) -> f64 {
        3.0 / (self.m * self.l * self.l) * 2.0
    }

    /// `u` must already be clamped.
    pub fn step(&self, x: &[f64], u: f64) -> [f64; 2] {
        let (theta, omega) = (x[0], x[1]);
        let omega_next = (1.0 - self.b) * omega
            + (self.gravity_coeff() * theta.sin() + self.torque_coeff() * u) * self.dt;
        let theta_next = theta + omega_next * self.dt;
        [theta_next, omega_next]
    }

    /// Enclosure of `step` over `θ ∈ th`, `θ̇ ∈ om`, `u ∈ u`.
    ///
    /// Both outputs are rewritten as sums of single-variable terms, so the
    /// enclosure is the exact range up to rounding; `θ + T²·c·sin θ` is
    /// monotone whenever `T²|c| ≤ 1`.
    pub fn step_interval(&self, th: Interval, om: Interval, u: Interval) -> [Interval; 2] {
        let t = self.dt;
        let c1 = self.gravity_coeff();
        let c2 = self.torque_coeff();
        let damp = 1.0 - self.b;
        let (sin_th, _) = trig_interval(th.lo, th.hi);

        let omega_next = om
            .scale(damp)
            .add(&sin_th.scale(c1 * t))
            .add(&u.scale(c2 * t));
        let mag_w = damp.abs() * om.magnitude() + (c1 * t).abs() + (c2 * t).abs() * u.magnitude();
        let omega_next = omega_next.widen(rounding_slack(8, mag_w));

        let k = t * t * c1;
        let g_part = if k.abs() <= 1.0 {
            let g = |v: f64| v + k * v.sin();
            Interval::new(g(th.lo), g(th.hi))
        } else {
            th.add(&sin_th.scale(k))
        };
        let theta_next = g_part.add(&om.scale(t * damp)).add(&u.scale(t * t * c2));
        let mag_t = th.magnitude()
            + k.abs()
            + (t * damp).abs() * om.magnitude()
            + (t * t * c2).abs() * u.magnitude()
            + t * mag_w;
        let theta_next = theta_next.widen(rounding_slack(8, mag_t));
        [theta_next, omega_next]
    }

    /// `(∂f/∂x, ∂f/∂u)` at a point, row-major `2×2` and `2×1`.
    pub fn jacobian(&self, x: &[f64]) -> ([f64; 4], [f64; 2]) {
        let t = self.dt;
        let dw_dth = self.gravity_coeff() * t * x[0].cos();
        let dw_dom = 1.0 - self.b;
        let dw_du = self.torque_coeff() * t;
        (
            [1.0 + t * dw_dth, t * dw_dom, dw_dth, dw_dom],
            [t * dw_du, dw_du],
        )
    }

    /// Interval enclosure of the Jacobian over `θ ∈ th`.
    pub fn jacobian_interval(&self, th: Interval) -> ([Interval; 4], [Interval; 2]) {
        let t = self.dt;
        let (_, cos_th) = trig_interval(th.lo, th.hi);
        let dw_dth = cos_th
            .scale(self.gravity_coeff() * t)
            .widen(rounding_slack(4, self.gravity_coeff() * t));
        let dw_dom = Interval::point(1.0 - self.b);
        let dw_du = Interval::point(self.torque_coeff() * t);
        let dth_dth = dw_dth
            .scale(t)
            .add(&Interval::point(1.0))
            .widen(rounding_slack(4, 2.0));
        (
            [dth_dth, dw_dom.scale(t), dw_dth, dw_dom],
            [dw_du.scale(t), dw_du],
        )
    }
}
