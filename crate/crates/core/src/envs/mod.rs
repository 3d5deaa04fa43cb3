//! Benchmark systems: point dynamics, sound interval images and task sets.

pub mod docking;
pub mod pendulum;
pub mod sets;
pub mod trig;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ClbfError, Result};
use crate::interval::{Interval, IntervalBox};

pub use docking::{Docking, DockingParams};
pub use pendulum::Pendulum;
pub use sets::SetRegion;
pub use trig::trig_interval;

pub const CONTROL_LO: f64 = -1.0;
pub const CONTROL_HI: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvKind {
    #[serde(rename = "pendulum")]
    Pendulum,
    #[serde(rename = "docking2d")]
    Docking2d,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Pendulum => "pendulum",
            EnvKind::Docking2d => "docking2d",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = ClbfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(EnvKind::Pendulum),
            "docking2d" | "docking" => Ok(EnvKind::Docking2d),
            other => Err(ClbfError::invalid(format!(
                "unknown environment '{other}' (expected pendulum | docking2d)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Dynamics {
    Pendulum(Pendulum),
    Docking(Docking),
}

/// A reach-while-avoid task: dynamics plus domain, initial, goal and unsafe sets.
///
/// `domain` is the compact box the verifier covers. States outside it are
/// treated as unsafe by [`EnvSpec::is_unsafe`], which keeps every certified
/// trajectory inside the verified region.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub dynamics: Dynamics,
    pub domain: IntervalBox,
    pub init: SetRegion,
    pub goal: SetRegion,
    pub unsafe_set: SetRegion,
}

fn take(overrides: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    overrides
        .get(&format!("env.{key}"))
        .copied()
        .unwrap_or(default)
}

impl EnvSpec {
    pub fn pendulum() -> Self {
        Self::pendulum_with(Pendulum::default())
    }

    pub fn pendulum_with(p: Pendulum) -> Self {
        EnvSpec {
            kind: EnvKind::Pendulum,
            dynamics: Dynamics::Pendulum(p),
            domain: IntervalBox::from_bounds(&[(-0.7, 0.7), (-0.7, 0.7)]),
            init: SetRegion::single(IntervalBox::from_bounds(&[(-0.3, 0.3), (-0.3, 0.3)])),
            goal: SetRegion::single(IntervalBox::from_bounds(&[(-0.2, 0.2), (-0.2, 0.2)])),
            unsafe_set: SetRegion::Union(vec![
                IntervalBox::from_bounds(&[(-0.7, -0.6), (-0.7, 0.0)]),
                IntervalBox::from_bounds(&[(0.6, 0.7), (0.0, 0.7)]),
            ]),
        }
    }

    pub fn docking2d() -> Self {
        Self::docking_with(DockingParams::default())
    }

    pub fn docking_with(p: DockingParams) -> Self {
        let inf = f64::INFINITY;
        EnvSpec {
            kind: EnvKind::Docking2d,
            dynamics: Dynamics::Docking(Docking::new(p)),
            domain: IntervalBox::from_bounds(&[
                (-2.5, 2.5),
                (-2.5, 2.5),
                (-0.75, 0.75),
                (-0.75, 0.75),
            ]),
            init: SetRegion::single(IntervalBox::from_bounds(&[
                (-1.0, 1.0),
                (-1.0, 1.0),
                (0.0, 0.0),
                (0.0, 0.0),
            ])),
            goal: SetRegion::single(IntervalBox::from_bounds(&[
                (-0.35, 0.35),
                (-0.35, 0.35),
                (-inf, inf),
                (-inf, inf),
            ])),
            unsafe_set: SetRegion::Complement(IntervalBox::from_bounds(&[
                (-2.0, 2.0),
                (-2.0, 2.0),
                (-0.5, 0.5),
                (-0.5, 0.5),
            ])),
        }
    }

    /// Builds an environment by name; `env.<constant>` keys override the
    /// physical constants (`g m l b dt` for the pendulum, `m n dt` for docking).
    pub fn from_name(name: &str, overrides: &BTreeMap<String, f64>) -> Result<Self> {
        match name.parse::<EnvKind>()? {
            EnvKind::Pendulum => {
                let d = Pendulum::default();
                Ok(Self::pendulum_with(Pendulum {
                    g: take(overrides, "g", d.g),
                    m: take(overrides, "m", d.m),
                    l: take(overrides, "l", d.l),
                    b: take(overrides, "b", d.b),
                    dt: take(overrides, "dt", d.dt),
                }))
            }
            EnvKind::Docking2d => {
                let d = DockingParams::default();
                Ok(Self::docking_with(DockingParams {
                    m: take(overrides, "m", d.m),
                    n: take(overrides, "n", d.n),
                    dt: take(overrides, "dt", d.dt),
                }))
            }
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn state_dim(&self) -> usize {
        match self.dynamics {
            Dynamics::Pendulum(_) => 2,
            Dynamics::Docking(_) => 4,
        }
    }

    pub fn control_dim(&self) -> usize {
        match self.dynamics {
            Dynamics::Pendulum(_) => 1,
            Dynamics::Docking(_) => 2,
        }
    }

    pub fn control_box(&self) -> IntervalBox {
        IntervalBox::new(
            vec![CONTROL_LO; self.control_dim()],
            vec![CONTROL_HI; self.control_dim()],
        )
        .expect("control bounds")
    }

    pub fn constants(&self) -> Vec<(&'static str, f64)> {
        match &self.dynamics {
            Dynamics::Pendulum(p) => {
                vec![("g", p.g), ("m", p.m), ("l", p.l), ("b", p.b), ("dt", p.dt)]
            }
            Dynamics::Docking(d) => vec![("m", d.params.m), ("n", d.params.n), ("dt", d.params.dt)],
        }
    }

    /// Next state; the control is clamped to `[−1, 1]` first.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        match &self.dynamics {
            Dynamics::Pendulum(p) => p.step(x, u[0].clamp(CONTROL_LO, CONTROL_HI)).to_vec(),
            Dynamics::Docking(d) => {
                let uc = [
                    u[0].clamp(CONTROL_LO, CONTROL_HI),
                    u[1].clamp(CONTROL_LO, CONTROL_HI),
                ];
                d.step(x, &uc).to_vec()
            }
        }
    }

    /// `f(x, π(x))` for a policy network (output clamped by [`EnvSpec::step`]).
    pub fn closed_loop(&self, policy: &crate::nn::Mlp, x: &[f64]) -> Vec<f64> {
        self.step(x, &policy.eval(x))
    }

    /// Sound enclosure of `{step(x, u) : x ∈ b, u ∈ u}`.
    pub fn step_interval(&self, b: &IntervalBox, u: &IntervalBox) -> IntervalBox {
        let uc: Vec<Interval> = u
            .intervals()
            .into_iter()
            .map(|i| i.clamp(CONTROL_LO, CONTROL_HI))
            .collect();
        let x = b.intervals();
        match &self.dynamics {
            Dynamics::Pendulum(p) => {
                IntervalBox::from_intervals(&p.step_interval(x[0], x[1], uc[0]))
            }
            Dynamics::Docking(d) => IntervalBox::from_intervals(&d.step_interval(&x, &uc)),
        }
    }

    /// `(∂f/∂x, ∂f/∂u)` at a point with the control already clamped,
    /// row-major `n×n` and `n×m`.
    pub fn jacobian(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        match &self.dynamics {
            Dynamics::Pendulum(p) => {
                let (a, b) = p.jacobian(x);
                (a.to_vec(), b.to_vec())
            }
            Dynamics::Docking(d) => (d.a.to_vec(), d.b.to_vec()),
        }
    }

    /// Interval Jacobian over a state box.
    pub fn jacobian_interval(&self, b: &IntervalBox) -> (Vec<Interval>, Vec<Interval>) {
        match &self.dynamics {
            Dynamics::Pendulum(p) => {
                let (a, bu) = p.jacobian_interval(b.interval(0));
                (a.to_vec(), bu.to_vec())
            }
            Dynamics::Docking(d) => (
                d.a.iter().map(|v| Interval::point(*v)).collect(),
                d.b.iter().map(|v| Interval::point(*v)).collect(),
            ),
        }
    }

    pub fn is_goal(&self, x: &[f64]) -> bool {
        self.goal.contains(x)
    }

    /// In the unsafe set, or outside the verified domain.
    pub fn is_unsafe(&self, x: &[f64]) -> bool {
        self.unsafe_set.contains(x) || !self.domain.contains(x)
    }

    pub fn is_init(&self, x: &[f64]) -> bool {
        self.init.contains(x)
    }

    pub fn box_touches_goal(&self, b: &IntervalBox) -> bool {
        self.goal.intersects(b)
    }

    pub fn box_in_goal(&self, b: &IntervalBox) -> bool {
        self.goal.covers(b)
    }

    pub fn box_touches_unsafe(&self, b: &IntervalBox) -> bool {
        self.unsafe_set.intersects(b) || !b.is_subset_of(&self.domain)
    }

    pub fn box_in_unsafe(&self, b: &IntervalBox) -> bool {
        self.unsafe_set.covers(b) || !b.intersects(&self.domain)
    }

    /// A point of `b` that is unsafe, if `b` touches the unsafe region.
    pub fn unsafe_point_in(&self, b: &IntervalBox) -> Option<Vec<f64>> {
        if let Some(p) = self.unsafe_set.point_in(b) {
            return Some(p);
        }
        SetRegion::Complement(self.domain.clone()).point_in(b)
    }

    /// Uniform over `domain ∖ (goal ∪ unsafe)` by rejection.
    pub fn sample_training_state<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        loop {
            let x = self.domain.sample(rng);
            if !self.is_goal(&x) && !self.is_unsafe(&x) {
                return x;
            }
        }
    }

    /// Uniform over the initial set (boxes weighted by their non-degenerate extent).
    pub fn sample_init<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let boxes = self.init.boxes();
        let weights: Vec<f64> = boxes
            .iter()
            .map(|b| b.widths().into_iter().filter(|w| *w > 0.0).product::<f64>())
            .collect();
        let total: f64 = weights.iter().sum();
        let mut pick = rng.gen_range(0.0..total);
        for (b, w) in boxes.iter().zip(&weights) {
            if pick < *w {
                return b.sample(rng);
            }
            pick -= w;
        }
        boxes[boxes.len() - 1].sample(rng)
    }

    /// Uniform over `init ∖ goal` by rejection.
    pub fn sample_init_outside_goal<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        loop {
            let x = self.sample_init(rng);
            if !self.is_goal(&x) {
                return x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_box<R: Rng>(rng: &mut R, domain: &IntervalBox, max_w: f64) -> IntervalBox {
        let (lo, hi) = (0..domain.dim())
            .map(|i| {
                let w = rng.gen_range(0.0..max_w);
                let l = rng.gen_range(domain.lo()[i]..domain.hi()[i] - w);
                (l, l + w)
            })
            .unzip();
        IntervalBox::new(lo, hi).unwrap()
    }

    #[test]
    fn pendulum_set_geometry() {
        let e = EnvSpec::pendulum();
        assert!(e.is_goal(&[0.2, -0.2]));
        assert!(!e.is_goal(&[0.2000001, 0.0]));
        assert!(e.is_init(&[-0.3, 0.3]));
        assert!(e.is_unsafe(&[-0.6, 0.0]));
        assert!(e.is_unsafe(&[0.65, 0.0]));
        assert!(!e.is_unsafe(&[0.65, -0.01]));
        assert!(!e.is_unsafe(&[-0.65, 0.01]));
        assert!(!e.is_unsafe(&[0.59, 0.5]));
        // outside the verified domain
        assert!(e.is_unsafe(&[0.0, 0.71]));
    }

    #[test]
    fn docking_set_geometry() {
        let e = EnvSpec::docking2d();
        assert!(e.is_goal(&[0.35, -0.35, 5.0, -7.0]));
        assert!(!e.is_goal(&[0.36, 0.0, 0.0, 0.0]));
        assert!(!e.is_unsafe(&[2.0, -2.0, 0.5, -0.5]));
        assert!(e.is_unsafe(&[2.0, -2.0, 0.5, -0.5000001]));
        assert!(e.is_init(&[1.0, -1.0, 0.0, 0.0]));
        assert!(!e.is_init(&[1.0, -1.0, 0.01, 0.0]));
    }

    #[test]
    fn sets_are_disjoint_where_required() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pend = EnvSpec::pendulum();
        for b in pend.goal.boxes() {
            for _ in 0..2000 {
                assert!(!pend.is_unsafe(&b.sample(&mut rng)));
            }
        }
        // the docking goal leaves velocity free, so it meets the unsafe set
        let dock = EnvSpec::docking2d();
        assert!(dock.is_goal(&[0.0, 0.0, 0.6, 0.0]) && dock.is_unsafe(&[0.0, 0.0, 0.6, 0.0]));
        for env in [pend, dock] {
            for _ in 0..2000 {
                let x = env.sample_init(&mut rng);
                assert!(!env.is_unsafe(&x));
            }
        }
    }

    #[test]
    fn training_samples_avoid_masked_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for env in [EnvSpec::pendulum(), EnvSpec::docking2d()] {
            for _ in 0..1000 {
                let x = env.sample_training_state(&mut rng);
                assert!(!env.is_goal(&x) && !env.is_unsafe(&x));
            }
        }
    }

    #[test]
    fn step_interval_sound_by_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for env in [EnvSpec::pendulum(), EnvSpec::docking2d()] {
            for _ in 0..30 {
                let b = random_box(&mut rng, &env.domain, 0.4);
                let u = random_box(
                    &mut rng,
                    &IntervalBox::from_bounds(&vec![(-1.3, 1.3); env.control_dim()]),
                    1.0,
                );
                let img = env.step_interval(&b, &u);
                for _ in 0..500 {
                    let x = b.sample(&mut rng);
                    let uu = u.sample(&mut rng);
                    assert!(img.contains(&env.step(&x, &uu)));
                }
            }
        }
    }

    #[test]
    fn docking_point_box_maps_to_point() {
        let env = EnvSpec::docking2d();
        let x = [0.3, -1.2, 0.1, 0.05];
        let u = [0.4, -0.9];
        let img = env.step_interval(&IntervalBox::point(&x), &IntervalBox::point(&u));
        let y = env.step(&x, &u);
        for i in 0..4 {
            assert!(img.hi()[i] - img.lo()[i] < 1e-12);
            assert!((img.center()[i] - y[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn docking_image_width_is_exact() {
        let env = EnvSpec::docking2d();
        let Dynamics::Docking(d) = &env.dynamics else {
            unreachable!()
        };
        let b = IntervalBox::from_bounds(&[(0.1, 0.3), (-1.0, -0.5), (0.0, 0.2), (-0.1, 0.1)]);
        let u = IntervalBox::from_bounds(&[(-0.5, 0.5), (0.2, 0.4)]);
        let img = env.step_interval(&b, &u);
        let (wb, wu) = (b.widths(), u.widths());
        for r in 0..4 {
            let expected: f64 = (0..4).map(|c| d.a[r * 4 + c].abs() * wb[c]).sum::<f64>()
                + (0..2).map(|c| d.b[r * 2 + c].abs() * wu[c]).sum::<f64>();
            assert!((img.widths()[r] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn overrides_apply() {
        let mut o = BTreeMap::new();
        o.insert("env.g".to_string(), 9.81);
        let e = EnvSpec::from_name("pendulum", &o).unwrap();
        assert!(matches!(e.dynamics, Dynamics::Pendulum(p) if p.g == 9.81));
        assert!(EnvSpec::from_name("cartpole", &o).is_err());
    }
}
