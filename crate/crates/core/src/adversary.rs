//! Projected sign-gradient ascent inside l∞ balls and boxes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::certificate::FilteredCertificate;
use crate::envs::EnvSpec;
use crate::error::{ClbfError, Result};
use crate::interval::IntervalBox;
use crate::lipschitz::NormKind;
use crate::nn::{value_and_input_grad, Mlp};

pub const DEFAULT_PGD_STEPS: usize = 20;
pub const DEFAULT_PGD_RESTARTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub steps: usize,
    pub step_size: f64,
    pub delta: f64,
    pub p: NormKind,
    /// Total number of starts: the centre first, then uniform random points.
    pub restarts: usize,
}

impl PgdConfig {
    /// Defaults: 20 steps of size δ/4, three starts, l∞.
    pub fn with_delta(delta: f64) -> Self {
        PgdConfig {
            steps: DEFAULT_PGD_STEPS,
            step_size: delta / 4.0,
            delta,
            p: NormKind::LInf,
            restarts: DEFAULT_PGD_RESTARTS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(ClbfError::Config("pgd steps must be at least 1".into()));
        }
        if self.restarts == 0 {
            return Err(ClbfError::Config("pgd restarts must be at least 1".into()));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(ClbfError::Config(
                "pgd delta must be a non-negative number".into(),
            ));
        }
        if self.delta > 0.0 && !(self.step_size > 0.0) {
            return Err(ClbfError::Config("pgd step size must be positive".into()));
        }
        if self.p != NormKind::LInf {
            return Err(ClbfError::Config(
                "only the l-infinity ball is supported by pgd".into(),
            ));
        }
        Ok(())
    }
}

/// Sign-gradient ascent of `f` over `region`, starting from each point of
/// `starts` in turn. `steps[d]` is the per-coordinate step. Returns the best
/// point visited and its value; a start that stops moving ends early.
pub fn ascend_in_box<F>(
    mut f: F,
    region: &IntervalBox,
    starts: &[Vec<f64>],
    iters: usize,
    steps: &[f64],
) -> (Vec<f64>, f64)
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut best_x = starts[0].clone();
    let mut best_v = f64::NEG_INFINITY;
    for s in starts {
        let mut x = s.clone();
        region.project(&mut x);
        for it in 0..=iters {
            let (v, g) = f(&x);
            if v > best_v {
                best_v = v;
                best_x.clone_from(&x);
            }
            if it == iters {
                break;
            }
            let mut moved = false;
            for d in 0..x.len() {
                let sg = if g[d] > 0.0 {
                    1.0
                } else if g[d] < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                let nx = (x[d] + sg * steps[d]).clamp(region.lo()[d], region.hi()[d]);
                if nx != x[d] {
                    moved = true;
                    x[d] = nx;
                }
            }
            if !moved {
                break;
            }
        }
    }
    (best_x, best_v)
}

/// Start points for a region: its centre, then `n − 1` uniform samples.
pub fn start_points<R: Rng + ?Sized>(region: &IntervalBox, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut out = vec![region.center()];
    for _ in 1..n {
        out.push(region.sample(rng));
    }
    out
}

/// Approximate maximiser of the raw network over the l∞ ball of radius
/// `cfg.delta` around `center`. Never worse than the centre.
pub fn pgd_maximize<R: Rng + ?Sized>(
    net: &Mlp,
    center: &[f64],
    cfg: &PgdConfig,
    rng: &mut R,
) -> Vec<f64> {
    if cfg.delta == 0.0 {
        return center.to_vec();
    }
    let ball = IntervalBox::ball_inf(center, cfg.delta);
    let starts = start_points(&ball, cfg.restarts.max(1), rng);
    let steps = vec![cfg.step_size; center.len()];
    let (x, _) = ascend_in_box(
        |y| value_and_input_grad(net, y),
        &ball,
        &starts,
        cfg.steps,
        &steps,
    );
    x
}

/// Worst-case realised next state for evaluation: PGD on the raw
/// certificate around `f(x, π(x))`.
pub fn attack_step<R: Rng + ?Sized>(
    cert: &FilteredCertificate,
    policy: &Mlp,
    env: &EnvSpec,
    x: &[f64],
    cfg: &PgdConfig,
    rng: &mut R,
) -> Vec<f64> {
    let next = env.closed_loop(policy, x);
    pgd_maximize(&cert.net, &next, cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear(w: &[f64]) -> Mlp {
        Mlp::new(
            vec![Layer::new(1, w.len(), w.to_vec(), vec![0.0]).unwrap()],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn zero_radius_returns_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = linear(&[1.0, -2.0]);
        let c = [0.3, 0.4];
        assert_eq!(
            pgd_maximize(&net, &c, &PgdConfig::with_delta(0.0), &mut rng),
            c.to_vec()
        );
    }

    #[test]
    fn linear_maximiser_is_a_corner() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = linear(&[1.0, -2.0]);
        let y = pgd_maximize(&net, &[0.0, 0.0], &PgdConfig::with_delta(0.1), &mut rng);
        assert!((y[0] - 0.1).abs() < 1e-12 && (y[1] + 0.1).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(PgdConfig::with_delta(0.1).validate().is_ok());
        assert!(PgdConfig {
            steps: 0,
            ..PgdConfig::with_delta(0.1)
        }
        .validate()
        .is_err());
        assert!(PgdConfig {
            p: NormKind::L2,
            ..PgdConfig::with_delta(0.1)
        }
        .validate()
        .is_err());
        assert!(PgdConfig::with_delta(-1.0).validate().is_err());
    }

    #[test]
    fn attack_saturates_monotone_coordinate() {
        // V(y) = relu(y0) + relu(y0) increasing in the first coordinate only
        let net = Mlp::new(
            vec![
                Layer::new(2, 2, vec![1.0, 0.0, 1.0, 0.0], vec![1.0, 1.0]).unwrap(),
                Layer::new(1, 2, vec![1.0, 1.0], vec![0.0]).unwrap(),
            ],
            vec![Activation::Relu],
        )
        .unwrap();
        let env = EnvSpec::pendulum();
        let cert = FilteredCertificate::new(net, Default::default(), env.clone()).unwrap();
        let policy = linear(&[0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = [0.3, 0.1];
        let next = env.closed_loop(&policy, &x);
        let y = attack_step(
            &cert,
            &policy,
            &env,
            &x,
            &PgdConfig::with_delta(0.02),
            &mut rng,
        );
        assert!((y[0] - next[0] - 0.02).abs() < 1e-12);
        assert!((y[1] - next[1]).abs() <= 0.02 + 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn stays_in_ball_and_never_descends(seed in 0u64..500, delta in 0.0f64..0.2) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Mlp::glorot(&[2, 16, 8, 1], &mut rng).unwrap();
            let c = [rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7)];
            let y = pgd_maximize(&net, &c, &PgdConfig::with_delta(delta), &mut rng);
            for d in 0..2 {
                proptest::prop_assert!((y[d] - c[d]).abs() <= delta + 1e-12);
            }
            proptest::prop_assert!(net.eval_scalar(&y) >= net.eval_scalar(&c) - 1e-12);
        }

        #[test]
        fn more_restarts_never_hurt(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let net = Mlp::glorot(&[2, 16, 8, 1], &mut rng).unwrap();
            let c = [0.1, -0.2];
            let mut prev = f64::NEG_INFINITY;
            for r in 1..6 {
                let cfg = PgdConfig { restarts: r, ..PgdConfig::with_delta(0.05) };
                let mut rr = ChaCha8Rng::seed_from_u64(seed);
                let v = net.eval_scalar(&pgd_maximize(&net, &c, &cfg, &mut rr));
                proptest::prop_assert!(v >= prev);
                prev = v;
            }
        }
    }
    use rand::Rng;
}
