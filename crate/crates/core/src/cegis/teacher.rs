//! Hand-designed stabilising controllers used to warm-start the policy.

use rand::Rng;

use crate::envs::{EnvKind, EnvSpec, CONTROL_HI, CONTROL_LO};
use crate::error::Result;
use crate::nn::{Adam, GradientTape, Mlp, MlpGrad};

/// Hidden widths of the policy network.
pub fn policy_hidden(env: &EnvSpec) -> [usize; 2] {
    match env.kind {
        EnvKind::Pendulum => [128, 128],
        EnvKind::Docking2d => [20, 20],
    }
}

pub fn policy_widths(env: &EnvSpec) -> Vec<usize> {
    let [a, b] = policy_hidden(env);
    vec![env.state_dim(), a, b, env.control_dim()]
}

/// PD gains for the pendulum `(k_θ, k_θ̇)`.
pub const PENDULUM_GAINS: [f64; 2] = [0.28125, 0.1125];
/// Docking thrust `−k (k_p · position + k_v · velocity)` per axis.
pub const DOCKING_GAIN: f64 = 12.0;
pub const DOCKING_KP: f64 = 0.05;
pub const DOCKING_KV: f64 = 0.4;

/// Teacher control at `x`, always inside `[−1, 1]`.
pub fn teacher(env: &EnvSpec, x: &[f64]) -> Vec<f64> {
    let c = |u: f64| u.clamp(CONTROL_LO, CONTROL_HI);
    match env.kind {
        EnvKind::Pendulum => vec![c(-PENDULUM_GAINS[0] * x[0] - PENDULUM_GAINS[1] * x[1])],
        EnvKind::Docking2d => (0..2)
            .map(|i| c(-DOCKING_GAIN * (DOCKING_KP * x[i] + DOCKING_KV * x[i + 2])))
            .collect(),
    }
}

pub const TEACHER_FIT_STATES: usize = 10_000;
pub const TEACHER_MSE_TARGET: f64 = 1e-3;

/// Mean squared error of `policy` against the teacher on `states`.
pub fn teacher_mse(env: &EnvSpec, policy: &Mlp, states: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for x in states {
        let t = teacher(env, x);
        let y = policy.eval(x);
        s += y
            .iter()
            .zip(&t)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / t.len() as f64;
    }
    s / states.len() as f64
}

/// Regresses `policy` onto the teacher over uniform domain samples with
/// minibatch Adam; returns the final mean squared error on the fit set.
pub fn fit_teacher<R: Rng + ?Sized>(
    env: &EnvSpec,
    policy: &mut Mlp,
    max_steps: usize,
    lr: f64,
    rng: &mut R,
) -> Result<f64> {
    let states: Vec<Vec<f64>> = (0..TEACHER_FIT_STATES)
        .map(|_| env.domain.sample(rng))
        .collect();
    let targets: Vec<Vec<f64>> = states.iter().map(|x| teacher(env, x)).collect();
    let mut opt = Adam::new(policy.num_params(), lr);
    let mut tape = GradientTape::new();
    let mut grads = MlpGrad::zeros_like(policy);
    let batch = 256;
    let m = env.control_dim() as f64;
    let mut mse = teacher_mse(env, policy, &states);
    for step in 0..max_steps {
        if mse < TEACHER_MSE_TARGET {
            break;
        }
        grads.fill_zero();
        for _ in 0..batch {
            let i = rng.gen_range(0..states.len());
            let y = tape.forward(policy, &states[i])?;
            let up: Vec<f64> = y
                .iter()
                .zip(&targets[i])
                .map(|(a, b)| 2.0 * (a - b) / (m * batch as f64))
                .collect();
            tape.backward(policy, &up, &mut grads)?;
        }
        let mut p = policy.params();
        opt.step(&mut p, &grads.flatten());
        policy.set_params(&p)?;
        if (step + 1) % 50 == 0 || step + 1 == max_steps {
            mse = teacher_mse(env, policy, &states);
        }
    }
    Ok(mse)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::PgdConfig;
    use crate::certificate::{ClbfParams, FilteredCertificate};
    use crate::eval::{rollout, Mode};
    use crate::nn::Layer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equilibrium_and_clamp() {
        let p = EnvSpec::pendulum();
        assert_eq!(teacher(&p, &[0.0, 0.0]), vec![0.0]);
        let d = EnvSpec::docking2d();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            for env in [&p, &d] {
                let x = env.domain.inflate(5.0).sample(&mut rng);
                assert!(teacher(env, &x).iter().all(|u| (-1.0..=1.0).contains(u)));
            }
        }
    }

    fn linear_teacher_net(env: &EnvSpec) -> Mlp {
        let (w, m) = match env.kind {
            EnvKind::Pendulum => (vec![-PENDULUM_GAINS[0], -PENDULUM_GAINS[1]], 1),
            EnvKind::Docking2d => {
                let (a, b) = (-DOCKING_GAIN * DOCKING_KP, -DOCKING_GAIN * DOCKING_KV);
                (vec![a, 0.0, b, 0.0, 0.0, a, 0.0, b], 2)
            }
        };
        Mlp::new(
            vec![Layer::new(m, env.state_dim(), w, vec![0.0; m]).unwrap()],
            vec![],
        )
        .unwrap()
    }

    /// The teachers themselves stabilise both systems from the initial set.
    #[test]
    fn teachers_reach_the_goal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for env in [EnvSpec::pendulum(), EnvSpec::docking2d()] {
            let policy = linear_teacher_net(&env);
            let d = env.state_dim();
            let net = Mlp::new(
                vec![Layer::new(1, d, vec![0.0; d], vec![0.0]).unwrap()],
                vec![],
            )
            .unwrap();
            let cert =
                FilteredCertificate::new(net, ClbfParams::for_env(&env), env.clone()).unwrap();
            let pgd = PgdConfig::with_delta(0.0);
            let n = 500;
            let ok = (0..n)
                .filter(|_| {
                    let x0 = env.sample_init_outside_goal(&mut rng);
                    rollout(&policy, &cert, &env, &x0, Mode::Random, &pgd, 200, &mut rng).success()
                })
                .count();
            assert_eq!(ok, n, "{}", env.name());
        }
    }

    #[test]
    fn regression_reaches_tolerance_on_docking() {
        let env = EnvSpec::docking2d();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut policy = Mlp::glorot(&policy_widths(&env), &mut rng).unwrap();
        let before = teacher_mse(&env, &policy, &[vec![0.5, -0.5, 0.1, 0.2]]);
        let mse = fit_teacher(&env, &mut policy, 4000, 3e-3, &mut rng).unwrap();
        assert!(mse < TEACHER_MSE_TARGET, "{mse} (start {before})");
    }
}
