//! Offline dataset generation: uniform grids, behavior-policy rollouts
//! and the linear-quadratic trajectory sampler of the gradient study.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::lqg::{mat_vec, vec_add, LqgSpec};
use super::pendulum::PendulumEnv;
use super::Environment;
use crate::baselines::{Episode, TrajStep, TrajectoryDataset};
use crate::dataset::{Dataset, Transition};
use crate::error::{Error, Result};
use crate::policy::Policy;

/// Anything that can act and report the log density of its action.
pub trait BehaviorPolicy {
    fn act(&self, s: &[f64], rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, f64)>;
}

impl BehaviorPolicy for Policy {
    fn act(&self, s: &[f64], rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, f64)> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let noise: Vec<f64> = (0..self.layout.d_a).map(|_| normal.sample(rng)).collect();
        let a = self.sample(s, &noise)?.action;
        let lp = self.log_prob(s, &a)?;
        Ok((a, lp))
    }
}

/// Uniform random actions over a box.
pub struct UniformRandomPolicy {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl BehaviorPolicy for UniformRandomPolicy {
    fn act(&self, _s: &[f64], rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, f64)> {
        let a: Vec<f64> = self
            .low
            .iter()
            .zip(&self.high)
            .map(|(lo, hi)| rng.gen_range(*lo..*hi))
            .collect();
        let log_p = -self
            .low
            .iter()
            .zip(&self.high)
            .map(|(lo, hi)| (hi - lo).ln())
            .sum::<f64>();
        Ok((a, log_p))
    }
}

/// One transition per point of the Cartesian grid over the pendulum's
/// angle, angular velocity and torque ranges (endpoints included).
pub fn gen_uniform_grid(
    env: &PendulumEnv,
    n_omega: usize,
    n_omega_dot: usize,
    n_torque: usize,
) -> Result<Dataset> {
    if n_omega < 1 || n_omega_dot < 1 || n_torque < 1 {
        return Err(Error::domain("grid counts must be >= 1"));
    }
    let linspace = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        if n == 1 {
            vec![(lo + hi) / 2.0]
        } else {
            (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect()
        }
    };
    let omegas = linspace(-std::f64::consts::PI, std::f64::consts::PI, n_omega);
    let omega_dots = linspace(-env.max_speed, env.max_speed, n_omega_dot);
    let torques = linspace(-env.max_torque, env.max_torque, n_torque);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut transitions = Vec::with_capacity(n_omega * n_omega_dot * n_torque);
    for &w in &omegas {
        for &wd in &omega_dots {
            for &tau in &torques {
                let (next, reward, discount) = env.step(&[w, wd], &[tau], &mut rng);
                transitions.push(Transition {
                    state: vec![w, wd],
                    action: vec![tau],
                    reward,
                    next_state: next,
                    discount,
                });
            }
        }
    }
    Dataset::new(transitions, 2, 1)
}

/// Rolls out a behavior policy and returns both the flat transition
/// dataset and the trajectory dataset with behavior log-probs.
pub fn gen_rollout_dataset(
    env: &dyn Environment,
    behavior: &dyn BehaviorPolicy,
    episodes: usize,
    max_steps: usize,
    seed: u64,
) -> Result<(Dataset, TrajectoryDataset)> {
    if episodes == 0 {
        return Err(Error::domain("need at least one episode"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajs = TrajectoryDataset::default();
    for _ in 0..episodes {
        let mut s = env.initial_state(&mut rng);
        let mut steps = Vec::with_capacity(max_steps);
        for _ in 0..max_steps {
            let (a, log_pb) = behavior.act(&s, &mut rng)?;
            let a = super::clip_action(env, &a);
            let (next, r, gamma) = env.step(&s, &a, &mut rng);
            steps.push(TrajStep {
                s: s.clone(),
                a,
                r,
                gamma,
                log_pb,
            });
            s = next;
            if gamma == 0.0 {
                break;
            }
        }
        trajs.episodes.push(Episode {
            steps,
            terminal_state: s,
        });
    }
    let dataset = trajs.to_dataset(env.d_s(), env.d_a())?;
    Ok((dataset, trajs))
}

/// Generates behavior rollouts on a linear-quadratic task. All transitions
/// carry the task discount; the horizon is a collection cutoff, not a
/// terminal.
pub fn gen_lqg_rollouts(
    lqg: &LqgSpec,
    behavior: &Policy,
    episodes: usize,
    steps: usize,
    seed: u64,
) -> Result<(Dataset, TrajectoryDataset)> {
    if episodes == 0 || steps == 0 {
        return Err(Error::domain("need at least one episode and step"));
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajs = TrajectoryDataset::default();
    for _ in 0..episodes {
        let mut s = lqg.s0.clone();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let noise: Vec<f64> = (0..lqg.d_a()).map(|_| normal.sample(&mut rng)).collect();
            let a = behavior.sample(&s, &noise)?.action;
            let log_pb = behavior.log_prob(&s, &a)?;
            let r = -super::lqg::dot(&s, &mat_vec(&lqg.q, &s))
                - super::lqg::dot(&a, &mat_vec(&lqg.r, &a));
            let next = vec_add(&mat_vec(&lqg.a, &s), &mat_vec(&lqg.b, &a));
            out.push(TrajStep {
                s: s.clone(),
                a,
                r,
                gamma: lqg.gamma,
                log_pb,
            });
            s = next;
        }
        trajs.episodes.push(Episode {
            steps: out,
            terminal_state: s,
        });
    }
    let dataset = trajs.to_dataset(lqg.d_s(), lqg.d_a())?;
    Ok((dataset, trajs))
}
