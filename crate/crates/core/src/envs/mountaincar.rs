//! Continuous mountain car: an underpowered car in a valley that must
//! back up the opposite slope to gain momentum before reaching the goal.
//! Every step costs reward -1; reaching the goal position terminates the
//! episode (discount 0). The dynamics are the standard discrete map.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::npbe::InitialStateSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MountainCarEnv {
    pub min_position: f64,
    pub max_position: f64,
    pub max_speed: f64,
    pub goal_position: f64,
    pub power: f64,
    pub gravity_scale: f64,
    pub gamma: f64,
}

impl Default for MountainCarEnv {
    fn default() -> Self {
        MountainCarEnv {
            min_position: -1.2,
            max_position: 0.6,
            max_speed: 0.07,
            goal_position: 0.45,
            power: 0.0015,
            gravity_scale: 0.0025,
            gamma: 0.99,
        }
    }
}

impl MountainCarEnv {
    pub fn at_goal(&self, s: &[f64]) -> bool {
        s[0] >= self.goal_position
    }
}

impl Environment for MountainCarEnv {
    fn name(&self) -> &'static str {
        "mountaincar"
    }

    fn d_s(&self) -> usize {
        2
    }

    fn d_a(&self) -> usize {
        1
    }

    fn action_low(&self) -> Vec<f64> {
        vec![-1.0]
    }

    fn action_high(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn step(&self, s: &[f64], a: &[f64], _rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, f64) {
        let force = a[0].clamp(-1.0, 1.0);
        let mut velocity =
            s[1] + force * self.power - self.gravity_scale * (3.0 * s[0]).cos();
        velocity = velocity.clamp(-self.max_speed, self.max_speed);
        let mut position = (s[0] + velocity).clamp(self.min_position, self.max_position);
        if position <= self.min_position && velocity < 0.0 {
            velocity = 0.0;
            position = self.min_position;
        }
        let next = vec![position, velocity];
        let discount = if self.at_goal(&next) { 0.0 } else { self.gamma };
        (next, -1.0, discount)
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![rng.gen_range(-0.6..-0.4), 0.0]
    }

    fn eval_start(&self) -> Vec<f64> {
        vec![-0.5, 0.0]
    }

    fn mu0(&self) -> InitialStateSpec {
        InitialStateSpec::Sampler(std::sync::Arc::new(|rng: &mut ChaCha8Rng| {
            vec![rng.gen_range(-0.6..-0.4), 0.0]
        }))
    }
}

/// Scripted suboptimal demonstrator: pushes with partial throttle in the
/// direction of motion, with a seeded dither that makes each run distinct.
/// Used to produce the shipped demonstration fixtures.
pub fn scripted_demo_episode(
    env: &MountainCarEnv,
    throttle: f64,
    dither: f64,
    max_steps: usize,
    seed: u64,
) -> crate::baselines::Episode {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = env.initial_state(&mut rng);
    let mut steps = Vec::new();
    for t in 0..max_steps {
        let direction = if s[1] == 0.0 {
            if t % 2 == 0 {
                -1.0
            } else {
                1.0
            }
        } else {
            s[1].signum()
        };
        let jitter: f64 = rng.gen_range(-dither..dither);
        let a = (direction * throttle + jitter).clamp(-1.0, 1.0);
        let (next, r, gamma) = env.step(&s, &[a], &mut rng);
        steps.push(crate::baselines::TrajStep {
            s: s.clone(),
            a: vec![a],
            r,
            gamma,
            log_pb: 0.0,
        });
        s = next;
        if gamma == 0.0 {
            break;
        }
    }
    crate::baselines::Episode {
        steps,
        terminal_state: s,
    }
}
