//! Desk-scale control environments, their oracles and dataset generation.

pub mod cartpole;
pub mod datagen;
pub mod lqg;
pub mod mountaincar;
pub mod pendulum;

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::npbe::InitialStateSpec;
use crate::policy::Policy;

/// A control task: pure step dynamics plus initial-state structure.
/// Steps are deterministic given the rng draw, so rollouts replay exactly.
pub trait Environment: Sync {
    fn name(&self) -> &'static str;
    fn d_s(&self) -> usize;
    fn d_a(&self) -> usize;
    fn action_low(&self) -> Vec<f64>;
    fn action_high(&self) -> Vec<f64>;
    /// Returns `(next_state, reward, discount)`; terminal transitions
    /// carry discount zero.
    fn step(&self, s: &[f64], a: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, f64);
    /// Draws a data-collection start state.
    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    /// Canonical evaluation start state.
    fn eval_start(&self) -> Vec<f64>;
    /// Initial-state specification for the return objective.
    fn mu0(&self) -> InitialStateSpec;
}

/// Clips each coordinate into the environment's action box.
pub fn clip_action(env: &dyn Environment, a: &[f64]) -> Vec<f64> {
    let lo = env.action_low();
    let hi = env.action_high();
    a.iter()
        .enumerate()
        .map(|(i, v)| v.clamp(lo[i], hi[i]))
        .collect()
}

/// Result of one evaluation rollout.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Undiscounted episode return.
    pub total_reward: f64,
    /// Number of steps taken before termination (or the budget).
    pub steps: usize,
    /// Whether a terminal transition (discount 0) was reached.
    pub terminated: bool,
}

/// Rolls out the policy's mean action for `max_steps` steps from `start`.
/// When `stop_at_terminal` is false the rollout continues through
/// terminal transitions (used by long evaluation runs).
pub fn rollout_policy(
    env: &dyn Environment,
    policy: &Policy,
    start: &[f64],
    max_steps: usize,
    stop_at_terminal: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout> {
    let mut s = start.to_vec();
    let mut states = vec![s.clone()];
    let mut actions = Vec::with_capacity(max_steps);
    let mut rewards = Vec::with_capacity(max_steps);
    let mut terminated = false;
    let mut steps = 0;
    for _ in 0..max_steps {
        let a = clip_action(env, &policy.mean(&s)?);
        let (next, r, discount) = env.step(&s, &a, rng);
        actions.push(a);
        rewards.push(r);
        states.push(next.clone());
        s = next;
        steps += 1;
        if discount == 0.0 {
            terminated = true;
            if stop_at_terminal {
                break;
            }
        }
    }
    let total_reward = rewards.iter().sum();
    Ok(Rollout {
        states,
        actions,
        rewards,
        total_reward,
        steps,
        terminated,
    })
}
