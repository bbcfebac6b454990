//! Underactuated pendulum swing-up with the usual simulator constants:
//! unit mass and length, gravity 10, dt 0.05, torque in [-2, 2], angular
//! velocity clipped to [-8, 8]. The angle is zero at the top and wraps to
//! (-pi, pi]; the canonical evaluation start is the bottom rest state.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::npbe::InitialStateSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PendulumReward {
    /// `-(angle^2 + 0.1 speed^2 + 0.001 torque^2)`.
    #[default]
    Quadratic,
    /// `cos(angle)`.
    Cosine,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PendulumEnv {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub max_speed: f64,
    pub max_torque: f64,
    pub gamma: f64,
    pub reward: PendulumReward,
}

impl Default for PendulumEnv {
    fn default() -> Self {
        PendulumEnv {
            mass: 1.0,
            length: 1.0,
            gravity: 10.0,
            dt: 0.05,
            max_speed: 8.0,
            max_torque: 2.0,
            gamma: 0.99,
            reward: PendulumReward::Quadratic,
        }
    }
}

pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut t = (theta + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if t <= -std::f64::consts::PI {
        t += two_pi;
    }
    t
}

impl PendulumEnv {
    pub fn reward_at(&self, omega: f64, omega_dot: f64, torque: f64) -> f64 {
        match self.reward {
            PendulumReward::Quadratic => {
                -(wrap_angle(omega).powi(2) + 0.1 * omega_dot * omega_dot
                    + 0.001 * torque * torque)
            }
            PendulumReward::Cosine => omega.cos(),
        }
    }

    /// Total mechanical energy of the unforced rod pendulum, conserved by
    /// the continuous-time dynamics.
    pub fn energy(&self, omega: f64, omega_dot: f64) -> f64 {
        let inertia = self.mass * self.length * self.length / 3.0;
        0.5 * inertia * omega_dot * omega_dot
            + self.mass * self.gravity * (self.length / 2.0) * omega.cos()
    }
}

impl Environment for PendulumEnv {
    fn name(&self) -> &'static str {
        "pendulum"
    }

    fn d_s(&self) -> usize {
        2
    }

    fn d_a(&self) -> usize {
        1
    }

    fn action_low(&self) -> Vec<f64> {
        vec![-self.max_torque]
    }

    fn action_high(&self) -> Vec<f64> {
        vec![self.max_torque]
    }

    fn step(&self, s: &[f64], a: &[f64], _rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, f64) {
        let (omega, omega_dot) = (s[0], s[1]);
        let torque = a[0].clamp(-self.max_torque, self.max_torque);
        let reward = self.reward_at(omega, omega_dot, torque);
        // Semi-implicit Euler: velocity first, then position.
        let accel = 3.0 * self.gravity / (2.0 * self.length) * omega.sin()
            + 3.0 / (self.mass * self.length * self.length) * torque;
        let new_dot = (omega_dot + accel * self.dt).clamp(-self.max_speed, self.max_speed);
        let new_omega = wrap_angle(omega + new_dot * self.dt);
        (vec![new_omega, new_dot], reward, self.gamma)
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        vec![
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.gen_range(-1.0..1.0),
        ]
    }

    fn eval_start(&self) -> Vec<f64> {
        vec![std::f64::consts::PI, 0.0]
    }

    fn mu0(&self) -> InitialStateSpec {
        InitialStateSpec::Fixed(self.eval_start())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn upright_equilibrium_is_fixed() {
        let env = PendulumEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (next, _, gamma) = env.step(&[0.0, 0.0], &[0.0], &mut rng);
        assert_eq!(next, vec![0.0, 0.0]);
        assert_eq!(gamma, env.gamma);
    }

    #[test]
    fn torque_is_clipped() {
        let env = PendulumEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = [1.0, 0.5];
        let (a, ra, _) = env.step(&s, &[5.0], &mut rng);
        let (b, rb, _) = env.step(&s, &[2.0], &mut rng);
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn unforced_energy_drifts_at_most_o_dt_per_step() {
        let env = PendulumEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (omega, omega_dot) in [(0.5, 0.0), (2.0, 1.0), (-1.2, -2.0), (3.0, 0.5)] {
            let e0 = env.energy(omega, omega_dot);
            let (next, _, _) = env.step(&[omega, omega_dot], &[0.0], &mut rng);
            let e1 = env.energy(next[0], next[1]);
            assert!(
                (e1 - e0).abs() < 10.0 * env.dt * env.dt * 100.0 + env.dt,
                "energy drift {} at ({omega}, {omega_dot})",
                e1 - e0
            );
        }
    }

    #[test]
    fn angle_wraps_into_pi_interval() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-2.5 * std::f64::consts::PI) + 0.5 * std::f64::consts::PI).abs() < 1e-12);
        for k in -10..10 {
            let t = wrap_angle(0.3 + k as f64 * 2.0 * std::f64::consts::PI);
            assert!((t - 0.3).abs() < 1e-9);
        }
    }

    #[test]
    fn quadratic_reward_is_nonpositive_and_peaks_upright() {
        let env = PendulumEnv::default();
        assert_eq!(env.reward_at(0.0, 0.0, 0.0), 0.0);
        assert!(env.reward_at(std::f64::consts::PI, 0.0, 0.0) < -9.0);
    }

    #[test]
    fn swing_needs_momentum_from_bottom() {
        // Max torque alone cannot lift the pendulum from rest at the
        // bottom; it has to leave the neighborhood of the start slowly.
        let env = PendulumEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (next, _, _) = env.step(&env.eval_start(), &[2.0], &mut rng);
        assert!(next[1].abs() < 0.4);
    }
}
