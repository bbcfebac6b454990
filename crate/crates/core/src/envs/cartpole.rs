//! Cart-pole stabilization: a force-actuated cart with a pole balanced
//! upright. State `(x, x_dot, theta, theta_dot)` with the pole angle
//! measured from the upright position; reward `cos(theta)`.
//!
//! The continuous dynamics are integrated with a fixed-step RK4, so the
//! step stays within 1e-3 of a ten-times-finer reference over hundreds of
//! steps. Data collection treats `|theta| > 3 degrees` as terminal;
//! evaluation ignores the cutoff and just keeps stepping.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Environment;
use crate::npbe::InitialStateSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CartpoleEnv {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub pole_length: f64,
    pub gravity: f64,
    pub dt: f64,
    pub max_force: f64,
    pub gamma: f64,
    /// Collection-time termination threshold on `|theta|`, radians.
    pub fail_angle: f64,
}

impl Default for CartpoleEnv {
    fn default() -> Self {
        CartpoleEnv {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_length: 0.5,
            gravity: 9.8,
            dt: 0.02,
            max_force: 10.0,
            gamma: 0.99,
            fail_angle: 3.0_f64.to_radians(),
        }
    }
}

impl CartpoleEnv {
    fn derivative(&self, s: &[f64; 4], force: f64) -> [f64; 4] {
        let (x_dot, theta, theta_dot) = (s[1], s[2], s[3]);
        let total_mass = self.cart_mass + self.pole_mass;
        let temp = (force
            + self.pole_mass * self.pole_length * theta_dot * theta_dot * theta.sin())
            / total_mass;
        let theta_acc = (self.gravity * theta.sin() - theta.cos() * temp)
            / (self.pole_length
                * (4.0 / 3.0 - self.pole_mass * theta.cos() * theta.cos() / total_mass));
        let x_acc = temp - self.pole_mass * self.pole_length * theta_acc * theta.cos()
            / total_mass;
        [x_dot, x_acc, theta_dot, theta_acc]
    }

    fn rk4_step(&self, s: &[f64; 4], force: f64, dt: f64) -> [f64; 4] {
        let add = |a: &[f64; 4], b: &[f64; 4], h: f64| {
            [a[0] + h * b[0], a[1] + h * b[1], a[2] + h * b[2], a[3] + h * b[3]]
        };
        let k1 = self.derivative(s, force);
        let k2 = self.derivative(&add(s, &k1, dt / 2.0), force);
        let k3 = self.derivative(&add(s, &k2, dt / 2.0), force);
        let k4 = self.derivative(&add(s, &k3, dt), force);
        [
            s[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            s[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            s[2] + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
            s[3] + dt / 6.0 * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
        ]
    }

    /// One step with the given number of internal substeps.
    pub fn step_substeps(&self, s: &[f64], a: &[f64], substeps: usize) -> (Vec<f64>, f64, f64) {
        let force = a[0].clamp(-self.max_force, self.max_force);
        let mut state = [s[0], s[1], s[2], s[3]];
        let dt = self.dt / substeps as f64;
        for _ in 0..substeps {
            state = self.rk4_step(&state, force, dt);
        }
        let reward = s[2].cos();
        let discount = if state[2].abs() > self.fail_angle {
            0.0
        } else {
            self.gamma
        };
        (state.to_vec(), reward, discount)
    }
}

impl Environment for CartpoleEnv {
    fn name(&self) -> &'static str {
        "cartpole"
    }

    fn d_s(&self) -> usize {
        4
    }

    fn d_a(&self) -> usize {
        1
    }

    fn action_low(&self) -> Vec<f64> {
        vec![-self.max_force]
    }

    fn action_high(&self) -> Vec<f64> {
        vec![self.max_force]
    }

    fn step(&self, s: &[f64], a: &[f64], _rng: &mut ChaCha8Rng) -> (Vec<f64>, f64, f64) {
        self.step_substeps(s, a, 1)
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..4).map(|_| rng.gen_range(-0.01..0.01)).collect()
    }

    fn eval_start(&self) -> Vec<f64> {
        vec![0.0, 0.0, 0.0, 0.0]
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
    fn upright_rest_is_an_equilibrium() {
        let env = CartpoleEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (next, r, gamma) = env.step(&[0.0, 0.0, 0.0, 0.0], &[0.0], &mut rng);
        for v in &next {
            assert_eq!(*v, 0.0);
        }
        assert_eq!(r, 1.0);
        assert_eq!(gamma, env.gamma);
    }

    #[test]
    fn exceeding_fail_angle_is_terminal() {
        let env = CartpoleEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Start just inside the cutoff with outward velocity.
        let (_, _, gamma) = env.step(&[0.0, 0.0, 0.05, 2.0], &[0.0], &mut rng);
        assert_eq!(gamma, 0.0);
    }

    #[test]
    fn reward_is_cosine_of_angle() {
        let env = CartpoleEnv::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, r, _) = env.step(&[0.3, 0.0, 0.04, 0.0], &[1.0], &mut rng);
        assert_eq!(r, 0.04f64.cos());
    }

    #[test]
    fn matches_fine_step_reference_integrator() {
        let env = CartpoleEnv::default();
        let force = [1.5];
        let mut coarse = vec![0.0, 0.0, 0.02, 0.0];
        let mut reference = coarse.clone();
        let mut max_err: f64 = 0.0;
        for _ in 0..100 {
            coarse = env.step_substeps(&coarse, &force, 1).0;
            reference = env.step_substeps(&reference, &force, 10).0;
            for (a, b) in coarse.iter().zip(&reference) {
                max_err = max_err.max((a - b).abs());
            }
        }
        assert!(max_err < 1e-3, "divergence {max_err} from dt/10 reference");
    }
}
