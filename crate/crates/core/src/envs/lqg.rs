//! Discounted linear-quadratic-Gaussian control with closed-form value,
//! return and gradient via the Riccati fixed point.
//!
//! Dynamics `s' = A s + B a`, reward `r = -s^T Q s - a^T R a`, policy
//! `a = diag(theta) s + sigma * eps`. The noise enters through the policy
//! action, so it propagates into both the control cost and the dynamics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Policy, PolicyKind, PolicyLayout};

pub type Mat = Vec<Vec<f64>>;

/// A linear-quadratic task with Gaussian action noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LqgSpec {
    pub a: Mat,
    pub b: Mat,
    pub q: Mat,
    pub r: Mat,
    /// Per-dimension std of the policy's action noise (diagonal).
    pub sigma: Vec<f64>,
    pub s0: Vec<f64>,
    pub gamma: f64,
    /// Rollout length used for data generation only; the closed form does
    /// not depend on it.
    pub horizon: usize,
}

impl LqgSpec {
    /// The two-dimensional benchmark configuration: unstable diagonal
    /// dynamics, unit state cost, 0.1 action cost, unit policy noise.
    pub fn benchmark_2d() -> Self {
        LqgSpec {
            a: vec![vec![1.2, 0.0], vec![0.0, 1.1]],
            b: identity(2),
            q: identity(2),
            r: vec![vec![0.1, 0.0], vec![0.0, 0.1]],
            sigma: vec![1.0, 1.0],
            s0: vec![-1.0, -1.0],
            gamma: 0.9,
            horizon: 50,
        }
    }

    pub fn deterministic(&self) -> Self {
        let mut spec = self.clone();
        spec.sigma = vec![0.0; spec.sigma.len()];
        spec
    }

    pub fn d_s(&self) -> usize {
        self.a.len()
    }

    pub fn d_a(&self) -> usize {
        self.b[0].len()
    }
}

/// Value matrix and return of a fixed diagonal-gain policy.
#[derive(Debug, Clone)]
pub struct RiccatiValue {
    /// `V(s) = -s^T P s - c`.
    pub p: Mat,
    /// The noise constant `c = (tr(R S) + gamma tr(P B S B^T)) / (1 - gamma)`
    /// with `S = diag(sigma^2)`.
    pub noise_constant: f64,
    pub j: f64,
}

/// Iterates `P <- (Q + Th^T R Th) + gamma C^T P C` with `C = A + B Th` to
/// the fixed point and evaluates `J = -s0^T P s0 - c`.
pub fn riccati_value(lqg: &LqgSpec, theta: &[f64]) -> Result<RiccatiValue> {
    if theta.len() != lqg.d_a() {
        return Err(Error::Dimension {
            expected: lqg.d_a(),
            got: theta.len(),
            context: "lqg diagonal gains",
        });
    }
    let th = diag(theta);
    let c_loop = mat_add(&lqg.a, &mat_mul(&lqg.b, &th));
    let cost = mat_add(&lqg.q, &mat_mul(&mat_mul(&transpose(&th), &lqg.r), &th));
    let mut p = cost.clone();
    let mut converged = false;
    for _ in 0..200_000 {
        // P' = cost + gamma C^T P C
        let next = mat_add(
            &cost,
            &mat_scale(
                &mat_mul(&mat_mul(&transpose(&c_loop), &p), &c_loop),
                lqg.gamma,
            ),
        );
        let diff = max_abs_diff(&next, &p);
        p = next;
        if diff < 1e-14 {
            converged = true;
            break;
        }
        if p.iter().flatten().any(|v| !v.is_finite() || v.abs() > 1e14) {
            return Err(Error::domain(
                "riccati iteration diverged: closed loop unstable under discount",
            ));
        }
    }
    if !converged {
        return Err(Error::domain("riccati iteration did not converge"));
    }
    // Noise propagates through the action: a = Th s + sigma*eps adds
    // tr(R S) to the per-step cost and B S B^T to the state covariance.
    let s_noise: Mat = diag(&lqg.sigma.iter().map(|s| s * s).collect::<Vec<f64>>());
    let tr_rs = trace(&mat_mul(&lqg.r, &s_noise));
    let bsbt = mat_mul(&mat_mul(&lqg.b, &s_noise), &transpose(&lqg.b));
    let tr_pbsbt = trace(&mat_mul(&p, &bsbt));
    let noise_constant = (tr_rs + lqg.gamma * tr_pbsbt) / (1.0 - lqg.gamma);
    let s0p = mat_vec(&p, &lqg.s0);
    let j = -dot(&lqg.s0, &s0p) - noise_constant;
    Ok(RiccatiValue {
        p,
        noise_constant,
        j,
    })
}

/// Ground-truth return gradient by Richardson-extrapolated central
/// differences on the closed-form return.
pub fn lqg_true_gradient(lqg: &LqgSpec, theta: &[f64]) -> Result<Vec<f64>> {
    let h = 1e-5;
    (0..theta.len())
        .map(|i| {
            let g_h = central_diff(lqg, theta, i, h)?;
            let g_h2 = central_diff(lqg, theta, i, h / 2.0)?;
            Ok((4.0 * g_h2 - g_h) / 3.0)
        })
        .collect()
}

fn central_diff(lqg: &LqgSpec, theta: &[f64], i: usize, h: f64) -> Result<f64> {
    let mut plus = theta.to_vec();
    plus[i] += h;
    let mut minus = theta.to_vec();
    minus[i] -= h;
    Ok((riccati_value(lqg, &plus)?.j - riccati_value(lqg, &minus)?.j) / (2.0 * h))
}

/// Closed-form `Q(s, a)` of the diagonal-gain policy: immediate reward
/// plus discounted value at the deterministic successor.
pub fn lqg_q_oracle(lqg: &LqgSpec, theta: &[f64], s: &[f64], a: &[f64]) -> Result<f64> {
    let rv = riccati_value(lqg, theta)?;
    Ok(q_from_value(lqg, &rv, s, a))
}

pub fn q_from_value(lqg: &LqgSpec, rv: &RiccatiValue, s: &[f64], a: &[f64]) -> f64 {
    let cost_s = dot(s, &mat_vec(&lqg.q, s));
    let cost_a = dot(a, &mat_vec(&lqg.r, a));
    let next = vec_add(&mat_vec(&lqg.a, s), &mat_vec(&lqg.b, a));
    let v_next = -dot(&next, &mat_vec(&rv.p, &next)) - rv.noise_constant;
    -cost_s - cost_a + lqg.gamma * v_next
}

/// `d Q / d a = -2 R a - 2 gamma B^T P (A s + B a)`.
pub fn q_action_gradient(lqg: &LqgSpec, rv: &RiccatiValue, s: &[f64], a: &[f64]) -> Vec<f64> {
    let ra = mat_vec(&lqg.r, a);
    let next = vec_add(&mat_vec(&lqg.a, s), &mat_vec(&lqg.b, a));
    let pnext = mat_vec(&rv.p, &next);
    let btp = mat_vec(&transpose(&lqg.b), &pnext);
    (0..a.len())
        .map(|j| -2.0 * ra[j] - 2.0 * lqg.gamma * btp[j])
        .collect()
}

/// Discount-adjusted Riccati-optimal diagonal gains (exact for diagonal
/// `A`, `B`, `Q`, `R`, where the problem decouples per dimension).
pub fn optimal_gains(lqg: &LqgSpec) -> Result<Vec<f64>> {
    let d = lqg.d_s();
    let g = lqg.gamma;
    let mut gains = Vec::with_capacity(d);
    for i in 0..d {
        let (a, b, q, r) = (lqg.a[i][i], lqg.b[i][i], lqg.q[i][i], lqg.r[i][i]);
        // Scalar discounted DARE: p = q + g a^2 p - g^2 a^2 b^2 p^2 / (r + g b^2 p).
        let mut p = q;
        for _ in 0..100_000 {
            let denom = r + g * b * b * p;
            let next = q + g * a * a * p - g * g * a * a * b * b * p * p / denom;
            if (next - p).abs() < 1e-14 {
                p = next;
                break;
            }
            p = next;
        }
        gains.push(-g * a * b * p / (r + g * b * b * p));
    }
    Ok(gains)
}

/// The behavior policy of the off-policiness study: a linear-diagonal
/// Gaussian with gains `(1-alpha) theta + alpha theta_prime` and the
/// task's noise scale.
pub fn mix_behavior_policy(
    lqg: &LqgSpec,
    theta: &[f64],
    theta_prime: &[f64],
    alpha: f64,
) -> Result<Policy> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::domain(format!("alpha {alpha} outside [0, 1]")));
    }
    let gains: Vec<f64> = theta
        .iter()
        .zip(theta_prime)
        .map(|(t, tp)| (1.0 - alpha) * t + alpha * tp)
        .collect();
    linear_gaussian_policy(lqg, &gains)
}

pub fn linear_gaussian_policy(lqg: &LqgSpec, gains: &[f64]) -> Result<Policy> {
    Policy::new(
        PolicyLayout {
            kind: PolicyKind::LinearGaussian,
            d_s: lqg.d_s(),
            d_a: lqg.d_a(),
            hidden: 0,
            action_scale: 1.0,
            sigma: lqg.sigma.clone(),
            fixed_std: None,
        },
        gains.to_vec(),
    )
}

pub fn linear_deterministic_policy(lqg: &LqgSpec, gains: &[f64]) -> Result<Policy> {
    Policy::new(
        PolicyLayout {
            kind: PolicyKind::LinearDeterministic,
            d_s: lqg.d_s(),
            d_a: lqg.d_a(),
            hidden: 0,
            action_scale: 1.0,
            sigma: vec![],
            fixed_std: None,
        },
        gains.to_vec(),
    )
}

// Small dense helpers; everything here is at most a handful of dimensions.

pub fn identity(n: usize) -> Mat {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn diag(v: &[f64]) -> Mat {
    let n = v.len();
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { v[i] } else { 0.0 }).collect())
        .collect()
}

pub fn transpose(m: &Mat) -> Mat {
    let rows = m.len();
    let cols = m[0].len();
    (0..cols)
        .map(|j| (0..rows).map(|i| m[i][j]).collect())
        .collect()
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let k = b.len();
    let m = b[0].len();
    (0..n)
        .map(|i| {
            (0..m)
                .map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum())
                .collect()
        })
        .collect()
}

pub fn mat_add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
        .collect()
}

pub fn mat_scale(a: &Mat, s: f64) -> Mat {
    a.iter()
        .map(|r| r.iter().map(|x| x * s).collect())
        .collect()
}

pub fn mat_vec(a: &Mat, v: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum())
        .collect()
}

pub fn vec_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn trace(m: &Mat) -> f64 {
    (0..m.len()).map(|i| m[i][i]).sum()
}

fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}
