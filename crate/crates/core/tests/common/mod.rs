//! Independent oracles for the acceptance suite: brute-force dense
//! construction of the kernel model and direct linear solves, sharing no
//! code with the sparse/log-space implementation they check.

#![allow(dead_code)]

use nopg::dataset::{Dataset, Transition};
use nopg::kernel::KernelModel;
use nopg::npbe::NoiseBlock;
use nopg::policy::Policy;
use rand::Rng;

/// Direct product-Gaussian weight without log-space tricks. The shared
/// normalization constants cancel in every ratio, so they are omitted.
fn raw_weight(x: &[f64], c: &[f64], h: &[f64]) -> f64 {
    let mut acc = 0.0;
    for d in 0..x.len() {
        let z = (x[d] - c[d]) / h[d];
        acc += z * z;
    }
    (-0.5 * acc).exp()
}

/// Brute-force state-action responsibilities.
pub fn dense_eps_sa(dataset: &Dataset, kernels: &KernelModel, s: &[f64], a: &[f64]) -> Vec<f64> {
    let hs = kernels.h_state.values();
    let ha = kernels.h_action.values();
    let weights: Vec<f64> = dataset
        .transitions()
        .iter()
        .map(|t| raw_weight(s, &t.state, hs) * raw_weight(a, &t.action, ha))
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// Brute-force policy responsibilities under the frozen noise block.
pub fn dense_eps_policy(
    dataset: &Dataset,
    kernels: &KernelModel,
    policy: &Policy,
    s: &[f64],
    noise: &NoiseBlock,
) -> Vec<f64> {
    if policy.is_stochastic() {
        let mut acc = vec![0.0; dataset.len()];
        for xi in &noise.pi {
            let a = policy.sample(s, xi).unwrap().action;
            let eps = dense_eps_sa(dataset, kernels, s, &a);
            for (dst, e) in acc.iter_mut().zip(&eps) {
                *dst += e / noise.pi.len() as f64;
            }
        }
        acc
    } else {
        let a = policy.mean(s).unwrap();
        dense_eps_sa(dataset, kernels, s, &a)
    }
}

/// Brute-force dense transition operator (no truncation).
pub fn dense_operator(
    dataset: &Dataset,
    kernels: &KernelModel,
    policy: &Policy,
    noise: &NoiseBlock,
) -> Vec<Vec<f64>> {
    let n = dataset.len();
    let h_next = kernels.h_next.values();
    dataset
        .transitions()
        .iter()
        .map(|t| {
            let mut row = vec![0.0; n];
            if t.discount == 0.0 {
                return row;
            }
            for zeta in &noise.phi {
                let query: Vec<f64> = t
                    .next_state
                    .iter()
                    .zip(h_next)
                    .zip(zeta)
                    .map(|((sn, h), z)| sn + h * z)
                    .collect();
                let eps = dense_eps_policy(dataset, kernels, policy, &query, noise);
                for (dst, e) in row.iter_mut().zip(&eps) {
                    *dst += t.discount * e / noise.phi.len() as f64;
                }
            }
            row
        })
        .collect()
}

pub fn dense_eps0(
    dataset: &Dataset,
    kernels: &KernelModel,
    policy: &Policy,
    noise: &NoiseBlock,
) -> Vec<f64> {
    let mut acc = vec![0.0; dataset.len()];
    for s0 in &noise.mu0_states {
        let eps = dense_eps_policy(dataset, kernels, policy, s0, noise);
        for (dst, e) in acc.iter_mut().zip(&eps) {
            *dst += e / noise.mu0_states.len() as f64;
        }
    }
    acc
}

/// Gaussian elimination with partial pivoting.
pub fn lu_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        x.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            for k in col..n {
                m[row][k] -= f * m[col][k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        x[col] /= m[col][col];
        for row in 0..col {
            x[row] -= m[row][col] * x[col];
        }
    }
    x
}

pub fn lu_solve_transpose(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let at: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| a[j][i]).collect())
        .collect();
    lu_solve(&at, b)
}

/// Dense estimated return `eps0 . (I - P)^-1 r`.
pub fn dense_return(
    dataset: &Dataset,
    kernels: &KernelModel,
    policy: &Policy,
    noise: &NoiseBlock,
) -> f64 {
    let n = dataset.len();
    let p = dense_operator(dataset, kernels, policy, noise);
    let mut lambda = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            lambda[i][j] = if i == j { 1.0 } else { 0.0 } - p[i][j];
        }
    }
    let q = lu_solve(&lambda, &dataset.rewards());
    let eps0 = dense_eps0(dataset, kernels, policy, noise);
    eps0.iter().zip(&q).map(|(e, q)| e * q).sum()
}

/// Richardson-extrapolated central difference of `f` at `x` in
/// coordinate `i`.
pub fn richardson_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let central = |step: f64| {
        let mut plus = x.to_vec();
        plus[i] += step;
        let mut minus = x.to_vec();
        minus[i] -= step;
        (f(&plus) - f(&minus)) / (2.0 * step)
    };
    (4.0 * central(h / 2.0) - central(h)) / 3.0
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    diff / l2(b).max(1e-300)
}

/// A compact random dataset for solver and gradient checks.
pub fn random_dataset(rng: &mut impl Rng, n: usize, d_s: usize, d_a: usize, gamma: f64) -> Dataset {
    let transitions = (0..n)
        .map(|_| Transition {
            state: (0..d_s).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            action: (0..d_a).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            reward: rng.gen_range(-1.0..1.0),
            next_state: (0..d_s).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            discount: gamma,
        })
        .collect();
    Dataset::new(transitions, d_s, d_a).unwrap()
}
