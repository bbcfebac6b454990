//! The full off-policy policy gradient and the offline training loop.
//!
//! The gradient of the estimated return `J = eps0(theta) . q(theta)` is
//! assembled from two terms: the initial-responsibility derivative
//! `(d eps0 / d theta)^T q` and the operator derivative
//! `mu^T (d P / d theta) q`, both evaluated with `q` and `mu` held fixed
//! at the current solve (the stop-gradient surrogate). One reverse-mode
//! pass per evaluation point keeps memory linear in the dataset size.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernel::KernelModel;
use crate::npbe::{
    initial_responsibilities, responsibilities_vjp, solve_npbe, InitialStateSpec, NoiseBlock,
    NpbeSolution, SolveConfig,
};
use crate::policy::Policy;

/// Hyper-parameters of one NOPG run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NopgConfig {
    pub k_sparse: usize,
    pub n_pi_mc: usize,
    pub n_phi_mc: usize,
    pub n_mu0_mc: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub policy_updates: usize,
    pub cg_tol: f64,
    pub cg_max_iter: Option<usize>,
    pub seed: u64,
    /// Optional l2 gradient clip; disabled by default.
    pub grad_clip: Option<f64>,
    /// Optional linear decay of the stochastic policy's std multiplier
    /// over training, `(start, end)`.
    pub std_decay: Option<(f64, f64)>,
}

impl Default for NopgConfig {
    fn default() -> Self {
        NopgConfig {
            k_sparse: usize::MAX,
            n_pi_mc: 10,
            n_phi_mc: 1,
            n_mu0_mc: 1,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            policy_updates: 100,
            cg_tol: 1e-10,
            cg_max_iter: None,
            seed: 0,
            grad_clip: None,
            std_decay: None,
        }
    }
}

impl NopgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_sparse < 1 {
            return Err(Error::config("k_sparse must be >= 1"));
        }
        if self.n_pi_mc < 1 || self.n_phi_mc < 1 || self.n_mu0_mc < 1 {
            return Err(Error::config("monte-carlo counts must be >= 1"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in (0, 1)")));
            }
        }
        if self.cg_tol <= 0.0 {
            return Err(Error::config("cg_tol must be positive"));
        }
        Ok(())
    }

    pub fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            k_sparse: self.k_sparse,
            cg_tol: self.cg_tol,
            cg_max_iter: self.cg_max_iter,
        }
    }

    pub fn noise_block(
        &self,
        dataset: &Dataset,
        mu0: &InitialStateSpec,
        seed: u64,
    ) -> Result<NoiseBlock> {
        NoiseBlock::generate(
            seed,
            dataset.d_s(),
            dataset.d_a(),
            self.n_pi_mc,
            self.n_phi_mc,
            self.n_mu0_mc,
            mu0,
        )
    }
}

/// A policy-parameter gradient together with the estimated return it was
/// taken at.
#[derive(Debug, Clone)]
pub struct GradientVector {
    pub g: Vec<f64>,
    pub j_hat: f64,
}

/// Both gradient terms separately: the initial-responsibility term and
/// the operator term. Their sum is the full gradient; the first alone is
/// the semi-gradient analogue.
#[derive(Debug, Clone)]
pub struct GradientParts {
    pub term_init: Vec<f64>,
    pub term_operator: Vec<f64>,
    pub j_hat: f64,
    pub solution: NpbeSolution,
}

impl GradientParts {
    pub fn full(&self) -> GradientVector {
        let g = self
            .term_init
            .iter()
            .zip(&self.term_operator)
            .map(|(a, b)| a + b)
            .collect();
        GradientVector {
            g,
            j_hat: self.j_hat,
        }
    }
}

/// Computes the full gradient with a fresh frozen noise block derived from
/// `config.seed`.
pub fn nopg_gradient(
    dataset: &Dataset,
    kernels: &KernelModel,
    policy: &Policy,
    mu0: &InitialStateSpec,
    config: &NopgConfig,
) -> Result<GradientVector> {
    config.validate()?;
    let noise = config.noise_block(dataset, mu0, config.seed)?;
    Ok(nopg_gradient_parts(dataset, kernels, policy, config, &noise)?.full())
}

/// Gradient with an explicit noise block; exposes both terms and the
/// underlying solution.
pub fn nopg_gradient_parts(
    dataset: &Dataset,
    kernels: &KernelModel,
    policy: &Policy,
    config: &NopgConfig,
    noise: &NoiseBlock,
) -> Result<GradientParts> {
    config.validate()?;
    let sol = solve_npbe(dataset, kernels, policy, &config.solve_config(), noise)?;
    let n_params = policy.n_params();

    // Term A: (d eps0 / d theta)^T q, averaged over initial states.
    let mut term_init = vec![0.0; n_params];
    let m0 = noise.mu0_states.len() as f64;
    let cot_q: Vec<f64> = sol.q.iter().map(|q| q / m0).collect();
    for s0 in &noise.mu0_states {
        responsibilities_vjp(dataset, kernels, policy, s0, &noise.pi, &cot_q, &mut term_init)?;
    }

    // Term B: mu^T (d P / d theta) q. Row i of the operator is the
    // truncated, rescaled mean responsibility vector of its next-state
    // samples: P_ij = gamma_i * T_i * eps_bar_j / S_i for j in the kept
    // set, with S_i the kept mass and T_i the total mass of eps_bar. The
    // cotangent on eps_bar therefore is mu_i gamma_i (T_i (q_j - f_i)/S_i
    // + f_i) with f_i the row's rescaled value mean; the constant f_i part
    // cancels under softmax shift invariance and is dropped. Rows are
    // recomputed with the same frozen noise the operator was built with.
    let h_next = kernels.h_next.values();
    let row_grads: Vec<Vec<f64>> = dataset
        .transitions()
        .par_iter()
        .enumerate()
        .map(|(i, t)| -> Result<Vec<f64>> {
            let mut grad = vec![0.0; n_params];
            if t.discount == 0.0 || sol.mu[i] == 0.0 || sol.operator.rows()[i].is_empty() {
                return Ok(grad);
            }
            let kept: Vec<usize> = sol.operator.rows()[i].iter().map(|(j, _)| *j).collect();
            let m_phi = noise.phi.len() as f64;
            let queries: Vec<Vec<f64>> = noise
                .phi
                .iter()
                .map(|zeta| {
                    t.next_state
                        .iter()
                        .zip(h_next)
                        .zip(zeta)
                        .map(|((sn, h), z)| sn + h * z)
                        .collect()
                })
                .collect();
            let samples: Vec<crate::npbe::ResponsibilityVector> = queries
                .iter()
                .map(|q| crate::npbe::responsibilities_at(dataset, kernels, policy, q, noise))
                .collect::<Result<_>>()?;
            let mut eps_bar = vec![0.0; dataset.len()];
            for eps in &samples {
                for (dst, e) in eps_bar.iter_mut().zip(eps.weights()) {
                    *dst += e / m_phi;
                }
            }
            let total: f64 = eps_bar.iter().sum();
            let kept_mass: f64 = kept.iter().map(|&j| eps_bar[j]).sum();
            if kept_mass <= 0.0 {
                return Ok(grad);
            }
            let f_i: f64 = kept.iter().map(|&j| eps_bar[j] * sol.q[j]).sum::<f64>() / kept_mass;
            let scale = sol.mu[i] * t.discount * total / (kept_mass * m_phi);
            let mut cot = vec![0.0; dataset.len()];
            for &j in &kept {
                cot[j] = scale * (sol.q[j] - f_i);
            }
            for (query, _) in queries.iter().zip(&samples) {
                responsibilities_vjp(dataset, kernels, policy, query, &noise.pi, &cot, &mut grad)?;
            }
            Ok(grad)
        })
        .collect::<Result<_>>()?;
    let mut term_operator = vec![0.0; n_params];
    for row in &row_grads {
        for (dst, g) in term_operator.iter_mut().zip(row) {
            *dst += g;
        }
    }

    let j_hat = sol.j_hat();
    if !j_hat.is_finite() {
        return Err(Error::Solver("non-finite estimated return".into()));
    }
    Ok(GradientParts {
        term_init,
        term_operator,
        j_hat,
        solution: sol,
    })
}

/// The estimated return `eps0 . q` with `q` and `mu` treated as constants.
/// Its parameter gradient is exactly the full gradient above.
pub fn surrogate_objective(
    dataset: &Dataset,
    kernels: &KernelModel,
    policy: &Policy,
    mu0: &InitialStateSpec,
    config: &NopgConfig,
) -> Result<f64> {
    config.validate()?;
    let noise = config.noise_block(dataset, mu0, config.seed)?;
    let sol = solve_npbe(dataset, kernels, policy, &config.solve_config(), &noise)?;
    Ok(sol.j_hat())
}

/// Evaluates the stop-gradient surrogate
/// `eps0(theta) . q_bar + mu_bar^T P(theta) q_bar` at `policy` with fixed
/// `q_bar`, `mu_bar`, kept sets and noise. Finite differences of this map
/// reproduce the analytic gradient; used by tests and diagnostics.
pub fn surrogate_at(
    dataset: &Dataset,
    kernels: &KernelModel,
    policy: &Policy,
    base: &NpbeSolution,
    noise: &NoiseBlock,
) -> Result<f64> {
    let eps0 = initial_responsibilities(dataset, kernels, policy, noise)?;
    let mut acc = eps0.dot(&base.q);
    // Kept sets are frozen from the base solve; each row's mean
    // responsibility vector is recomputed at the perturbed policy.
    let h_next = kernels.h_next.values();
    for (i, t) in dataset.transitions().iter().enumerate() {
        if t.discount == 0.0 || base.mu[i] == 0.0 || base.operator.rows()[i].is_empty() {
            continue;
        }
        let kept: Vec<usize> = base.operator.rows()[i].iter().map(|(j, _)| *j).collect();
        let m_phi = noise.phi.len() as f64;
        let mut eps_bar = vec![0.0; dataset.len()];
        for zeta in &noise.phi {
            let query: Vec<f64> = t
                .next_state
                .iter()
                .zip(h_next)
                .zip(zeta)
                .map(|((sn, h), z)| sn + h * z)
                .collect();
            let eps = crate::npbe::responsibilities_at(dataset, kernels, policy, &query, noise)?;
            for (dst, e) in eps_bar.iter_mut().zip(eps.weights()) {
                *dst += e / m_phi;
            }
        }
        let total: f64 = eps_bar.iter().sum();
        let kept_mass: f64 = kept.iter().map(|&j| eps_bar[j]).sum();
        if kept_mass <= 0.0 {
            continue;
        }
        let num: f64 = kept.iter().map(|&j| eps_bar[j] * base.q[j]).sum();
        acc += base.mu[i] * t.discount * total * num / kept_mass;
    }
    Ok(acc)
}

/// ADAM state for ascent steps.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One ADAM ascent step (the objective is maximized).
pub fn adam_step(
    theta: &[f64],
    g: &[f64],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Vec<f64> {
    let (b1, b2) = betas;
    state.t += 1;
    let t = state.t as i32;
    let mut out = theta.to_vec();
    for i in 0..theta.len() {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = state.m[i] / (1.0 - b1.powi(t));
        let v_hat = state.v[i] / (1.0 - b2.powi(t));
        out[i] += lr * m_hat / (v_hat.sqrt() + eps);
    }
    out
}

/// One record per policy update.
#[derive(Debug, Clone)]
pub struct IterRecord {
    pub iter: usize,
    pub j_hat: f64,
    pub grad_norm: f64,
    pub cg_iters_q: usize,
    pub cg_iters_mu: usize,
    pub clipped: bool,
}

/// Writes training history as CSV.
pub fn write_history_csv(history: &[IterRecord], path: &std::path::Path) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = std::io::BufWriter::new(file);
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    writeln!(w, "iter,j_hat,grad_norm,cg_iters_q,cg_iters_mu,clipped").map_err(io_err)?;
    for r in history {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.iter, r.j_hat, r.grad_norm, r.cg_iters_q, r.cg_iters_mu, r.clipped as u8
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// Observer invoked after each update with the new policy and record.
pub type IterCallback<'a> = &'a mut dyn FnMut(usize, &Policy, &IterRecord);

/// Runs `policy_updates` iterations of solve, gradient, ascent step and
/// returns the final-iterate policy with the per-iteration history.
///
/// The per-iteration noise block is derived deterministically from
/// `config.seed` and the iteration index, so identical seeds give
/// bit-identical histories.
pub fn train(
    dataset: &Dataset,
    kernels: &KernelModel,
    policy0: &Policy,
    mu0: &InitialStateSpec,
    config: &NopgConfig,
    mut on_iteration: Option<IterCallback<'_>>,
) -> Result<(Policy, Vec<IterRecord>)> {
    config.validate()?;
    let mut policy = policy0.clone();
    let mut adam = AdamState::new(policy.n_params());
    let mut history = Vec::with_capacity(config.policy_updates);
    for iter in 0..config.policy_updates {
        if let Some((start, end)) = config.std_decay {
            let t = if config.policy_updates > 1 {
                iter as f64 / (config.policy_updates - 1) as f64
            } else {
                0.0
            };
            policy.std_scale = start + (end - start) * t;
        }
        let iter_seed = config
            .seed
            .wrapping_mul(0x9e3779b97f4a7c15)
            .wrapping_add(iter as u64);
        let noise = config.noise_block(dataset, mu0, iter_seed)?;
        let parts = nopg_gradient_parts(dataset, kernels, policy_ref(&policy), config, &noise)?;
        let mut grad = parts.full();
        if !grad.j_hat.is_finite() {
            return Err(Error::Solver(format!(
                "iteration {iter}: non-finite estimated return"
            )));
        }
        let norm = l2_norm(&grad.g);
        let mut clipped = false;
        if let Some(max_norm) = config.grad_clip {
            if norm > max_norm {
                let scale = max_norm / norm;
                for g in grad.g.iter_mut() {
                    *g *= scale;
                }
                clipped = true;
            }
        }
        policy.theta = adam_step(
            &policy.theta,
            &grad.g,
            &mut adam,
            config.learning_rate,
            (config.beta1, config.beta2),
            config.eps_adam,
        );
        let record = IterRecord {
            iter,
            j_hat: grad.j_hat,
            grad_norm: norm,
            cg_iters_q: parts.solution.cg_q.iterations,
            cg_iters_mu: parts.solution.cg_mu.iterations,
            clipped,
        };
        if let Some(cb) = on_iteration.as_mut() {
            cb(iter, &policy, &record);
        }
        history.push(record);
    }
    Ok((policy, history))
}

fn policy_ref(p: &Policy) -> &Policy {
    p
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean log joint kernel density of `(s, pi(s))` pairs over the dataset
/// states: how likely the policy's actions are under the data. Used by the
/// trust-region study.
pub fn dataset_log_likelihood(
    dataset: &Dataset,
    kernels: &KernelModel,
    policy: &Policy,
) -> Result<f64> {
    use crate::kernel::{log_norm_const, log_sum_exp, log_weight};
    let hs = kernels.h_state.values();
    let ha = kernels.h_action.values();
    let log_norm = log_norm_const(hs) + log_norm_const(ha);
    let log_n = (dataset.len() as f64).ln();
    let mut total = 0.0;
    for t in dataset.transitions() {
        let a = policy.mean(&t.state)?;
        let logs: Vec<f64> = dataset
            .transitions()
            .iter()
            .map(|u| log_weight(&t.state, &u.state, hs) + log_weight(&a, &u.action, ha))
            .collect();
        total += log_sum_exp(&logs) + log_norm - log_n;
    }
    Ok(total / dataset.len() as f64)
}
