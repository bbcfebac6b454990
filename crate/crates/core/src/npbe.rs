//! The nonparametric Bellman equation on a transition dataset.
//!
//! Kernelized reward and dynamics models turn the Bellman equation into a
//! finite linear system: responsibilities assign query states to dataset
//! transitions, the strictly substochastic operator `P` couples support
//! points through the next-state kernel, and the value weights `q` and
//! state-distribution weights `mu` solve `(I - P) q = r` and
//! `(I - P)^T mu = eps0` by conjugate gradient on the normal equations.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{log_norm_const, log_weight, KernelModel};
use crate::policy::Policy;

/// Normalized kernel weights over dataset transitions; entries are
/// nonnegative and sum to one.
#[derive(Debug, Clone)]
pub struct ResponsibilityVector {
    weights: Vec<f64>,
}

impl ResponsibilityVector {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dot(&self, v: &[f64]) -> f64 {
        self.weights.iter().zip(v).map(|(w, x)| w * x).sum()
    }
}

pub type StateSampler = Arc<dyn Fn(&mut ChaCha8Rng) -> Vec<f64> + Send + Sync>;

/// Initial-state specification: a fixed start state or a sampler over
/// start states.
#[derive(Clone)]
pub enum InitialStateSpec {
    Fixed(Vec<f64>),
    Sampler(StateSampler),
}

impl std::fmt::Debug for InitialStateSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialStateSpec::Fixed(s) => write!(f, "Fixed({s:?})"),
            InitialStateSpec::Sampler(_) => write!(f, "Sampler(..)"),
        }
    }
}

/// Frozen Monte-Carlo noise for one evaluation of the model and its
/// gradient: policy reparameterization draws, next-state kernel draws and
/// initial states. Freezing makes the estimated return a deterministic
/// function of the policy parameters within one update.
#[derive(Debug, Clone)]
pub struct NoiseBlock {
    /// Standard-normal draws for the stochastic-policy integral, shared
    /// across query points (common random numbers).
    pub pi: Vec<Vec<f64>>,
    /// Standard-normal next-state draws; a single zero vector means "use
    /// the kernel mean".
    pub phi: Vec<Vec<f64>>,
    /// Initial states (a single entry for a fixed start state).
    pub mu0_states: Vec<Vec<f64>>,
}

impl NoiseBlock {
    pub fn generate(
        seed: u64,
        d_s: usize,
        d_a: usize,
        n_pi_mc: usize,
        n_phi_mc: usize,
        n_mu0_mc: usize,
        mu0: &InitialStateSpec,
    ) -> Result<Self> {
        if n_pi_mc < 1 || n_phi_mc < 1 {
            return Err(Error::config("monte-carlo counts must be >= 1"));
        }
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let pi = (0..n_pi_mc)
            .map(|_| (0..d_a).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        rng.set_stream(2);
        let phi = if n_phi_mc == 1 {
            vec![vec![0.0; d_s]]
        } else {
            (0..n_phi_mc)
                .map(|_| (0..d_s).map(|_| normal.sample(&mut rng)).collect())
                .collect()
        };
        let mu0_states = match mu0 {
            InitialStateSpec::Fixed(s0) => vec![s0.clone()],
            InitialStateSpec::Sampler(draw) => {
                if n_mu0_mc < 1 {
                    return Err(Error::config("n_mu0_mc must be >= 1 for a sampler"));
                }
                rng.set_stream(3);
                (0..n_mu0_mc).map(|_| draw(&mut rng)).collect()
            }
        };
        Ok(NoiseBlock {
            pi,
            phi,
            mu0_states,
        })
    }
}

/// Log state-kernel weights `log psi_i(s)` for all transitions.
fn log_state_weights(dataset: &Dataset, kernels: &KernelModel, s: &[f64]) -> Vec<f64> {
    let h = kernels.h_state.values();
    dataset
        .transitions()
        .iter()
        .map(|t| log_weight(s, &t.state, h))
        .collect()
}

/// Softmax of `log psi_i(s) + log phi_a_i(a)`; the shared normalization
/// constants cancel. Returns the normalized weights.
fn state_action_softmax(
    dataset: &Dataset,
    kernels: &KernelModel,
    log_psi: &[f64],
    a: &[f64],
) -> Vec<f64> {
    let ha = kernels.h_action.values();
    let n = dataset.len();
    let mut logits = vec![0.0; n];
    let mut max = f64::NEG_INFINITY;
    for (i, t) in dataset.transitions().iter().enumerate() {
        let l = log_psi[i] + log_weight(a, &t.action, ha);
        logits[i] = l;
        if l > max {
            max = l;
        }
    }
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
    logits
}

/// State-action responsibilities `eps_i(s, a)` (no policy integral).
pub fn state_action_responsibilities(
    dataset: &Dataset,
    kernels: &KernelModel,
    s: &[f64],
    a: &[f64],
) -> Result<ResponsibilityVector> {
    kernels.check_dims(dataset)?;
    let log_psi = log_state_weights(dataset, kernels, s);
    Ok(ResponsibilityVector {
        weights: state_action_softmax(dataset, kernels, &log_psi, a),
    })
}

/// Policy responsibilities `eps_i^pi(s)`: the state-action weights at the
/// deterministic action, or their average over reparameterized samples for
/// a stochastic policy. Log-sum-exp keeps far queries well-defined.
pub fn responsibilities_at(
    dataset: &Dataset,
    kernels: &KernelModel,
    policy: &Policy,
    s: &[f64],
    noise: &NoiseBlock,
) -> Result<ResponsibilityVector> {
    kernels.check_dims(dataset)?;
    let log_psi = log_state_weights(dataset, kernels, s);
    Ok(ResponsibilityVector {
        weights: policy_responsibilities(dataset, kernels, policy, s, &log_psi, &noise.pi)?,
    })
}

fn policy_responsibilities(
    dataset: &Dataset,
    kernels: &KernelModel,
    policy: &Policy,
    s: &[f64],
    log_psi: &[f64],
    pi_noise: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if policy.is_stochastic() {
        let m = pi_noise.len() as f64;
        let mut acc = vec![0.0; dataset.len()];
        for xi in pi_noise {
            let a = policy.sample(s, xi)?.action;
            let eps = state_action_softmax(dataset, kernels, log_psi, &a);
            for (dst, e) in acc.iter_mut().zip(&eps) {
                *dst += e / m;
            }
        }
        Ok(acc)
    } else {
        let a = policy.mean(s)?;
        Ok(state_action_softmax(dataset, kernels, log_psi, &a))
    }
}

/// Responsibilities of the initial-state distribution: the responsibility
/// vector at the fixed start state, or the mean over sampled start states.
pub fn initial_responsibilities(
    dataset: &Dataset,
    kernels: &KernelModel,
    policy: &Policy,
    noise: &NoiseBlock,
) -> Result<ResponsibilityVector> {
    let n = dataset.len();
    let mut acc = vec![0.0; n];
    let m = noise.mu0_states.len() as f64;
    for s0 in &noise.mu0_states {
        let eps = responsibilities_at(dataset, kernels, policy, s0, noise)?;
        for (dst, e) in acc.iter_mut().zip(eps.weights()) {
            *dst += e / m;
        }
    }
    Ok(ResponsibilityVector { weights: acc })
}

/// Gradient of `sum_i cot_i * eps_i^pi(s)` with respect to the policy
/// parameters, flowing through the action argument of the kernel ratio
/// (and through the reparameterized samples for stochastic policies).
pub(crate) fn responsibilities_vjp(
    dataset: &Dataset,
    kernels: &KernelModel,
    policy: &Policy,
    s: &[f64],
    pi_noise: &[Vec<f64>],
    cotangent: &[f64],
    grad_out: &mut [f64],
) -> Result<()> {
    let log_psi = log_state_weights(dataset, kernels, s);
    let d_a = dataset.d_a();
    let ha = kernels.h_action.values();
    let draws: Vec<(Vec<f64>, Option<Vec<f64>>)> = if policy.is_stochastic() {
        pi_noise
            .iter()
            .map(|xi| {
                let a = policy.sample(s, xi).map(|smp| smp.action)?;
                Ok((a, Some(xi.clone())))
            })
            .collect::<Result<_>>()?
    } else {
        vec![(policy.mean(s)?, None)]
    };
    let m = draws.len() as f64;
    for (a, xi) in &draws {
        let eps = state_action_softmax(dataset, kernels, &log_psi, a);
        // d eps_j / d a = eps_j (delta_j - sum_k eps_k delta_k),
        // delta_{j,d} = (a_{j,d} - a_d) / h_d^2.
        let mut cot_bar = 0.0;
        for (c, e) in cotangent.iter().zip(&eps) {
            cot_bar += c * e;
        }
        let mut g_a = vec![0.0; d_a];
        for (j, t) in dataset.transitions().iter().enumerate() {
            let w = eps[j] * (cotangent[j] - cot_bar);
            if w == 0.0 {
                continue;
            }
            for d in 0..d_a {
                g_a[d] += w * (t.action[d] - a[d]) / (ha[d] * ha[d]);
            }
        }
        for g in g_a.iter_mut() {
            *g /= m;
        }
        let theta_grad = if policy.is_stochastic() {
            let mut cot_policy = vec![0.0; 2 * d_a];
            cot_policy[..d_a].copy_from_slice(&g_a);
            if let Some(xi) = xi {
                for d in 0..d_a {
                    cot_policy[d_a + d] = g_a[d] * xi[d];
                }
            }
            policy.vjp(s, &cot_policy)?
        } else {
            policy.vjp(s, &g_a)?
        };
        for (dst, g) in grad_out.iter_mut().zip(&theta_grad) {
            *dst += g;
        }
    }
    Ok(())
}

/// The sparse transition operator `P`: row `i` couples transition `i` to
/// the responsibilities of its sampled next states, scaled by `gamma_i`.
/// Rows keep at most `k` entries, rescaled to preserve the row sum.
#[derive(Debug, Clone)]
pub struct SparseTransitionOperator {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
    row_discount: Vec<f64>,
}

impl SparseTransitionOperator {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn row_discount(&self) -> &[f64] {
        &self.row_discount
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|(_, v)| v).sum()
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    /// `out = P x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc = 0.0;
            for (j, v) in row {
                acc += v * x[*j];
            }
            out[i] = acc;
        }
    }

    /// `out = P^T x`.
    pub fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, row) in self.rows.iter().enumerate() {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for (j, v) in row {
                out[*j] += v * xi;
            }
        }
    }

    /// Writes the operator in coordinate text format, one `i j value`
    /// line per entry.
    pub fn dump_coo(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut w = std::io::BufWriter::new(file);
        for (i, row) in self.rows.iter().enumerate() {
            for (j, v) in row {
                writeln!(w, "{i} {j} {v}").map_err(|source| Error::Io {
                    path: path.to_path_buf(),
                    source,
                })?;
            }
        }
        Ok(())
    }
}

/// Builds the transition operator row by row: `row_i = gamma_i *` mean
/// responsibility vector over `n_phi_mc` next-state samples drawn from the
/// next-state kernel (its mean when a single sample is requested), then
/// truncated to the `k` largest entries and rescaled to preserve the row
/// sum. Ties in the selection break toward the lower index.
pub fn build_transition_operator(
    dataset: &Dataset,
    kernels: &KernelModel,
    policy: &Policy,
    k_sparse: usize,
    noise: &NoiseBlock,
) -> Result<SparseTransitionOperator> {
    kernels.check_dims(dataset)?;
    let n = dataset.len();
    if k_sparse < 1 || k_sparse > n {
        return Err(Error::domain(format!(
            "k_sparse {k_sparse} outside 1..={n}"
        )));
    }
    let h_next = kernels.h_next.values();
    let rows: Vec<Vec<(usize, f64)>> = dataset
        .transitions()
        .par_iter()
        .map(|t| -> Result<Vec<(usize, f64)>> {
            if t.discount == 0.0 {
                return Ok(Vec::new());
            }
            let mut eps_bar = vec![0.0; n];
            let m = noise.phi.len() as f64;
            for zeta in &noise.phi {
                let query: Vec<f64> = t
                    .next_state
                    .iter()
                    .zip(h_next)
                    .zip(zeta)
                    .map(|((sn, h), z)| sn + h * z)
                    .collect();
                let log_psi = log_state_weights(dataset, kernels, &query);
                let eps =
                    policy_responsibilities(dataset, kernels, policy, &query, &log_psi, &noise.pi)?;
                for (dst, e) in eps_bar.iter_mut().zip(&eps) {
                    *dst += e / m;
                }
            }
            Ok(truncate_row(&eps_bar, k_sparse, t.discount))
        })
        .collect::<Result<_>>()?;
    Ok(SparseTransitionOperator {
        n,
        rows,
        row_discount: dataset.discounts(),
    })
}

/// Keeps the `k` largest entries of a responsibility row and rescales them
/// so the truncated sum matches the full sum.
fn truncate_row(eps_bar: &[f64], k: usize, discount: f64) -> Vec<(usize, f64)> {
    let n = eps_bar.len();
    // The responsibilities sum to one identically; clamp away the ulp of
    // accumulation noise so the row sum never exceeds the discount.
    let total: f64 = eps_bar.iter().sum::<f64>().min(1.0);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| {
        eps_bar[b]
            .partial_cmp(&eps_bar[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let kept = &order[..k.min(n)];
    let kept_sum: f64 = kept.iter().map(|&j| eps_bar[j]).sum();
    if kept_sum <= 0.0 {
        return Vec::new();
    }
    let scale = discount * total / kept_sum;
    let mut row: Vec<(usize, f64)> = kept
        .iter()
        .filter(|&&j| eps_bar[j] > 0.0)
        .map(|&j| (j, eps_bar[j] * scale))
        .collect();
    row.sort_unstable_by_key(|(j, _)| *j);
    // Re-summing in any order must stay at or below the discount; shave
    // off accumulated rounding until it does.
    let target = discount * total;
    for _ in 0..8 {
        let row_sum: f64 = row.iter().map(|(_, v)| v).sum();
        if row_sum <= target {
            break;
        }
        let fix = target / row_sum * (1.0 - f64::EPSILON * row.len() as f64);
        for (_, v) in row.iter_mut() {
            *v *= fix;
        }
    }
    row
}

/// Statistics of one conjugate-gradient solve.
#[derive(Debug, Clone, Copy)]
pub struct CgStats {
    pub iterations: usize,
    /// Final relative residual on the original (nonsymmetric) system.
    pub residual: f64,
}

/// A linear operator with its transpose, the interface the solver needs
/// for normal-equation conjugate gradient.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]);
}

/// `Lambda = I - P`.
pub struct LambdaOperator<'a> {
    pub op: &'a SparseTransitionOperator,
}

impl LinearOperator for LambdaOperator<'_> {
    fn dim(&self) -> usize {
        self.op.n()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.op.apply(x, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi - *o;
        }
    }

    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        self.op.apply_transpose(x, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi - *o;
        }
    }
}

/// Solves `A x = rhs` for a square nonsymmetric operator by conjugate
/// gradient on the normal equations (CGNR). Convergence is declared on the
/// original system: `||rhs - A x|| <= tol * ||rhs||`.
pub fn cg_solve(
    operator: &dyn LinearOperator,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgStats)> {
    let n = operator.dim();
    if rhs.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: rhs.len(),
            context: "cg right-hand side",
        });
    }
    if tol <= 0.0 {
        return Err(Error::Solver("cg tolerance must be positive".into()));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let b_norm = norm(rhs);
    if b_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            CgStats {
                iterations: 0,
                residual: 0.0,
            },
        ));
    }
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z = vec![0.0; n];
    operator.apply_transpose(&r, &mut z);
    let mut p = z.clone();
    let mut zz: f64 = z.iter().map(|v| v * v).sum();
    let mut w = vec![0.0; n];
    let mut iterations = 0;
    let mut residual = 1.0;
    for _ in 0..max_iter {
        iterations += 1;
        operator.apply(&p, &mut w);
        let ww: f64 = w.iter().map(|v| v * v).sum();
        if ww == 0.0 {
            break;
        }
        let alpha = zz / ww;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * w[i];
        }
        residual = norm(&r) / b_norm;
        if !residual.is_finite() {
            return Err(Error::Solver("non-finite residual in cg".into()));
        }
        if residual <= tol {
            break;
        }
        operator.apply_transpose(&r, &mut z);
        let zz_new: f64 = z.iter().map(|v| v * v).sum();
        let beta = zz_new / zz;
        zz = zz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("non-finite solution in cg".into()));
    }
    Ok((
        x,
        CgStats {
            iterations,
            residual,
        },
    ))
}

/// Solver configuration for [`solve_npbe`].
#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub k_sparse: usize,
    pub cg_tol: f64,
    /// Defaults to `10 * n` when unset.
    pub cg_max_iter: Option<usize>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            k_sparse: usize::MAX,
            cg_tol: 1e-10,
            cg_max_iter: None,
        }
    }
}

/// Solution of the nonparametric Bellman equation on a dataset.
#[derive(Debug, Clone)]
pub struct NpbeSolution {
    /// Value weights: `V(s) = eps_pi(s) . q`.
    pub q: Vec<f64>,
    /// State-distribution weights: `(I - P)^T mu = eps0`.
    pub mu: Vec<f64>,
    /// Initial-state responsibilities.
    pub eps0: ResponsibilityVector,
    pub cg_q: CgStats,
    pub cg_mu: CgStats,
    /// The operator the solves were performed with.
    pub operator: SparseTransitionOperator,
}

impl NpbeSolution {
    /// Estimated return `J = eps0 . q`.
    pub fn j_hat(&self) -> f64 {
        self.eps0.dot(&self.q)
    }
}

/// Builds the operator, the initial responsibilities and solves both
/// linear systems.
pub fn solve_npbe(
    dataset: &Dataset,
    kernels: &KernelModel,
    policy: &Policy,
    config: &SolveConfig,
    noise: &NoiseBlock,
) -> Result<NpbeSolution> {
    let n = dataset.len();
    let k = config.k_sparse.min(n);
    let operator = build_transition_operator(dataset, kernels, policy, k, noise)?;
    let eps0 = initial_responsibilities(dataset, kernels, policy, noise)?;
    let max_iter = config.cg_max_iter.unwrap_or(10 * n.max(10));
    let lambda = LambdaOperator { op: &operator };
    let (q, cg_q) = cg_solve(&lambda, &dataset.rewards(), config.cg_tol, max_iter)?;
    let (mu, cg_mu) = cg_solve_transpose(&lambda, eps0.weights(), config.cg_tol, max_iter)?;
    Ok(NpbeSolution {
        q,
        mu,
        eps0,
        cg_q,
        cg_mu,
        operator,
    })
}

/// Solves `A^T x = rhs` by flipping the operator.
pub fn cg_solve_transpose(
    operator: &dyn LinearOperator,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgStats)> {
    struct Flip<'a>(&'a dyn LinearOperator);
    impl LinearOperator for Flip<'_> {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn apply(&self, x: &[f64], out: &mut [f64]) {
            self.0.apply_transpose(x, out);
        }
        fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
            self.0.apply(x, out);
        }
    }
    cg_solve(&Flip(operator), rhs, tol, max_iter)
}

/// `V(s) = eps_pi(s) . q`.
pub fn value_at(
    sol: &NpbeSolution,
    dataset: &Dataset,
    kernels: &KernelModel,
    policy: &Policy,
    s: &[f64],
    noise: &NoiseBlock,
) -> Result<f64> {
    Ok(responsibilities_at(dataset, kernels, policy, s, noise)?.dot(&sol.q))
}

/// `Q(s, a) = eps(s, a) . q`.
pub fn q_value_at(
    sol: &NpbeSolution,
    dataset: &Dataset,
    kernels: &KernelModel,
    s: &[f64],
    a: &[f64],
) -> Result<f64> {
    Ok(state_action_responsibilities(dataset, kernels, s, a)?.dot(&sol.q))
}

/// Stationary-distribution estimate `mu0(s) + sum_i gamma_i phi_i(s) mu_i`
/// with the caller supplying the initial-state density.
pub fn state_distribution_at(
    sol: &NpbeSolution,
    dataset: &Dataset,
    kernels: &KernelModel,
    mu0_density: &dyn Fn(&[f64]) -> f64,
    s: &[f64],
) -> Result<f64> {
    let h = kernels.h_next.values();
    let log_norm = log_norm_const(h);
    let mut acc = mu0_density(s);
    for (i, t) in dataset.transitions().iter().enumerate() {
        if t.discount == 0.0 || sol.mu[i] == 0.0 {
            continue;
        }
        let phi = (log_weight(s, &t.next_state, h) + log_norm).exp();
        acc += t.discount * phi * sol.mu[i];
    }
    Ok(acc)
}
