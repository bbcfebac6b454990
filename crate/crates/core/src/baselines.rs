//! Comparison gradient estimators: G(PO)MDP with normalized path-wise
//! importance sampling (optionally with generalized baselines), and the
//! semi-gradient deterministic policy gradient with an oracle Q-function
//! on the linear-quadratic task.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::envs::lqg::{q_action_gradient, riccati_value, LqgSpec};
use crate::error::{Error, Result};
use crate::nopg::GradientVector;
use crate::policy::Policy;

/// One step of a recorded episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajStep {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub gamma: f64,
    /// Behavior-policy log density of the recorded action.
    pub log_pb: f64,
}

/// One episode with its terminal next state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Episode {
    pub steps: Vec<TrajStep>,
    pub terminal_state: Vec<f64>,
}

/// A trajectory-based dataset, required by path-wise importance sampling.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryDataset {
    pub episodes: Vec<Episode>,
}

impl TrajectoryDataset {
    pub fn n_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.steps.len()).sum()
    }

    pub fn max_len(&self) -> usize {
        self.episodes.iter().map(|e| e.steps.len()).max().unwrap_or(0)
    }

    /// Flattens episodes into a transition dataset.
    pub fn to_dataset(&self, d_s: usize, d_a: usize) -> Result<Dataset> {
        let mut transitions = Vec::with_capacity(self.n_steps());
        for ep in &self.episodes {
            for (t, step) in ep.steps.iter().enumerate() {
                let next_state = if t + 1 < ep.steps.len() {
                    ep.steps[t + 1].s.clone()
                } else {
                    ep.terminal_state.clone()
                };
                transitions.push(crate::dataset::Transition {
                    state: step.s.clone(),
                    action: step.a.clone(),
                    reward: step.r,
                    next_state,
                    discount: step.gamma,
                });
            }
        }
        Dataset::new(transitions, d_s, d_a)
    }

    /// Writes one episode per line as JSON.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut w = std::io::BufWriter::new(file);
        for ep in &self.episodes {
            let line = serde_json::to_string(ep)
                .map_err(|e| Error::domain(format!("episode encode: {e}")))?;
            writeln!(w, "{line}").map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
        }
        Ok(())
    }

    pub fn load_jsonl(path: &Path) -> Result<TrajectoryDataset> {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let reader = std::io::BufReader::new(file);
        let mut episodes = Vec::new();
        for (line_no, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let ep: Episode = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: line_no + 1,
                msg: e.to_string(),
            })?;
            if ep.steps.iter().any(|s| !s.log_pb.is_finite()) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no + 1,
                    msg: "non-finite behavior log-prob".into(),
                });
            }
            episodes.push(ep);
        }
        Ok(TrajectoryDataset { episodes })
    }
}

/// Diagnostics of a normalized importance-sampling estimate.
#[derive(Debug, Clone, Default)]
pub struct IsDiagnostics {
    /// Time steps at which every trajectory weight vanished; those steps
    /// contribute zero.
    pub degenerate_steps: Vec<usize>,
}

/// G(PO)MDP with per-time-step self-normalized importance weights.
///
/// At every time step the path weights `rho_t^k` are normalized across
/// trajectories to sum to one; the step estimate is the weighted sum of
/// `gammabar_t r_t` times the score sum up to `t`.
pub fn gpomdp_nis_gradient(
    trajs: &TrajectoryDataset,
    target: &Policy,
) -> Result<(GradientVector, IsDiagnostics)> {
    gpomdp_gradient_impl(trajs, target, false)
}

/// G(PO)MDP with normalized weights and the per-component
/// variance-minimizing baseline `b_t[c] = E[w^2 g_c^2 r] / E[w^2 g_c^2]`
/// estimated from the same data.
pub fn gpomdp_bn_gradient(
    trajs: &TrajectoryDataset,
    target: &Policy,
) -> Result<(GradientVector, IsDiagnostics)> {
    gpomdp_gradient_impl(trajs, target, true)
}

fn gpomdp_gradient_impl(
    trajs: &TrajectoryDataset,
    target: &Policy,
    with_baseline: bool,
) -> Result<(GradientVector, IsDiagnostics)> {
    if !target.is_stochastic() {
        return Err(Error::domain(
            "importance-sampled gradients need a stochastic target policy",
        ));
    }
    if trajs.episodes.is_empty() {
        return Err(Error::domain("empty trajectory dataset"));
    }
    let n_params = target.n_params();
    let n_ep = trajs.episodes.len();
    let horizon = trajs.max_len();

    // Per-episode cumulative quantities.
    // log_rho[k][t]: log importance weight of trajectory k up to step t.
    // score[k][t]: sum of score-function gradients up to step t.
    // disc_r[k][t]: gammabar_t * r_t.
    let mut log_rho = vec![vec![f64::NEG_INFINITY; horizon]; n_ep];
    let mut scores: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_ep];
    let mut disc_r = vec![vec![0.0; horizon]; n_ep];
    let mut j_hat = 0.0;
    for (k, ep) in trajs.episodes.iter().enumerate() {
        let mut acc_log_rho = 0.0;
        let mut acc_score = vec![0.0; n_params];
        let mut gamma_bar = 1.0;
        scores[k].reserve(ep.steps.len());
        for (t, step) in ep.steps.iter().enumerate() {
            acc_log_rho += target.log_prob(&step.s, &step.a)? - step.log_pb;
            let g = target.log_prob_grad(&step.s, &step.a)?;
            for (dst, gi) in acc_score.iter_mut().zip(&g) {
                *dst += gi;
            }
            log_rho[k][t] = acc_log_rho;
            scores[k].push(acc_score.clone());
            disc_r[k][t] = gamma_bar * step.r;
            gamma_bar *= step.gamma;
        }
        j_hat += ep
            .steps
            .iter()
            .scan(1.0, |d, s| {
                let v = *d * s.r;
                *d *= s.gamma;
                Some(v)
            })
            .sum::<f64>()
            / n_ep as f64;
    }

    let mut g = vec![0.0; n_params];
    let mut diags = IsDiagnostics::default();
    for t in 0..horizon {
        // Normalize the path weights across trajectories alive at t.
        let alive: Vec<usize> = (0..n_ep)
            .filter(|&k| t < trajs.episodes[k].steps.len())
            .collect();
        if alive.is_empty() {
            continue;
        }
        let max_log = alive
            .iter()
            .map(|&k| log_rho[k][t])
            .fold(f64::NEG_INFINITY, f64::max);
        if !max_log.is_finite() {
            diags.degenerate_steps.push(t);
            continue;
        }
        let weights: Vec<f64> = alive
            .iter()
            .map(|&k| (log_rho[k][t] - max_log).exp())
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            diags.degenerate_steps.push(t);
            continue;
        }
        let norm: Vec<f64> = weights.iter().map(|w| w / total).collect();

        if with_baseline {
            // b_t[c] = sum_k w_k^2 g_{k,c}^2 r_k / sum_k w_k^2 g_{k,c}^2.
            let mut num = vec![0.0; n_params];
            let mut den = vec![0.0; n_params];
            for (idx, &k) in alive.iter().enumerate() {
                let w2 = norm[idx] * norm[idx];
                for c in 0..n_params {
                    let g2 = scores[k][t][c] * scores[k][t][c];
                    num[c] += w2 * g2 * disc_r[k][t];
                    den[c] += w2 * g2;
                }
            }
            for (idx, &k) in alive.iter().enumerate() {
                for c in 0..n_params {
                    let b = if den[c] > 0.0 { num[c] / den[c] } else { 0.0 };
                    g[c] += norm[idx] * scores[k][t][c] * (disc_r[k][t] - b);
                }
            }
        } else {
            for (idx, &k) in alive.iter().enumerate() {
                for c in 0..n_params {
                    g[c] += norm[idx] * disc_r[k][t] * scores[k][t][c];
                }
            }
        }
    }
    Ok((GradientVector { g, j_hat }, diags))
}

/// Offline deterministic policy gradient with the closed-form Q oracle:
/// `(1/n) sum_i dQ/da|_{a=pi(s_i)} dpi/dtheta(s_i)` under the behavior
/// state distribution. The derivative of Q with respect to the policy
/// parameters inside Q is dropped, which makes this the semi-gradient.
pub fn dpg_oracle_q_gradient(
    dataset: &Dataset,
    lqg: &LqgSpec,
    policy: &Policy,
) -> Result<GradientVector> {
    if policy.is_stochastic() {
        return Err(Error::domain("dpg oracle gradient needs a deterministic policy"));
    }
    if dataset.d_s() != lqg.d_s() || dataset.d_a() != lqg.d_a() {
        return Err(Error::Dimension {
            expected: lqg.d_s(),
            got: dataset.d_s(),
            context: "dpg dataset dimensions",
        });
    }
    let rv = riccati_value(lqg, &policy.theta)?;
    let n = dataset.len() as f64;
    let mut g = vec![0.0; policy.n_params()];
    let mut j = 0.0;
    for t in dataset.transitions() {
        let a = policy.mean(&t.state)?;
        let dq_da = q_action_gradient(lqg, &rv, &t.state, &a);
        let contrib = policy.vjp(&t.state, &dq_da)?;
        for (dst, c) in g.iter_mut().zip(&contrib) {
            *dst += c / n;
        }
        j += crate::envs::lqg::q_from_value(lqg, &rv, &t.state, &a) / n;
    }
    Ok(GradientVector { g, j_hat: j })
}
