//! Declarative experiment configuration: one TOML file per run, schema
//! validated with unknown keys rejected. Flags override file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::cartpole::CartpoleEnv;
use crate::envs::mountaincar::MountainCarEnv;
use crate::envs::pendulum::{PendulumEnv, PendulumReward};
use crate::error::{Error, Result};
use crate::kernel::{
    apply_h_factor, log_grid, select_bandwidths_cv_relative, Bandwidths, KernelModel,
};
use crate::policy::{Policy, PolicyKind, PolicyLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Pendulum,
    Cartpole,
    Mountaincar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    pub policy: PolicyConfig,
    pub nopg: NopgSection,
    #[serde(default)]
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "source", rename_all = "kebab-case")]
pub enum DataConfig {
    /// Cartesian state-action grid (pendulum only).
    Grid {
        n_omega: usize,
        n_omega_dot: usize,
        n_torque: usize,
    },
    /// Pre-recorded transition CSV.
    File { path: PathBuf },
    /// Uniform-random behavior rollouts.
    Rollout { episodes: usize, max_steps: usize },
    /// Demonstration trajectories (JSONL episodes).
    Demos { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub cv_folds: usize,
    pub cv_grid_log10_lo: f64,
    pub cv_grid_log10_hi: f64,
    pub cv_grid_points: usize,
    pub state_h_factor: f64,
    pub action_h_factor: f64,
    pub next_h_factor: f64,
    /// Explicit bandwidths bypassing cross-validation.
    #[serde(default)]
    pub fixed: Option<FixedBandwidths>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedBandwidths {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next: Vec<f64>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            cv_folds: 5,
            cv_grid_log10_lo: -3.0,
            cv_grid_log10_hi: 1.0,
            cv_grid_points: 25,
            state_h_factor: 1.0,
            action_h_factor: 1.0,
            next_h_factor: 1.0,
            fixed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    pub action_scale: f64,
}

fn default_hidden() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NopgSection {
    pub gamma: f64,
    pub k_sparse: usize,
    #[serde(default = "default_one")]
    pub n_pi_mc: usize,
    #[serde(default = "default_one")]
    pub n_phi_mc: usize,
    #[serde(default = "default_one")]
    pub n_mu0_mc: usize,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps_adam")]
    pub eps_adam: f64,
    pub policy_updates: usize,
    #[serde(default = "default_cg_tol")]
    pub cg_tol: f64,
    #[serde(default)]
    pub cg_max_iter: Option<usize>,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub std_decay: Option<(f64, f64)>,
    /// Checkpoint every this many updates (0 disables intermediate
    /// checkpoints).
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_one() -> usize {
    1
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps_adam() -> f64 {
    1e-8
}
fn default_cg_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub episodes: usize,
    pub steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            episodes: 10,
            steps: 500,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.data, DataConfig::Grid { .. }) && self.task != Task::Pendulum {
            return Err(Error::config("grid data is only defined for the pendulum task"));
        }
        self.nopg_config(self.seed).validate()?;
        if !(0.0..1.0).contains(&self.nopg.gamma) {
            return Err(Error::config("gamma must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn nopg_config(&self, seed: u64) -> crate::nopg::NopgConfig {
        crate::nopg::NopgConfig {
            k_sparse: self.nopg.k_sparse,
            n_pi_mc: self.nopg.n_pi_mc,
            n_phi_mc: self.nopg.n_phi_mc,
            n_mu0_mc: self.nopg.n_mu0_mc,
            learning_rate: self.nopg.learning_rate,
            beta1: self.nopg.beta1,
            beta2: self.nopg.beta2,
            eps_adam: self.nopg.eps_adam,
            policy_updates: self.nopg.policy_updates,
            cg_tol: self.nopg.cg_tol,
            cg_max_iter: self.nopg.cg_max_iter,
            seed,
            grad_clip: self.nopg.grad_clip,
            std_decay: self.nopg.std_decay,
        }
    }

    pub fn pendulum_env(&self) -> PendulumEnv {
        PendulumEnv {
            gamma: self.nopg.gamma,
            reward: PendulumReward::Quadratic,
            ..PendulumEnv::default()
        }
    }

    pub fn cartpole_env(&self) -> CartpoleEnv {
        CartpoleEnv {
            gamma: self.nopg.gamma,
            ..CartpoleEnv::default()
        }
    }

    pub fn mountaincar_env(&self) -> MountainCarEnv {
        MountainCarEnv {
            gamma: self.nopg.gamma,
            ..MountainCarEnv::default()
        }
    }

    pub fn initial_policy(&self, d_s: usize, d_a: usize, seed: u64) -> Result<Policy> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x90);
        Policy::init_random(
            PolicyLayout {
                kind: self.policy.kind,
                d_s,
                d_a,
                hidden: self.policy.hidden,
                action_scale: self.policy.action_scale,
                sigma: vec![],
                fixed_std: None,
            },
            &mut rng,
        )
    }

    /// Two-step bandwidth selection: per-dimension cross-validation on a
    /// sigma-relative grid, then the empirical h-factors.
    pub fn select_kernels(&self, dataset: &crate::dataset::Dataset, seed: u64) -> Result<KernelModel> {
        if let Some(fixed) = &self.kernel.fixed {
            return Ok(KernelModel::new(
                Bandwidths::new(fixed.state.clone())?,
                Bandwidths::new(fixed.action.clone())?,
                Bandwidths::new(fixed.next.clone())?,
            ));
        }
        let grid = log_grid(
            self.kernel.cv_grid_log10_lo,
            self.kernel.cv_grid_log10_hi,
            self.kernel.cv_grid_points,
        );
        let state_cols: Vec<Vec<f64>> =
            (0..dataset.d_s()).map(|d| dataset.state_column(d)).collect();
        let action_cols: Vec<Vec<f64>> =
            (0..dataset.d_a()).map(|d| dataset.action_column(d)).collect();
        let next_cols: Vec<Vec<f64>> = (0..dataset.d_s())
            .map(|d| dataset.next_state_column(d))
            .collect();
        let h_state =
            select_bandwidths_cv_relative(&state_cols, self.kernel.cv_folds, &grid, seed)?;
        let h_action =
            select_bandwidths_cv_relative(&action_cols, self.kernel.cv_folds, &grid, seed ^ 1)?;
        let h_next =
            select_bandwidths_cv_relative(&next_cols, self.kernel.cv_folds, &grid, seed ^ 2)?;
        Ok(KernelModel::new(
            apply_h_factor(&h_state.bandwidths, &[self.kernel.state_h_factor])?,
            apply_h_factor(&h_action.bandwidths, &[self.kernel.action_h_factor])?,
            apply_h_factor(&h_next.bandwidths, &[self.kernel.next_h_factor])?,
        ))
    }
}
