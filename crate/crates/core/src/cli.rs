//! Implementations behind the command-line interface. Each command is
//! reproducible from its arguments and seed, and writes its resolved
//! configuration next to its outputs.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    bootstrap_percentile_ci, run_gradient_study, Estimator, GradientStudyConfig,
};
use crate::baselines::TrajectoryDataset;
use crate::config::{DataConfig, RunConfig, Task};
use crate::dataset::{load_dataset, save_dataset, Dataset};
use crate::envs::datagen::{gen_lqg_rollouts, gen_rollout_dataset, gen_uniform_grid, UniformRandomPolicy};
use crate::envs::lqg::{mix_behavior_policy, LqgSpec};
use crate::envs::mountaincar::scripted_demo_episode;
use crate::envs::pendulum::wrap_angle;
use crate::envs::{rollout_policy, Environment};
use crate::error::{Error, Result};
use crate::kernel::Bandwidths;
use crate::nopg::{train, write_history_csv};
use crate::npbe::InitialStateSpec;
use crate::policy::Policy;

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `gen-data` targets.
#[derive(Debug, Clone)]
pub enum GenDataTask {
    PendulumGrid {
        n_omega: usize,
        n_omega_dot: usize,
        n_torque: usize,
    },
    PendulumRandom {
        episodes: usize,
        max_steps: usize,
    },
    CartpoleRandom {
        episodes: usize,
        max_steps: usize,
    },
    MountaincarDemos {
        episodes: usize,
        max_steps: usize,
    },
    Lqg {
        alpha: f64,
        episodes: usize,
        steps: usize,
    },
}

#[derive(Debug)]
pub struct GenDataOutputs {
    pub rows: usize,
    pub episodes: usize,
}

pub fn cmd_gen_data(
    task: &GenDataTask,
    gamma: f64,
    seed: u64,
    out_csv: Option<&Path>,
    out_jsonl: Option<&Path>,
) -> Result<GenDataOutputs> {
    let (dataset, trajs): (Option<Dataset>, Option<TrajectoryDataset>) = match task {
        GenDataTask::PendulumGrid {
            n_omega,
            n_omega_dot,
            n_torque,
        } => {
            let env = crate::envs::pendulum::PendulumEnv {
                gamma,
                ..Default::default()
            };
            (
                Some(gen_uniform_grid(&env, *n_omega, *n_omega_dot, *n_torque)?),
                None,
            )
        }
        GenDataTask::PendulumRandom {
            episodes,
            max_steps,
        } => {
            let env = crate::envs::pendulum::PendulumEnv {
                gamma,
                ..Default::default()
            };
            let behavior = UniformRandomPolicy {
                low: env.action_low(),
                high: env.action_high(),
            };
            let (d, t) = gen_rollout_dataset(&env, &behavior, *episodes, *max_steps, seed)?;
            (Some(d), Some(t))
        }
        GenDataTask::CartpoleRandom {
            episodes,
            max_steps,
        } => {
            let env = crate::envs::cartpole::CartpoleEnv {
                gamma,
                ..Default::default()
            };
            let behavior = UniformRandomPolicy {
                low: env.action_low(),
                high: env.action_high(),
            };
            let (d, t) = gen_rollout_dataset(&env, &behavior, *episodes, *max_steps, seed)?;
            (Some(d), Some(t))
        }
        GenDataTask::MountaincarDemos {
            episodes,
            max_steps,
        } => {
            let env = crate::envs::mountaincar::MountainCarEnv {
                gamma,
                ..Default::default()
            };
            let trajs = TrajectoryDataset {
                episodes: (0..*episodes)
                    .map(|i| {
                        scripted_demo_episode(&env, 0.55, 0.05, *max_steps, seed + i as u64)
                    })
                    .collect(),
            };
            let d = trajs.to_dataset(2, 1)?;
            (Some(d), Some(trajs))
        }
        GenDataTask::Lqg {
            alpha,
            episodes,
            steps,
        } => {
            let mut lqg = LqgSpec::benchmark_2d();
            lqg.gamma = gamma;
            let behavior = mix_behavior_policy(&lqg, &[-0.6, -0.8], &[-0.35, -0.5], *alpha)?;
            let (d, t) = gen_lqg_rollouts(&lqg, &behavior, *episodes, *steps, seed)?;
            (Some(d), Some(t))
        }
    };
    let rows = dataset.as_ref().map(|d| d.len()).unwrap_or(0);
    let n_episodes = trajs.as_ref().map(|t| t.episodes.len()).unwrap_or(0);
    if let (Some(d), Some(path)) = (&dataset, out_csv) {
        save_dataset(d, path)?;
    }
    if let (Some(t), Some(path)) = (&trajs, out_jsonl) {
        t.save_jsonl(path)?;
    }
    Ok(GenDataOutputs {
        rows,
        episodes: n_episodes,
    })
}

fn build_env(config: &RunConfig) -> Box<dyn Environment> {
    match config.task {
        Task::Pendulum => Box::new(config.pendulum_env()),
        Task::Cartpole => Box::new(config.cartpole_env()),
        Task::Mountaincar => Box::new(config.mountaincar_env()),
    }
}

fn build_dataset(config: &RunConfig, env: &dyn Environment, seed: u64) -> Result<Dataset> {
    match &config.data {
        DataConfig::Grid {
            n_omega,
            n_omega_dot,
            n_torque,
        } => gen_uniform_grid(&config.pendulum_env(), *n_omega, *n_omega_dot, *n_torque),
        DataConfig::File { path } => load_dataset(path, env.d_s(), env.d_a()),
        DataConfig::Rollout {
            episodes,
            max_steps,
        } => {
            let behavior = UniformRandomPolicy {
                low: env.action_low(),
                high: env.action_high(),
            };
            Ok(gen_rollout_dataset(env, &behavior, *episodes, *max_steps, seed)?.0)
        }
        DataConfig::Demos { path } => {
            TrajectoryDataset::load_jsonl(path)?.to_dataset(env.d_s(), env.d_a())
        }
    }
}

#[derive(Debug)]
pub struct TrainOutputs {
    pub policy_path: PathBuf,
    pub history_path: PathBuf,
    pub final_j_hat: f64,
}

pub fn cmd_train(config_path: &Path, seed_override: Option<u64>) -> Result<TrainOutputs> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    ensure_dir(&config.output_dir)?;
    config.save(&config.output_dir.join("config.toml"))?;

    let env = build_env(&config);
    let dataset = build_dataset(&config, env.as_ref(), config.seed)?;
    let kernels = config.select_kernels(&dataset, config.seed)?;
    let policy0 = config.initial_policy(env.d_s(), env.d_a(), config.seed)?;
    let mu0 = env.mu0();
    let nopg_config = config.nopg_config(config.seed);

    let ckpt_every = config.nopg.checkpoint_every;
    let out_dir = config.output_dir.clone();
    let mut checkpoint_err: Option<Error> = None;
    let mut callback = |iter: usize, policy: &Policy, _record: &crate::nopg::IterRecord| {
        if ckpt_every > 0 && (iter + 1).is_multiple_of(ckpt_every) && checkpoint_err.is_none() {
            let path = out_dir.join(format!("policy_{:06}.json", iter + 1));
            if let Err(e) = policy.save(&path) {
                checkpoint_err = Some(e);
            }
        }
    };
    let (policy, history) = train(
        &dataset,
        &kernels,
        &policy0,
        &mu0,
        &nopg_config,
        Some(&mut callback),
    )?;
    if let Some(e) = checkpoint_err {
        return Err(e);
    }

    let policy_path = config.output_dir.join("policy.json");
    policy.save(&policy_path)?;
    let history_path = config.output_dir.join("history.csv");
    write_history_csv(&history, &history_path)?;
    let final_j_hat = history.last().map(|r| r.j_hat).unwrap_or(f64::NAN);
    Ok(TrainOutputs {
        policy_path,
        history_path,
        final_j_hat,
    })
}

#[derive(Debug)]
pub struct EvalOutputs {
    pub mean_return: f64,
    pub ci: (f64, f64),
    pub metrics: Vec<f64>,
}

/// Task-specific success metric of one rollout: mean upright cosine over
/// the last 100 steps for the pendulum, steps-to-goal for the mountain
/// car (budget when unreached), mean reward per step otherwise.
fn rollout_metric(task: Task, rollout: &crate::envs::Rollout, budget: usize) -> f64 {
    match task {
        Task::Pendulum => {
            let tail = rollout.states.len().saturating_sub(100);
            let cos: Vec<f64> = rollout.states[tail..]
                .iter()
                .map(|s| wrap_angle(s[0]).cos())
                .collect();
            cos.iter().sum::<f64>() / cos.len() as f64
        }
        Task::Mountaincar => {
            if rollout.terminated {
                rollout.steps as f64
            } else {
                budget as f64
            }
        }
        Task::Cartpole => rollout.total_reward / rollout.steps.max(1) as f64,
    }
}

pub fn cmd_eval(
    task: Task,
    policy_path: &Path,
    episodes: usize,
    steps: usize,
    gamma: f64,
    seed: u64,
    out_csv: &Path,
) -> Result<EvalOutputs> {
    let policy = Policy::load(policy_path)?;
    let env: Box<dyn Environment> = match task {
        Task::Pendulum => Box::new(crate::envs::pendulum::PendulumEnv {
            gamma,
            ..Default::default()
        }),
        Task::Cartpole => Box::new(crate::envs::cartpole::CartpoleEnv {
            gamma,
            ..Default::default()
        }),
        Task::Mountaincar => Box::new(crate::envs::mountaincar::MountainCarEnv {
            gamma,
            ..Default::default()
        }),
    };
    let stop_at_terminal = matches!(task, Task::Mountaincar);
    let mut rows = Vec::new();
    let mut returns = Vec::new();
    let mut metrics = Vec::new();
    for episode in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(episode as u64));
        let rollout = rollout_policy(
            env.as_ref(),
            &policy,
            &env.eval_start(),
            steps,
            stop_at_terminal,
            &mut rng,
        )?;
        let metric = rollout_metric(task, &rollout, steps);
        rows.push(format!(
            "{episode},{},{},{}",
            rollout.total_reward, rollout.steps, metric
        ));
        returns.push(rollout.total_reward);
        metrics.push(metric);
    }
    let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
    let ci = bootstrap_percentile_ci(&returns, 2000, 0.95, seed ^ 0xe7a1);
    let mut text = String::from("episode,return,steps,metric\n");
    for row in &rows {
        text.push_str(row);
        text.push('\n');
    }
    text.push_str(&format!("summary,{mean_return},{},{}\n", ci.0, ci.1));
    write_text(out_csv, &text)?;
    Ok(EvalOutputs {
        mean_return,
        ci,
        metrics,
    })
}

pub fn cmd_grad_study(
    config: &GradientStudyConfig,
    out_dir: &Path,
) -> Result<crate::analysis::GradientReport> {
    ensure_dir(out_dir)?;
    let lqg = LqgSpec::benchmark_2d();
    let resolved = serde_json::to_string_pretty(config)
        .map_err(|e| Error::Config(e.to_string()))?;
    write_text(&out_dir.join("study_config.json"), &resolved)?;
    let report = run_gradient_study(&lqg, config)?;
    report.write_csv(&out_dir.join("report.csv"))?;
    Ok(report)
}

pub fn cmd_bandwidth(
    kappas: &[f64],
    n: usize,
    alpha: f64,
    seeds: usize,
    master_seed: u64,
    out_dir: &Path,
) -> Result<crate::analysis::GradientReport> {
    let config = GradientStudyConfig {
        estimators: vec![Estimator::NopgD],
        sizes: vec![n],
        alphas: vec![alpha],
        seeds,
        kappas: Some(kappas.to_vec()),
        master_seed,
        ..GradientStudyConfig::default()
    };
    cmd_grad_study(&config, out_dir)
}

pub struct BoundArgs {
    pub l_f: f64,
    pub l_beta: f64,
    pub h: Vec<f64>,
    /// Present for the value bound: `(l_v, h_phi, gamma_c)` with `h`
    /// interpreted as the state kernel and `h_action` as the action one.
    pub value: Option<(f64, Vec<f64>, f64, Vec<f64>)>,
}

pub fn cmd_bounds(args: &BoundArgs, out_csv: Option<&Path>) -> Result<f64> {
    let bound = match &args.value {
        None => crate::analysis::a_bias_bound(
            args.l_f,
            args.l_beta,
            &Bandwidths::new(args.h.clone())?,
        ),
        Some((l_v, h_phi, gamma_c, h_action)) => crate::analysis::value_bias_bound(
            args.l_f,
            args.l_beta,
            &Bandwidths::new(args.h.clone())?,
            &Bandwidths::new(h_action.clone())?,
            *l_v,
            &Bandwidths::new(h_phi.clone())?,
            *gamma_c,
        ),
    };
    if let Some(path) = out_csv {
        let kind = if args.value.is_some() { "value" } else { "regression" };
        write_text(path, &format!("kind,bound\n{kind},{bound}\n"))?;
    }
    Ok(bound)
}

/// The initial-state density used when querying the stationary
/// distribution from the CLI; fixed starts get a kernel bump at the start
/// state, samplers contribute nothing beyond the transition term.
pub fn mu0_density_for(
    mu0: &InitialStateSpec,
    kernels: &crate::kernel::KernelModel,
) -> impl Fn(&[f64]) -> f64 {
    let h = kernels.h_state.clone();
    let mu0 = mu0.clone();
    move |s: &[f64]| match &mu0 {
        InitialStateSpec::Fixed(s0) => {
            crate::kernel::gaussian_product_eval(s, s0, &h).unwrap_or(0.0)
        }
        InitialStateSpec::Sampler(_) => 0.0,
    }
}
