use std::path::PathBuf;

use clap::{Parser, Subcommand};

use nopg::analysis::{Estimator, GradientStudyConfig};
use nopg::cli;
use nopg::config::Task;

#[derive(Parser)]
#[command(name = "nopg", about = "Offline policy optimization with nonparametric Bellman models", version)]
struct Cli {
    /// Worker threads for parallel commands (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an offline dataset.
    GenData {
        /// pendulum-grid | pendulum-random | cartpole-random |
        /// mountaincar-demos | lqg
        task: String,
        #[arg(long, default_value_t = 15)]
        nw: usize,
        #[arg(long, default_value_t = 15)]
        nwd: usize,
        #[arg(long, default_value_t = 2)]
        nu: usize,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Transition CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trajectory JSONL output path.
        #[arg(long)]
        trajs: Option<PathBuf>,
    },
    /// Train a policy offline from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a policy checkpoint.
    Eval {
        #[arg(long, value_enum)]
        task: TaskArg,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bias/variance/MSE/angle study on the linear-quadratic task.
    GradStudy {
        #[arg(long, value_delimiter = ',', default_values_t = vec![100usize, 500, 1000, 2000])]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5])]
        alphas: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        /// nopg-d | nopg-s | gpomdp-n | gpomdp-bn | dpg-q
        #[arg(long, value_delimiter = ',', default_values_t = vec!["nopg-d".to_string(), "gpomdp-n".to_string()])]
        estimators: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bandwidth sweep on the linear-quadratic task.
    Bandwidth {
        #[arg(long, value_delimiter = ',')]
        kappas: Vec<f64>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-form kernel-regression bias bounds.
    Bounds {
        #[arg(long)]
        lf: f64,
        #[arg(long, default_value_t = 0.0)]
        lbeta: f64,
        /// State-kernel bandwidths (the regression bound uses only these).
        #[arg(long, value_delimiter = ',')]
        h: Vec<f64>,
        /// Action-kernel bandwidths for the value bound.
        #[arg(long, value_delimiter = ',')]
        ha: Option<Vec<f64>>,
        /// Next-state bandwidths for the value bound.
        #[arg(long, value_delimiter = ',')]
        hphi: Option<Vec<f64>>,
        #[arg(long)]
        lv: Option<f64>,
        #[arg(long)]
        gammac: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum TaskArg {
    Pendulum,
    Cartpole,
    Mountaincar,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Pendulum => Task::Pendulum,
            TaskArg::Cartpole => Task::Cartpole,
            TaskArg::Mountaincar => Task::Mountaincar,
        }
    }
}

fn parse_estimators(names: &[String]) -> Result<Vec<Estimator>, String> {
    names
        .iter()
        .map(|n| match n.as_str() {
            "nopg-d" => Ok(Estimator::NopgD),
            "nopg-s" => Ok(Estimator::NopgS),
            "gpomdp-n" => Ok(Estimator::GpomdpN),
            "gpomdp-bn" => Ok(Estimator::GpomdpBn),
            "dpg-q" => Ok(Estimator::DpgQ),
            other => Err(format!("unknown estimator `{other}`")),
        })
        .collect()
}

fn run(cli: Cli) -> Result<(), String> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    match cli.command {
        Command::GenData {
            task,
            nw,
            nwd,
            nu,
            episodes,
            steps,
            alpha,
            gamma,
            seed,
            out,
            trajs,
        } => {
            let target = match task.as_str() {
                "pendulum-grid" => cli::GenDataTask::PendulumGrid {
                    n_omega: nw,
                    n_omega_dot: nwd,
                    n_torque: nu,
                },
                "pendulum-random" => cli::GenDataTask::PendulumRandom {
                    episodes,
                    max_steps: steps,
                },
                "cartpole-random" => cli::GenDataTask::CartpoleRandom {
                    episodes,
                    max_steps: steps,
                },
                "mountaincar-demos" => cli::GenDataTask::MountaincarDemos {
                    episodes,
                    max_steps: steps,
                },
                "lqg" => cli::GenDataTask::Lqg {
                    alpha,
                    episodes,
                    steps,
                },
                other => return Err(format!("unknown gen-data task `{other}`")),
            };
            let outputs =
                cli::cmd_gen_data(&target, gamma, seed, out.as_deref(), trajs.as_deref())
                    .map_err(|e| e.to_string())?;
            println!(
                "wrote {} transitions ({} episodes)",
                outputs.rows, outputs.episodes
            );
            Ok(())
        }
        Command::Train { config, seed } => {
            let outputs = cli::cmd_train(&config, seed).map_err(|e| e.to_string())?;
            println!(
                "trained: policy {} history {} final j_hat {:.6}",
                outputs.policy_path.display(),
                outputs.history_path.display(),
                outputs.final_j_hat
            );
            Ok(())
        }
        Command::Eval {
            task,
            policy,
            episodes,
            steps,
            gamma,
            seed,
            out,
        } => {
            let outputs =
                cli::cmd_eval(task.into(), &policy, episodes, steps, gamma, seed, &out)
                    .map_err(|e| e.to_string())?;
            println!(
                "mean return {:.4} ci [{:.4}, {:.4}]",
                outputs.mean_return, outputs.ci.0, outputs.ci.1
            );
            Ok(())
        }
        Command::GradStudy {
            sizes,
            alphas,
            seeds,
            estimators,
            seed,
            out,
        } => {
            let config = GradientStudyConfig {
                estimators: parse_estimators(&estimators)?,
                sizes,
                alphas,
                seeds,
                master_seed: seed,
                ..GradientStudyConfig::default()
            };
            let report = cli::cmd_grad_study(&config, &out).map_err(|e| e.to_string())?;
            println!(
                "wrote {} study cells to {}",
                report.cells.len(),
                out.display()
            );
            Ok(())
        }
        Command::Bandwidth {
            kappas,
            n,
            alpha,
            seeds,
            seed,
            out,
        } => {
            if kappas.is_empty() {
                return Err("bandwidth sweep needs --kappas".into());
            }
            let report = cli::cmd_bandwidth(&kappas, n, alpha, seeds, seed, &out)
                .map_err(|e| e.to_string())?;
            println!(
                "wrote {} sweep cells to {}",
                report.cells.len(),
                out.display()
            );
            Ok(())
        }
        Command::Bounds {
            lf,
            lbeta,
            h,
            ha,
            hphi,
            lv,
            gammac,
            out,
        } => {
            let value = match (lv, hphi, gammac, ha) {
                (Some(lv), Some(hphi), Some(gc), Some(ha)) => Some((lv, hphi, gc, ha)),
                (None, None, None, None) => None,
                _ => return Err("value bound needs all of --lv, --hphi, --gammac, --ha".into()),
            };
            let args = cli::BoundArgs {
                l_f: lf,
                l_beta: lbeta,
                h,
                value,
            };
            let bound = cli::cmd_bounds(&args, out.as_deref()).map_err(|e| e.to_string())?;
            println!("{bound}");
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(message) = run(cli) {
        eprintln!("error: {message}");
        std::process::exit(1);
    }
}
