//! Gradient bias/variance/MSE/direction studies against the closed-form
//! linear-quadratic ground truth, bootstrap confidence intervals and the
//! kernel-regression bias-bound calculators.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::envs::datagen::gen_lqg_rollouts;
use crate::envs::lqg::{
    linear_deterministic_policy, linear_gaussian_policy, lqg_true_gradient, mix_behavior_policy,
    LqgSpec,
};
use crate::error::{Error, Result};
use crate::kernel::{Bandwidths, KernelModel};
use crate::nopg::{nopg_gradient, GradientVector, NopgConfig};
use crate::npbe::InitialStateSpec;

/// The estimators the study can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Full gradient, deterministic target policy.
    NopgD,
    /// Full gradient, Gaussian target policy.
    NopgS,
    /// G(PO)MDP with normalized importance sampling.
    GpomdpN,
    /// G(PO)MDP with normalized weights and generalized baselines.
    GpomdpBn,
    /// Semi-gradient DPG with the closed-form Q oracle.
    DpgQ,
}

impl Estimator {
    pub fn label(&self) -> &'static str {
        match self {
            Estimator::NopgD => "nopg-d",
            Estimator::NopgS => "nopg-s",
            Estimator::GpomdpN => "gpomdp-n",
            Estimator::GpomdpBn => "gpomdp-bn",
            Estimator::DpgQ => "dpg-q",
        }
    }

    fn deterministic_target(&self) -> bool {
        matches!(self, Estimator::NopgD | Estimator::DpgQ)
    }
}

/// Fixed kernel bandwidths used by the NOPG estimators in the study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyBandwidths {
    pub state: f64,
    pub action: f64,
    pub next: f64,
}

impl Default for StudyBandwidths {
    fn default() -> Self {
        StudyBandwidths {
            state: 0.25,
            action: 0.5,
            next: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientStudyConfig {
    pub estimators: Vec<Estimator>,
    pub sizes: Vec<usize>,
    pub alphas: Vec<f64>,
    pub seeds: usize,
    /// When set, overrides all bandwidths with each isotropic value in
    /// turn (the bandwidth sweep).
    pub kappas: Option<Vec<f64>>,
    pub episode_steps: usize,
    pub theta: Vec<f64>,
    pub theta_prime: Vec<f64>,
    pub bandwidths: StudyBandwidths,
    pub k_sparse: usize,
    pub n_pi_mc: usize,
    pub n_boot: usize,
    pub ci_level: f64,
    pub master_seed: u64,
}

impl Default for GradientStudyConfig {
    fn default() -> Self {
        GradientStudyConfig {
            estimators: vec![Estimator::NopgD, Estimator::GpomdpN],
            sizes: vec![500],
            alphas: vec![0.5],
            seeds: 20,
            kappas: None,
            episode_steps: 50,
            theta: vec![-0.6, -0.8],
            theta_prime: vec![-0.35, -0.5],
            bandwidths: StudyBandwidths::default(),
            k_sparse: usize::MAX,
            n_pi_mc: 10,
            n_boot: 10_000,
            ci_level: 0.95,
            master_seed: 0,
        }
    }
}

impl GradientStudyConfig {
    fn validate(&self) -> Result<()> {
        if self.estimators.is_empty() || self.sizes.is_empty() || self.alphas.is_empty() {
            return Err(Error::config("study lists must be non-empty"));
        }
        if self.seeds < 2 {
            return Err(Error::config("variance needs seeds >= 2"));
        }
        if self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::config("alphas must lie in [0, 1]"));
        }
        if let Some(k) = &self.kappas {
            if k.is_empty() || k.iter().any(|v| *v <= 0.0) {
                return Err(Error::config("kappas must be positive"));
            }
        }
        Ok(())
    }
}

/// Aggregated statistics of one study cell.
#[derive(Debug, Clone)]
pub struct CellStats {
    pub estimator: Estimator,
    pub n: usize,
    pub alpha: f64,
    pub kappa: Option<f64>,
    pub g_star: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub bias_norm: f64,
    pub variance: f64,
    pub mse: f64,
    pub angles: Vec<f64>,
    pub angle_median: f64,
    pub angle_iqr: f64,
    pub mse_ci: (f64, f64),
    pub failures: usize,
}

#[derive(Debug, Clone, Default)]
pub struct GradientReport {
    pub cells: Vec<CellStats>,
}

impl GradientReport {
    pub fn cell(&self, estimator: Estimator, n: usize, alpha: f64) -> Option<&CellStats> {
        self.cells.iter().find(|c| {
            c.estimator == estimator && c.n == n && (c.alpha - alpha).abs() < 1e-12
        })
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
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
        writeln!(
            w,
            "estimator,n,alpha,kappa,bias_norm,variance,mse,angle_median,angle_iqr,ci_lo,ci_hi"
        )
        .map_err(io_err)?;
        for c in &self.cells {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.estimator.label(),
                c.n,
                c.alpha,
                c.kappa.map(|k| k.to_string()).unwrap_or_default(),
                c.bias_norm,
                c.variance,
                c.mse,
                c.angle_median,
                c.angle_iqr,
                c.mse_ci.0,
                c.mse_ci.1
            )
            .map_err(io_err)?;
        }
        Ok(())
    }
}

/// Runs the full study: for every cell, draw independent behavior datasets,
/// evaluate every estimator, and aggregate bias, variance, MSE and angle
/// distributions against the closed-form gradient.
pub fn run_gradient_study(lqg: &LqgSpec, config: &GradientStudyConfig) -> Result<GradientReport> {
    config.validate()?;
    let kappas: Vec<Option<f64>> = match &config.kappas {
        Some(ks) => ks.iter().map(|k| Some(*k)).collect(),
        None => vec![None],
    };
    let g_star_det = lqg_true_gradient(&lqg.deterministic(), &config.theta)?;
    let g_star_stoch = lqg_true_gradient(lqg, &config.theta)?;

    let mut jobs = Vec::new();
    for &n in &config.sizes {
        for &alpha in &config.alphas {
            for kappa in &kappas {
                jobs.push((n, alpha, *kappa));
            }
        }
    }

    let cell_results: Vec<Vec<CellStats>> = jobs
        .par_iter()
        .map(|&(n, alpha, kappa)| study_cell(lqg, config, n, alpha, kappa, &g_star_det, &g_star_stoch))
        .collect::<Result<_>>()?;

    Ok(GradientReport {
        cells: cell_results.into_iter().flatten().collect(),
    })
}

fn study_cell(
    lqg: &LqgSpec,
    config: &GradientStudyConfig,
    n: usize,
    alpha: f64,
    kappa: Option<f64>,
    g_star_det: &[f64],
    g_star_stoch: &[f64],
) -> Result<Vec<CellStats>> {
    let steps = config.episode_steps;
    let episodes = n.div_ceil(steps);
    let behavior = mix_behavior_policy(lqg, &config.theta, &config.theta_prime, alpha)?;
    let kernels = match kappa {
        Some(k) => KernelModel::isotropic(k, lqg.d_s(), lqg.d_a())?,
        None => KernelModel::new(
            Bandwidths::uniform(config.bandwidths.state, lqg.d_s())?,
            Bandwidths::uniform(config.bandwidths.action, lqg.d_a())?,
            Bandwidths::uniform(config.bandwidths.next, lqg.d_s())?,
        ),
    };

    // One dataset per seed, shared across estimators.
    type SeedRow = Vec<(Estimator, std::result::Result<Vec<f64>, String>)>;
    let per_seed: Vec<SeedRow> = (0..config.seeds)
        .into_par_iter()
        .map(|seed_idx| {
            let seed = cell_seed(config.master_seed, n, alpha, kappa, seed_idx);
            let (mut dataset, trajs) =
                gen_lqg_rollouts(lqg, &behavior, episodes, steps, seed).expect("lqg rollout");
            if dataset.len() > n {
                dataset = dataset.subsample(n, seed ^ 0x5eed).expect("subsample");
            }
            config
                .estimators
                .iter()
                .map(|est| {
                    let res = run_estimator(
                        *est, lqg, config, &kernels, &dataset, &trajs, seed,
                    )
                    .map(|g| g.g)
                    .map_err(|e| e.to_string());
                    (*est, res)
                })
                .collect()
        })
        .collect();

    let mut out = Vec::new();
    for est in &config.estimators {
        let mut samples = Vec::new();
        let mut failures = 0;
        for seed_row in &per_seed {
            match seed_row.iter().find(|(e, _)| e == est) {
                Some((_, Ok(g))) => samples.push(g.clone()),
                Some((_, Err(_))) => failures += 1,
                None => {}
            }
        }
        let g_star = if est.deterministic_target() {
            g_star_det.to_vec()
        } else {
            g_star_stoch.to_vec()
        };
        out.push(aggregate_cell(
            *est, n, alpha, kappa, g_star, samples, failures, config,
        ));
    }
    Ok(out)
}

fn cell_seed(master: u64, n: usize, alpha: f64, kappa: Option<f64>, seed_idx: usize) -> u64 {
    let mut h = master ^ 0x9e37_79b9_7f4a_7c15;
    for bits in [
        n as u64,
        alpha.to_bits(),
        kappa.unwrap_or(0.0).to_bits(),
        seed_idx as u64,
    ] {
        h ^= bits;
        h = h.wrapping_mul(0x100_0000_01b3);
        h ^= h >> 31;
    }
    h
}

fn run_estimator(
    est: Estimator,
    lqg: &LqgSpec,
    config: &GradientStudyConfig,
    kernels: &KernelModel,
    dataset: &crate::dataset::Dataset,
    trajs: &crate::baselines::TrajectoryDataset,
    seed: u64,
) -> Result<GradientVector> {
    let mu0 = InitialStateSpec::Fixed(lqg.s0.clone());
    match est {
        Estimator::NopgD => {
            let policy = linear_deterministic_policy(lqg, &config.theta)?;
            let cfg = NopgConfig {
                k_sparse: config.k_sparse.min(dataset.len()),
                n_pi_mc: 1,
                seed,
                ..NopgConfig::default()
            };
            nopg_gradient(dataset, kernels, &policy, &mu0, &cfg)
        }
        Estimator::NopgS => {
            let policy = linear_gaussian_policy(lqg, &config.theta)?;
            let cfg = NopgConfig {
                k_sparse: config.k_sparse.min(dataset.len()),
                n_pi_mc: config.n_pi_mc,
                seed,
                ..NopgConfig::default()
            };
            nopg_gradient(dataset, kernels, &policy, &mu0, &cfg)
        }
        Estimator::GpomdpN => {
            let target = linear_gaussian_policy(lqg, &config.theta)?;
            Ok(crate::baselines::gpomdp_nis_gradient(trajs, &target)?.0)
        }
        Estimator::GpomdpBn => {
            let target = linear_gaussian_policy(lqg, &config.theta)?;
            Ok(crate::baselines::gpomdp_bn_gradient(trajs, &target)?.0)
        }
        Estimator::DpgQ => {
            let policy = linear_deterministic_policy(lqg, &config.theta)?;
            crate::baselines::dpg_oracle_q_gradient(dataset, &lqg.deterministic(), &policy)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn aggregate_cell(
    estimator: Estimator,
    n: usize,
    alpha: f64,
    kappa: Option<f64>,
    g_star: Vec<f64>,
    samples: Vec<Vec<f64>>,
    failures: usize,
    config: &GradientStudyConfig,
) -> CellStats {
    let count = samples.len().max(1) as f64;
    let dim = g_star.len();
    let mut mean = vec![0.0; dim];
    for g in &samples {
        for (m, gi) in mean.iter_mut().zip(g) {
            *m += gi / count;
        }
    }
    let bias: Vec<f64> = mean.iter().zip(&g_star).map(|(m, s)| m - s).collect();
    let bias_norm = bias.iter().map(|b| b * b).sum::<f64>().sqrt();
    let variance = samples
        .iter()
        .map(|g| {
            g.iter()
                .zip(&mean)
                .map(|(gi, m)| (gi - m) * (gi - m))
                .sum::<f64>()
        })
        .sum::<f64>()
        / count;
    let sq_errors: Vec<f64> = samples
        .iter()
        .map(|g| {
            g.iter()
                .zip(&g_star)
                .map(|(gi, s)| (gi - s) * (gi - s))
                .sum::<f64>()
        })
        .collect();
    let mse = sq_errors.iter().sum::<f64>() / count;
    let g_star_norm = g_star.iter().map(|v| v * v).sum::<f64>().sqrt();
    let angles: Vec<f64> = samples
        .iter()
        .map(|g| {
            let dot: f64 = g.iter().zip(&g_star).map(|(a, b)| a * b).sum();
            let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            let c = (dot / (g_norm * g_star_norm)).clamp(-1.0, 1.0);
            c.acos().to_degrees()
        })
        .collect();
    let (angle_median, angle_iqr) = median_iqr(&angles);
    let mse_ci = if sq_errors.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        bootstrap_percentile_ci(
            &sq_errors,
            config.n_boot,
            config.ci_level,
            config.master_seed ^ 0xb007,
        )
    };
    CellStats {
        estimator,
        n,
        alpha,
        kappa,
        g_star,
        samples,
        bias,
        bias_norm,
        variance,
        mse,
        angles,
        angle_median,
        angle_iqr,
        mse_ci,
        failures,
    }
}

fn median_iqr(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (
        quantile_sorted(&sorted, 0.5),
        quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25),
    )
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Percentile bootstrap interval for the mean of `samples`.
pub fn bootstrap_percentile_ci(
    samples: &[f64],
    n_boot: usize,
    level: f64,
    seed: u64,
) -> (f64, f64) {
    use rand::{Rng, SeedableRng};
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..n_boot)
        .map(|_| {
            let mut acc = 0.0;
            for _ in 0..n {
                acc += samples[rng.gen_range(0..n)];
            }
            acc / n as f64
        })
        .collect();
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tail = (1.0 - level) / 2.0;
    (
        quantile_sorted(&means, tail),
        quantile_sorted(&means, 1.0 - tail),
    )
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx) * (rx[i] - mx);
        vy += (ry[i] - my) * (ry[i] - my);
    }
    cov / (vx.sqrt() * vy.sqrt())
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Asymptotic bias bound of Nadaraya-Watson regression with Gaussian
/// product kernels: Lipschitz target `L_f`, log-Lipschitz sample density
/// `L_beta`, per-dimension bandwidths `h`.
pub fn a_bias_bound(l_f: f64, l_beta: f64, h: &Bandwidths) -> f64 {
    let hs = h.values();
    let d = hs.len();
    let chi: Vec<f64> = hs
        .iter()
        .map(|hi| {
            ((l_beta * l_beta * hi * hi) / 2.0).exp()
                * (1.0 + erf(hi * l_beta / std::f64::consts::SQRT_2))
        })
        .collect();
    let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
    let mut numerator = 0.0;
    for k in 0..d {
        let prod_other: f64 = (0..d).filter(|i| *i != k).map(|i| chi[i]).product();
        numerator += hs[k] * prod_other * (1.0 / sqrt_2pi + l_beta * hs[k] / 2.0 * chi[k]);
    }
    numerator *= l_f;
    let denominator: f64 = hs
        .iter()
        .map(|hi| {
            ((l_beta * l_beta * hi * hi) / 2.0).exp()
                * (1.0 - erf(hi * l_beta / std::f64::consts::SQRT_2))
        })
        .product();
    numerator / denominator
}

/// Value-function bias bound: the reward-regression bias over the
/// state-action kernel plus the transition-smoothing term, amplified by
/// the effective horizon.
pub fn value_bias_bound(
    l_r: f64,
    l_beta: f64,
    h_psi: &Bandwidths,
    h_phi_a: &Bandwidths,
    l_v: f64,
    h_phi: &Bandwidths,
    gamma_c: f64,
) -> f64 {
    let mut joint = h_psi.values().to_vec();
    joint.extend_from_slice(h_phi_a.values());
    let a_bias = a_bias_bound(l_r, l_beta, &Bandwidths::new(joint).expect("joint bandwidths"));
    let sqrt_2pi = (2.0 * std::f64::consts::PI).sqrt();
    let phi_term: f64 = h_phi.values().iter().map(|h| h / sqrt_2pi).sum();
    (a_bias + gamma_c * l_v * phi_term) / (1.0 - gamma_c)
}
