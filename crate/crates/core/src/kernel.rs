//! Product-Gaussian kernels over states, actions and next states, plus
//! data-driven bandwidth selection.
//!
//! All kernel ratios downstream are accumulated in log space; the helpers
//! here therefore expose both the normalized density and the bare
//! log-weight (squared-distance) form whose per-dimension normalization
//! constants cancel inside responsibility ratios.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.8378770664093453;

/// Per-dimension Gaussian bandwidths, in the units of the coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    values: Vec<f64>,
}

impl Bandwidths {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("bandwidth vector must be non-empty"));
        }
        if values.iter().any(|h| !h.is_finite() || *h <= 0.0) {
            return Err(Error::domain(format!(
                "bandwidths must be positive and finite, got {values:?}"
            )));
        }
        Ok(Bandwidths { values })
    }

    pub fn uniform(h: f64, dims: usize) -> Result<Self> {
        Bandwidths::new(vec![h; dims])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::MIN, f64::max)
    }

    /// Element-wise product with a positive factor vector (or scalar via
    /// a one-element slice).
    pub fn scaled(&self, factor: &[f64]) -> Result<Bandwidths> {
        let scaled = match factor.len() {
            1 => self.values.iter().map(|h| h * factor[0]).collect(),
            k if k == self.values.len() => self
                .values
                .iter()
                .zip(factor)
                .map(|(h, f)| h * f)
                .collect(),
            k => {
                return Err(Error::Dimension {
                    expected: self.values.len(),
                    got: k,
                    context: "bandwidth factor length",
                })
            }
        };
        Bandwidths::new(scaled)
    }
}

/// Multiplies bandwidths by an empirical constant factor, the second step
/// of the two-step bandwidth scheme (cross-validation, then rescaling so
/// sparse regions keep nonzero density).
pub fn apply_h_factor(h: &Bandwidths, factor: &[f64]) -> Result<Bandwidths> {
    if factor.iter().any(|f| !f.is_finite() || *f <= 0.0) {
        return Err(Error::domain(format!("h_factor must be positive, got {factor:?}")));
    }
    h.scaled(factor)
}

/// Bandwidths for the three kernels of the transition model: state kernel,
/// action kernel and next-state kernel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelModel {
    pub h_state: Bandwidths,
    pub h_action: Bandwidths,
    pub h_next: Bandwidths,
}

impl KernelModel {
    pub fn new(h_state: Bandwidths, h_action: Bandwidths, h_next: Bandwidths) -> Self {
        KernelModel {
            h_state,
            h_action,
            h_next,
        }
    }

    /// All bandwidths set to the same scalar; used by the bandwidth sweep.
    pub fn isotropic(kappa: f64, d_s: usize, d_a: usize) -> Result<Self> {
        Ok(KernelModel {
            h_state: Bandwidths::uniform(kappa, d_s)?,
            h_action: Bandwidths::uniform(kappa, d_a)?,
            h_next: Bandwidths::uniform(kappa, d_s)?,
        })
    }

    pub fn check_dims(&self, dataset: &Dataset) -> Result<()> {
        for (len, want, ctx) in [
            (self.h_state.len(), dataset.d_s(), "state bandwidths"),
            (self.h_action.len(), dataset.d_a(), "action bandwidths"),
            (self.h_next.len(), dataset.d_s(), "next-state bandwidths"),
        ] {
            if len != want {
                return Err(Error::Dimension {
                    expected: want,
                    got: len,
                    context: ctx,
                });
            }
        }
        Ok(())
    }
}

/// Normalized axis-aligned Gaussian product density
/// `prod_d exp(-(x_d-c_d)^2 / (2 h_d^2)) / sqrt(2 pi h_d^2)`.
pub fn gaussian_product_eval(x: &[f64], center: &[f64], h: &Bandwidths) -> Result<f64> {
    Ok(gaussian_product_log_eval(x, center, h)?.exp())
}

/// Log of [`gaussian_product_eval`]; exact for distant queries.
pub fn gaussian_product_log_eval(x: &[f64], center: &[f64], h: &Bandwidths) -> Result<f64> {
    if x.len() != center.len() || x.len() != h.len() {
        return Err(Error::Dimension {
            expected: h.len(),
            got: x.len().max(center.len()),
            context: "kernel evaluation point",
        });
    }
    Ok(log_weight(x, center, h.values()) + log_norm_const(h.values()))
}

/// Un-normalized log weight `-sum_d (x_d-c_d)^2 / (2 h_d^2)`.
///
/// The normalization constant is shared by every center with the same
/// bandwidths, so it cancels in responsibility ratios and is omitted here.
#[inline]
pub fn log_weight(x: &[f64], center: &[f64], h: &[f64]) -> f64 {
    let mut acc = 0.0;
    for d in 0..x.len() {
        let z = (x[d] - center[d]) / h[d];
        acc -= 0.5 * z * z;
    }
    acc
}

/// `-sum_d log sqrt(2 pi h_d^2)`.
#[inline]
pub fn log_norm_const(h: &[f64]) -> f64 {
    h.iter().map(|hd| -0.5 * LN_2PI - hd.ln()).sum()
}

/// Numerically stable log-sum-exp.
pub fn log_sum_exp(log_terms: &[f64]) -> f64 {
    let m = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = log_terms.iter().map(|t| (t - m).exp()).sum();
    m + s.ln()
}

/// Result of cross-validated bandwidth selection.
#[derive(Debug, Clone)]
pub struct CvSelection {
    pub bandwidths: Bandwidths,
    /// Dimensions whose column was degenerate (zero variance); those fall
    /// back to the largest grid candidate.
    pub degenerate_dims: Vec<usize>,
}

/// Per-dimension bandwidth selection by K-fold cross-validation of a 1-D
/// Gaussian KDE.
///
/// For every dimension the candidate maximizing the mean held-out log
/// density is chosen; ties break toward the larger bandwidth. `grid` is in
/// absolute units and shared across dimensions (see
/// [`select_bandwidths_cv_relative`] for the sigma-scaled variant).
pub fn select_bandwidths_cv(
    columns: &[Vec<f64>],
    folds: usize,
    grid: &[f64],
    seed: u64,
) -> Result<CvSelection> {
    let grids: Vec<Vec<f64>> = columns.iter().map(|_| grid.to_vec()).collect();
    select_bandwidths_cv_grids(columns, folds, &grids, seed)
}

/// Like [`select_bandwidths_cv`] with the grid rescaled per dimension by
/// the column standard deviation. Degenerate (constant) columns use the
/// unscaled grid and select its maximum.
pub fn select_bandwidths_cv_relative(
    columns: &[Vec<f64>],
    folds: usize,
    relative_grid: &[f64],
    seed: u64,
) -> Result<CvSelection> {
    let grids: Vec<Vec<f64>> = columns
        .iter()
        .map(|col| {
            let sigma = std_dev(col);
            if sigma > 0.0 {
                relative_grid.iter().map(|g| g * sigma).collect()
            } else {
                relative_grid.to_vec()
            }
        })
        .collect();
    select_bandwidths_cv_grids(columns, folds, &grids, seed)
}

fn select_bandwidths_cv_grids(
    columns: &[Vec<f64>],
    folds: usize,
    grids: &[Vec<f64>],
    seed: u64,
) -> Result<CvSelection> {
    if columns.is_empty() {
        return Err(Error::domain("no columns to select bandwidths for"));
    }
    let n = columns[0].len();
    if folds < 2 || n < folds {
        return Err(Error::domain(format!(
            "need n >= folds >= 2, got n={n}, folds={folds}"
        )));
    }
    if grids.iter().any(|g| g.is_empty()) {
        return Err(Error::domain("empty bandwidth grid"));
    }
    for g in grids {
        if g.iter().any(|h| !h.is_finite() || *h <= 0.0) {
            return Err(Error::domain("bandwidth grid must be positive"));
        }
    }

    let mut values = Vec::with_capacity(columns.len());
    let mut degenerate = Vec::new();
    for (dim, col) in columns.iter().enumerate() {
        if col.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: col.len(),
                context: "cv column length",
            });
        }
        let grid = &grids[dim];
        if std_dev(col) == 0.0 {
            degenerate.push(dim);
            values.push(grid.iter().cloned().fold(f64::MIN, f64::max));
            continue;
        }
        // Fold assignment is shuffled once per dimension from the seed, so
        // two runs with the same seed pick identical bandwidths.
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(dim as u64));
        order.shuffle(&mut rng);

        let mut best_h = grid[0];
        let mut best_score = f64::NEG_INFINITY;
        for &h in grid {
            let score = cv_score_1d(col, &order, folds, h);
            // Ties (within float noise) break toward the larger bandwidth.
            if score > best_score + 1e-12 || (score >= best_score - 1e-12 && h > best_h) {
                best_score = score.max(best_score);
                best_h = h;
            }
        }
        values.push(best_h);
    }
    Ok(CvSelection {
        bandwidths: Bandwidths::new(values)?,
        degenerate_dims: degenerate,
    })
}

/// Mean held-out log density of a 1-D Gaussian KDE across folds.
fn cv_score_1d(col: &[f64], order: &[usize], folds: usize, h: f64) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for fold in 0..folds {
        let held: Vec<f64> = order
            .iter()
            .enumerate()
            .filter(|(i, _)| i % folds == fold)
            .map(|(_, &j)| col[j])
            .collect();
        let train: Vec<f64> = order
            .iter()
            .enumerate()
            .filter(|(i, _)| i % folds != fold)
            .map(|(_, &j)| col[j])
            .collect();
        if held.is_empty() || train.is_empty() {
            continue;
        }
        let log_m = (train.len() as f64).ln();
        let log_norm = -0.5 * LN_2PI - h.ln();
        for &x in &held {
            let logs: Vec<f64> = train
                .iter()
                .map(|&y| {
                    let z = (x - y) / h;
                    -0.5 * z * z + log_norm
                })
                .collect();
            total += log_sum_exp(&logs) - log_m;
            count += 1;
        }
    }
    total / count as f64
}

pub fn std_dev(col: &[f64]) -> f64 {
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    var.sqrt()
}

/// Log-spaced grid of `points` values between `10^lo` and `10^hi`.
pub fn log_grid(lo_log10: f64, hi_log10: f64, points: usize) -> Vec<f64> {
    if points == 1 {
        return vec![10f64.powf(lo_log10)];
    }
    (0..points)
        .map(|i| {
            let t = i as f64 / (points - 1) as f64;
            10f64.powf(lo_log10 + t * (hi_log10 - lo_log10))
        })
        .collect()
}
