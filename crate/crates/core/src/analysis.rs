//! Error metrics and dominant-term extraction from a parameter history.
//!
//! Dominance uses the *uncentered* second-moment matrix `Θ'Θ'ᵀ / N'` of the
//! trimmed history. A coefficient that settles at a nonzero constant carries
//! real model content, and centering would erase it.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::models::{FunctionLibrary, ModelError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("need at least {needed} samples after burn-in, have {have}")]
    InsufficientSamples { needed: usize, have: usize },
    #[error("parameter history has zero energy after burn-in")]
    ZeroEnergy,
    #[error("inconsistent log: {0}")]
    InconsistentLog(String),
    #[error("term index {index} out of range for {n_theta} terms")]
    InvalidTerm { index: usize, n_theta: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Time-indexed record of one estimation run. `theta` holds one column per
/// sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateLog {
    pub times: Vec<f64>,
    pub u: Vec<f64>,
    pub x_true: Vec<DVector<f64>>,
    pub x_est: Vec<DVector<f64>>,
    pub theta: DMatrix<f64>,
    pub y: Vec<DVector<f64>>,
}

impl EstimateLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_theta(&self) -> usize {
        self.theta.nrows()
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        let n = self.times.len();
        let lens = [self.u.len(), self.x_true.len(), self.x_est.len(), self.theta.ncols(), self.y.len()];
        if lens.iter().any(|&l| l != n) {
            return Err(AnalysisError::InconsistentLog(format!(
                "{n} times but field lengths {lens:?}"
            )));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(AnalysisError::InconsistentLog("times not strictly increasing".into()));
        }
        Ok(())
    }

    /// Index of the first sample at or after `t0 + burn_in`.
    pub fn burn_in_index(&self, burn_in: f64) -> usize {
        let Some(&t0) = self.times.first() else { return 0 };
        let cut = t0 + burn_in - 1e-9 * burn_in.abs().max(1.0);
        self.times.partition_point(|&t| t < cut)
    }
}

/// Running sum of `‖x_true − x_est‖₂·Δt`, zero at the first sample.
pub fn cumulative_error(log: &EstimateLog) -> Vec<f64> {
    let mut out = Vec::with_capacity(log.len());
    let mut acc = 0.0;
    for k in 0..log.len() {
        if k > 0 {
            let dt = log.times[k] - log.times[k - 1];
            acc += (&log.x_true[k] - &log.x_est[k]).norm() * dt;
        }
        out.push(acc);
    }
    out
}

/// Per-state root-mean-square error over samples at or after the burn-in.
pub fn state_rmse(log: &EstimateLog, burn_in: f64) -> Vec<f64> {
    let start = log.burn_in_index(burn_in);
    let n_x = log.x_true.first().map_or(0, |x| x.len());
    let count = (log.len() - start).max(1) as f64;
    (0..n_x)
        .map(|i| {
            let ss: f64 = (start..log.len())
                .map(|k| (log.x_true[k][i] - log.x_est[k][i]).powi(2))
                .sum();
            (ss / count).sqrt()
        })
        .collect()
}

/// Time-averaged `|θᵢ|` over samples at or after the burn-in.
pub fn mean_abs_theta(log: &EstimateLog, burn_in: f64) -> Vec<f64> {
    let start = log.burn_in_index(burn_in);
    let count = (log.len() - start).max(1) as f64;
    (0..log.n_theta())
        .map(|i| (start..log.len()).map(|k| log.theta[(i, k)].abs()).sum::<f64>() / count)
        .collect()
}

/// Number of coefficients whose time-averaged magnitude exceeds `fraction`
/// of the largest one.
pub fn active_count(mean_abs: &[f64], fraction: f64) -> usize {
    let top = mean_abs.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    mean_abs.iter().filter(|&&v| v > fraction * top).count()
}

/// Pearson correlation of two equally long series.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    /// Fraction of the total second moment attributed to each term.
    pub shares: Vec<f64>,
    /// Term indices by descending share.
    pub ranking: Vec<usize>,
    /// Shortest prefix of `ranking` whose cumulative share reaches the threshold.
    pub selected: Vec<usize>,
    /// Eigenvalues of the second-moment matrix, descending.
    pub eigenvalues: Vec<f64>,
    pub burn_in: f64,
    pub threshold: f64,
    pub samples: usize,
}

impl DominanceReport {
    pub fn cumulative_share(&self, k: usize) -> f64 {
        self.ranking.iter().take(k).map(|&i| self.shares[i]).sum()
    }
}

/// Per-term shares `Σⱼ λⱼ·vⱼᵢ² / Σⱼ λⱼ` from the eigendecomposition of the
/// uncentered second-moment matrix of `theta` (rows are terms).
pub fn dominance_from_matrix(theta: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>), AnalysisError> {
    let (n_theta, n) = theta.shape();
    if n < n_theta || n == 0 {
        return Err(AnalysisError::InsufficientSamples { needed: n_theta.max(1), have: n });
    }
    let second = theta * theta.transpose() / n as f64;
    let eig = SymmetricEigen::new(second);
    let lambdas: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
    let total: f64 = lambdas.iter().sum();
    if !(total > 0.0) {
        return Err(AnalysisError::ZeroEnergy);
    }
    let shares = (0..n_theta)
        .map(|i| {
            lambdas
                .iter()
                .enumerate()
                .map(|(j, l)| l * eig.eigenvectors[(i, j)].powi(2))
                .sum::<f64>()
                / total
        })
        .collect();
    let mut sorted = lambdas;
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok((shares, sorted))
}

pub fn pca_dominance(log: &EstimateLog, burn_in: f64, threshold: f64) -> Result<DominanceReport, AnalysisError> {
    let start = log.burn_in_index(burn_in);
    let trimmed = log.theta.columns(start, log.theta.ncols() - start).clone_owned();
    let mut report = dominance_of(&trimmed, threshold)?;
    report.burn_in = burn_in;
    Ok(report)
}

fn dominance_of(theta: &DMatrix<f64>, threshold: f64) -> Result<DominanceReport, AnalysisError> {
    let (shares, eigenvalues) = dominance_from_matrix(theta)?;
    let mut ranking: Vec<usize> = (0..shares.len()).collect();
    ranking.sort_by(|&a, &b| shares[b].total_cmp(&shares[a]).then(a.cmp(&b)));
    let mut selected = Vec::new();
    let mut acc = 0.0;
    for &i in &ranking {
        selected.push(i);
        acc += shares[i];
        if acc >= threshold - 1e-12 {
            break;
        }
    }
    Ok(DominanceReport {
        shares,
        ranking,
        selected,
        eigenvalues,
        burn_in: 0.0,
        threshold,
        samples: theta.ncols(),
    })
}

/// Moving-horizon variant: one report per window of `window` seconds,
/// advancing by `stride` seconds.
pub fn pca_dominance_windowed(
    log: &EstimateLog,
    window: f64,
    stride: f64,
    threshold: f64,
) -> Result<Vec<(f64, DominanceReport)>, AnalysisError> {
    let mut out = Vec::new();
    let Some(&t0) = log.times.first() else { return Ok(out) };
    let t_last = *log.times.last().unwrap();
    let mut end = t0 + window;
    while end <= t_last + 1e-9 {
        let lo = log.times.partition_point(|&t| t < end - window - 1e-9);
        let hi = log.times.partition_point(|&t| t <= end + 1e-9);
        let block = log.theta.columns(lo, hi - lo).clone_owned();
        out.push((end, dominance_of(&block, threshold)?));
        end += stride;
    }
    Ok(out)
}

/// `Σᵢ θᵢ(k)·ψᵢ(x_est(k), u(k))` per sample, over `terms` or over all terms.
pub fn reconstruct_g(
    log: &EstimateLog,
    lib: &FunctionLibrary,
    terms: Option<&[usize]>,
) -> Result<Vec<f64>, AnalysisError> {
    let n_theta = log.n_theta();
    if lib.len() != n_theta {
        return Err(AnalysisError::InconsistentLog(format!(
            "library has {} terms, log has {n_theta}",
            lib.len()
        )));
    }
    let all: Vec<usize> = (0..n_theta).collect();
    let terms = terms.unwrap_or(&all);
    if let Some(&index) = terms.iter().find(|&&i| i >= n_theta) {
        return Err(AnalysisError::InvalidTerm { index, n_theta });
    }
    (0..log.len())
        .map(|k| {
            let psi = lib.eval(log.x_est[k].as_slice(), log.u[k])?;
            Ok(terms.iter().map(|&i| log.theta[(i, k)] * psi[i]).sum())
        })
        .collect()
}

/// RMS of `a − b` over samples at or after `start`.
pub fn rms_diff(a: &[f64], b: &[f64], start: usize) -> f64 {
    let n = a.len().min(b.len());
    if start >= n {
        return 0.0;
    }
    let ss: f64 = (start..n).map(|k| (a[k] - b[k]).powi(2)).sum();
    (ss / (n - start) as f64).sqrt()
}
