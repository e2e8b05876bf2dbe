//! Laplace density and the regularized horseshoe variance hierarchy.
//!
//! The shrinkage variance of a coefficient is `σ² = λ̌²τ²` with
//!
//! ```text
//! λ ~ C⁺(0, 1),  τ ~ C⁺(0, τ₀),  c² ~ Inv-Γ(a, b),  λ̌ = cλ / √(c² + τ²λ²)
//! ```
//!
//! The filter only needs `σ⋆² = E[σ²]`, estimated here by Monte Carlo. The
//! regularizer bounds every draw by `c²`, so the mean exists even though `τλ`
//! has Cauchy tails.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PriorError {
    #[error("invalid prior parameter: {0}")]
    InvalidParameter(String),
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceParams {
    pub mu: f64,
    pub sigma: f64,
}

impl LaplaceParams {
    pub fn new(mu: f64, sigma: f64) -> Result<Self, PriorError> {
        if !(sigma > 0.0) {
            return Err(PriorError::InvalidParameter(format!("laplace scale {sigma}")));
        }
        Ok(Self { mu, sigma })
    }

    /// Scale whose distribution variance `2σ²` equals `variance`.
    pub fn from_variance(mu: f64, variance: f64) -> Result<Self, PriorError> {
        Self::new(mu, (variance / 2.0).sqrt())
    }

    pub fn pdf(&self, t: f64) -> f64 {
        laplace_pdf(*self, t)
    }
}

pub fn laplace_pdf(p: LaplaceParams, t: f64) -> f64 {
    (-(t - p.mu).abs() / p.sigma).exp() / (2.0 * p.sigma)
}

pub fn gaussian_pdf(mean: f64, variance: f64, t: f64) -> f64 {
    let d = t - mean;
    (-0.5 * d * d / variance).exp() / (2.0 * PI * variance).sqrt()
}

/// `cλ / √(c² + τ²λ²)`.
pub fn regularized_lambda(c: f64, lambda: f64, tau: f64) -> f64 {
    let tl = tau * lambda;
    if tl.is_infinite() {
        return c / tau;
    }
    c * lambda / (c * c + tl * tl).sqrt()
}

fn default_xi() -> Vec<f64> {
    Vec::new()
}

/// Hyperparameters `(τ₀, a, b)` and optional per-coefficient scales `ξ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorseshoeSpec {
    pub tau0: f64,
    pub a: f64,
    pub b: f64,
    #[serde(default = "default_xi")]
    pub xi: Vec<f64>,
}

impl Default for HorseshoeSpec {
    fn default() -> Self {
        Self {
            tau0: 0.1,
            a: 4.5,
            b: 1.5,
            xi: Vec::new(),
        }
    }
}

impl HorseshoeSpec {
    pub fn validate(&self) -> Result<(), PriorError> {
        for (name, v) in [("tau0", self.tau0), ("a", self.a), ("b", self.b)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PriorError::InvalidParameter(format!("{name} = {v}")));
            }
        }
        if let Some(x) = self.xi.iter().find(|&&x| !(x > 0.0)) {
            return Err(PriorError::InvalidParameter(format!("xi entry {x}")));
        }
        Ok(())
    }

    /// Scale for coefficient `i` (1 when unset).
    pub fn xi_at(&self, i: usize) -> f64 {
        self.xi.get(i).copied().unwrap_or(1.0)
    }
}

/// One draw from `C⁺(0, scale)`.
pub fn sample_half_cauchy<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.gen();
    (scale * (PI * (u - 0.5)).tan()).abs()
}

/// One draw from `Inv-Γ(shape, rate)`.
pub fn sample_inv_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("validated gamma parameters");
    1.0 / g.sample(rng)
}

/// A single `σ²` draw together with the `c²` it was bounded by.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sigma2Draw {
    pub sigma2: f64,
    pub c2: f64,
}

pub fn sample_sigma2<R: Rng + ?Sized>(spec: &HorseshoeSpec, rng: &mut R) -> Sigma2Draw {
    let lambda = sample_half_cauchy(1.0, rng);
    let tau = sample_half_cauchy(spec.tau0, rng);
    let c2 = sample_inv_gamma(spec.a, spec.b, rng);
    let tl2 = (tau * lambda).powi(2);
    // λ̌²τ² written as c²·τ²λ²/(c² + τ²λ²) to stay finite for huge τλ.
    let sigma2 = if tl2.is_finite() { c2 * tl2 / (c2 + tl2) } else { c2 };
    Sigma2Draw { sigma2, c2 }
}

/// Monte-Carlo estimate of `E[σ²]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaStar {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

pub const MIN_SIGMA_STAR_SAMPLES: usize = 100_000;
/// Fixed number of independent substreams; part of the determinism contract.
pub const SIGMA_STAR_CHUNKS: u64 = 16;

#[derive(Debug, Default, Clone, Copy)]
struct Moments {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

fn chunk_moments(spec: &HorseshoeSpec, seed: u64, chunk: u64, n: usize) -> Moments {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    let mut m = Moments { n, ..Moments::default() };
    for _ in 0..n {
        let s = sample_sigma2(spec, &mut rng).sigma2;
        m.sum += s;
        m.sum_sq += s * s;
    }
    m
}

/// Estimates `σ⋆² = E[σ²]` from `n_samples` draws split over
/// [`SIGMA_STAR_CHUNKS`] deterministic substreams of `seed`.
pub fn sigma_star(spec: &HorseshoeSpec, n_samples: usize, seed: u64) -> Result<SigmaStar, PriorError> {
    spec.validate()?;
    if n_samples < MIN_SIGMA_STAR_SAMPLES {
        return Err(PriorError::TooFewSamples {
            min: MIN_SIGMA_STAR_SAMPLES,
            got: n_samples,
        });
    }
    Ok(sigma_star_unchecked(spec, n_samples, seed))
}

pub(crate) fn sigma_star_unchecked(spec: &HorseshoeSpec, n_samples: usize, seed: u64) -> SigmaStar {
    let chunks = SIGMA_STAR_CHUNKS as usize;
    let sizes: Vec<(u64, usize)> = (0..chunks)
        .map(|c| (c as u64, n_samples / chunks + usize::from(c < n_samples % chunks)))
        .collect();

    #[cfg(feature = "parallel")]
    let parts: Vec<Moments> = {
        use rayon::prelude::*;
        sizes
            .par_iter()
            .map(|&(c, n)| chunk_moments(spec, seed, c, n))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Moments> = sizes
        .iter()
        .map(|&(c, n)| chunk_moments(spec, seed, c, n))
        .collect();

    // Combined in chunk order, so the result does not depend on scheduling.
    let total = parts.iter().fold(Moments::default(), |acc, m| Moments {
        n: acc.n + m.n,
        sum: acc.sum + m.sum,
        sum_sq: acc.sum_sq + m.sum_sq,
    });
    let n = total.n as f64;
    let mean = total.sum / n;
    let var = ((total.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    SigmaStar {
        mean,
        std_error: (var / n).sqrt(),
        n_samples: total.n,
    }
}

/// One row of the Gaussian-versus-Laplace shape comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityRow {
    pub t: f64,
    pub laplace: f64,
    pub gaussians: Vec<f64>,
}

/// How the illustrative "variance" figures are turned into scale parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceConvention {
    /// The number is the distribution variance (Laplace: `2σ²`).
    Distribution,
    /// The number is the squared scale parameter (Laplace: `σ²`).
    Scale,
}

/// Evaluates a Laplace density and a family of zero-mean Gaussians on a grid.
pub fn density_comparison(
    laplace_variance: f64,
    gaussian_variances: &[f64],
    convention: VarianceConvention,
    grid: &[f64],
) -> Result<Vec<DensityRow>, PriorError> {
    let laplace = match convention {
        VarianceConvention::Distribution => LaplaceParams::from_variance(0.0, laplace_variance)?,
        VarianceConvention::Scale => LaplaceParams::new(0.0, laplace_variance.sqrt())?,
    };
    if let Some(v) = gaussian_variances.iter().find(|&&v| !(v > 0.0)) {
        return Err(PriorError::InvalidParameter(format!("gaussian variance {v}")));
    }
    Ok(grid
        .iter()
        .map(|&t| DensityRow {
            t,
            laplace: laplace.pdf(t),
            gaussians: gaussian_variances.iter().map(|&v| gaussian_pdf(0.0, v, t)).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn laplace_values() {
        assert_relative_eq!(laplace_pdf(LaplaceParams::new(0.0, 1.0).unwrap(), 0.0), 0.5);
        let p = LaplaceParams::from_variance(0.0, 0.75).unwrap();
        assert_relative_eq!(p.pdf(0.0), 1.0 / (2.0 * 0.375f64.sqrt()), epsilon = 1e-15);
        assert_relative_eq!(p.pdf(0.0), 0.816496580927726, epsilon = 1e-12);
        let p = LaplaceParams::new(1.0, 2.0).unwrap();
        assert_relative_eq!(p.pdf(3.0), 0.25 * (-1.0f64).exp(), epsilon = 1e-15);
        assert!(LaplaceParams::new(0.0, 0.0).is_err());
    }

    #[test]
    fn laplace_integrates_to_one() {
        for sigma in [0.1, 0.5, 1.0, 3.0] {
            let p = LaplaceParams::new(0.3, sigma).unwrap();
            let (lo, hi, n) = (-60.0 * sigma, 60.0 * sigma, 400_000);
            let h = (hi - lo) / n as f64;
            let mut acc = 0.5 * (p.pdf(lo) + p.pdf(hi));
            for i in 1..n {
                acc += p.pdf(lo + i as f64 * h);
            }
            assert!((acc * h - 1.0).abs() < 1e-6, "sigma={sigma}: {}", acc * h);
        }
    }

    #[test]
    fn regularized_lambda_values() {
        assert_relative_eq!(regularized_lambda(1.3, 0.7, 0.0), 0.7, epsilon = 1e-15);
        assert_relative_eq!(regularized_lambda(2.0, 1.0, 1.0), 2.0 / 5f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(regularized_lambda(1.0, 1e12, 0.5), 2.0, epsilon = 1e-9);
        assert_relative_eq!(regularized_lambda(1.0, f64::INFINITY, 0.5), 2.0);
    }

    #[test]
    fn sigma2_draws_are_bounded() {
        let spec = HorseshoeSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100_000 {
            let d = sample_sigma2(&spec, &mut rng);
            assert!(d.sigma2 > 0.0 && d.sigma2 < d.c2, "{d:?}");
        }
    }

    #[test]
    fn sigma2_median_is_seed_reproducible() {
        let spec = HorseshoeSpec::default();
        let median = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v: Vec<f64> = (0..200_000).map(|_| sample_sigma2(&spec, &mut rng).sigma2).collect();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        assert_eq!(median(5), median(5));
        // Independent numpy run at 10⁷ draws put the median at 0.009738.
        assert!((median(5) - 0.009738).abs() < 5e-4);
    }

    #[test]
    fn half_cauchy_median_is_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let below = (0..n).filter(|_| sample_half_cauchy(2.5, &mut rng) <= 2.5).count();
        assert!((below as f64 / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn inv_gamma_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_inv_gamma(4.5, 1.5, &mut rng)).sum::<f64>() / n as f64;
        let expected = 1.5 / 3.5;
        assert!((mean / expected - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn sigma_star_basic_contract() {
        let spec = HorseshoeSpec::default();
        assert!(matches!(sigma_star(&spec, 10, 0), Err(PriorError::TooFewSamples { .. })));
        let a = sigma_star(&spec, 200_000, 3).unwrap();
        let b = sigma_star(&spec, 200_000, 3).unwrap();
        assert_eq!(a, b);
        let doubled = sigma_star(&spec, 400_000, 3).unwrap();
        let ratio = doubled.std_error / a.std_error;
        // Cauchy-tailed draws make the SE noisy; the rate is only roughly 1/√2.
        assert!((ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.15, "{ratio}");
    }

    #[test]
    fn sigma_star_vanishes_with_global_scale() {
        let mut spec = HorseshoeSpec::default();
        let mut last = f64::INFINITY;
        for tau0 in [1e-1, 1e-3, 1e-5, 1e-7] {
            spec.tau0 = tau0;
            let s = sigma_star(&spec, 100_000, 4).unwrap().mean;
            assert!(s < last);
            last = s;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn sample_mean_agrees_with_sigma_star_across_seeds() {
        let spec = HorseshoeSpec::default();
        let star = sigma_star(&spec, 1_000_000, 100).unwrap();
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let n = 400_000;
            let draws: Vec<f64> = (0..n).map(|_| sample_sigma2(&spec, &mut rng).sigma2).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let se = (var / n as f64).sqrt();
            let combined = (se * se + star.std_error * star.std_error).sqrt();
            assert!((mean - star.mean).abs() < 3.0 * combined, "seed {seed}");
        }
    }

    #[test]
    fn comparison_table_shapes() {
        let grid: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.1).collect();
        let rows = density_comparison(0.75, &[1.0, 0.65], VarianceConvention::Distribution, &grid).unwrap();
        assert_eq!(rows.len(), 41);
        let mid = &rows[20];
        assert_relative_eq!(mid.laplace, 0.816496580927726, epsilon = 1e-12);
        assert_relative_eq!(mid.gaussians[0], 1.0 / (2.0 * PI).sqrt(), epsilon = 1e-15);
        let scale = density_comparison(0.75, &[1.0], VarianceConvention::Scale, &grid).unwrap();
        assert_relative_eq!(scale[20].laplace, 1.0 / (2.0 * 0.75f64.sqrt()), epsilon = 1e-15);
    }
}
