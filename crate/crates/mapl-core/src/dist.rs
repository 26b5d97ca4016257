//! Alternative-specific aggregate valence distributions.
//!
//! Two families are supported: Normal parameterized as (μ, log σ), and the
//! Fosgerau-Mabit semi-parametric family realized as a polynomial
//! ν(u) = Σ θ_m·uᵐ in a uniform draw u ∈ (0,1). Both are sampled by
//! inverse-CDF style transforms of explicit uniforms, so simulated
//! likelihoods stay differentiable in the distribution parameters for fixed
//! draws (common random numbers).

use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::LazyLock;

use crate::error::{Error, Result};

/// Default number of Fosgerau-Mabit polynomial coefficients.
pub const DEFAULT_FM_ORDER: usize = 12;

static STD_NORMAL: LazyLock<Normal> =
    LazyLock::new(|| Normal::new(0.0, 1.0).expect("standard normal"));

/// Standard normal CDF Φ.
pub fn phi(x: f64) -> f64 {
    STD_NORMAL.cdf(x)
}

/// Standard normal quantile Φ⁻¹ (high-accuracy rational approximation via
/// the inverse error function).
pub fn phi_inv(u: f64) -> f64 {
    STD_NORMAL.inverse_cdf(u)
}

/// Distribution family plus whatever shape option it needs; the parameter
/// *values* live elsewhere (in an [`AggregateDistribution`] or in estimator
/// outputs).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionKind {
    Normal,
    FosgerauMabit { order: usize },
}

impl DistributionKind {
    pub fn fosgerau_mabit_default() -> Self {
        DistributionKind::FosgerauMabit {
            order: DEFAULT_FM_ORDER,
        }
    }

    /// Number of free parameters per alternative: 2 for Normal (μ, log σ),
    /// M for a Fosgerau-Mabit polynomial of M coefficients.
    pub fn param_count(&self) -> usize {
        match self {
            DistributionKind::Normal => 2,
            DistributionKind::FosgerauMabit { order } => *order,
        }
    }

    pub fn label(&self) -> String {
        match self {
            DistributionKind::Normal => "normal".into(),
            DistributionKind::FosgerauMabit { order } => format!("fosgerau_mabit({order})"),
        }
    }
}

/// A concrete valence distribution for one alternative.
#[derive(Debug, Clone, PartialEq)]
pub enum AggregateDistribution {
    /// ν = μ + e^{log σ}·Φ⁻¹(u)
    Normal { mu: f64, log_sigma: f64 },
    /// ν = Σ_{m=0}^{M−1} θ_m·uᵐ
    FosgerauMabit { theta: Vec<f64> },
}

impl AggregateDistribution {
    pub fn kind(&self) -> DistributionKind {
        match self {
            AggregateDistribution::Normal { .. } => DistributionKind::Normal,
            AggregateDistribution::FosgerauMabit { theta } => DistributionKind::FosgerauMabit {
                order: theta.len(),
            },
        }
    }

    /// Inverse-CDF style draw from the distribution at uniform u ∈ (0,1).
    /// Deterministic in (self, u). The Fosgerau-Mabit transform is not
    /// required to be monotone, so it is not literally a quantile function,
    /// but it maps uniforms to valences the same way.
    pub fn sample_valence(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Config(format!(
                "uniform draw must lie strictly inside (0,1), got {u}"
            )));
        }
        Ok(match self {
            AggregateDistribution::Normal { mu, log_sigma } => {
                sample_normal(*mu, *log_sigma, phi_inv(u))
            }
            AggregateDistribution::FosgerauMabit { theta } => sample_fm(theta, u),
        })
    }
}

/// Normal draw from a precomputed standard-normal variate z = Φ⁻¹(u).
/// Split out because likelihood loops transform their uniforms to z once and
/// reuse them every epoch.
#[inline]
pub fn sample_normal(mu: f64, log_sigma: f64, z: f64) -> f64 {
    mu + log_sigma.exp() * z
}

/// Fosgerau-Mabit polynomial in u (Horner form).
#[inline]
pub fn sample_fm(theta: &[f64], u: f64) -> f64 {
    let mut acc = 0.0;
    for &t in theta.iter().rev() {
        acc = acc * u + t;
    }
    acc
}

/// Closed-form aggregation of a linear-in-features utility with fixed
/// coefficient β₀ on w and independent normal coefficients on x and z:
/// the valence β₀w + β₁x + β₂z is itself normal with
/// μ = β₀w + μ₁x + μ₂z and σ² = σ₁²x² + σ₂²z².
/// This is the analytic bridge between mixed logit and a Normal-aggregate
/// model, and doubles as a test oracle.
pub fn normal_aggregate_params(
    beta0: f64,
    linear_means: (f64, f64),
    linear_sds: (f64, f64),
    features: (f64, f64, f64),
) -> (f64, f64) {
    let (mu1, mu2) = linear_means;
    let (sd1, sd2) = linear_sds;
    let (w, x, z) = features;
    let mu = beta0 * w + mu1 * x + mu2 * z;
    let var = sd1 * sd1 * x * x + sd2 * sd2 * z * z;
    (mu, var)
}

/// Analytic mean and variance of the Fosgerau-Mabit polynomial under
/// u ~ Uniform(0,1):
/// E[ν] = Σ θ_m/(m+1), E[ν²] = Σ_{m,n} θ_mθ_n/(m+n+1).
pub fn fm_moments(theta: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    for (m, &t) in theta.iter().enumerate() {
        mean += t / (m as f64 + 1.0);
    }
    let mut second = 0.0;
    for (m, &tm) in theta.iter().enumerate() {
        for (n, &tn) in theta.iter().enumerate() {
            second += tm * tn / ((m + n) as f64 + 1.0);
        }
    }
    (mean, second - mean * mean)
}
