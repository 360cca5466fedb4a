//! Normal and lognormal helpers shared by every overtime model.
//!
//! Surgery durations are modelled either as normal (piecewise-linear model)
//! or lognormal (network and scenario models). The sum of independent
//! lognormals is approximated by a single lognormal whose first two moments
//! match the sum (Fenton–Wilkinson).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of `exp(N(mu, sigma2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma2: f64,
}

/// Parameters of `N(mu, sigma2)`, in minutes and minutes².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub mu: f64,
    pub sigma2: f64,
}

/// Mean and variance of a duration distribution.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

impl LogNormalParams {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma2.is_finite() || sigma2 < 0.0 {
            return Err(Error::domain(format!(
                "invalid lognormal parameters mu={mu}, sigma2={sigma2}"
            )));
        }
        Ok(Self { mu, sigma2 })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub fn moments(&self) -> Moments {
        moments_from_lognormal(*self)
    }

    pub fn percentile(&self, level: f64) -> Result<f64> {
        lognormal_percentile(*self, level)
    }
}

impl NormalParams {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }
}

impl std::ops::Add for Moments {
    type Output = Moments;

    fn add(self, rhs: Moments) -> Moments {
        Moments {
            mean: self.mean + rhs.mean,
            variance: self.variance + rhs.variance,
        }
    }
}

impl std::iter::Sum for Moments {
    fn sum<I: Iterator<Item = Moments>>(iter: I) -> Moments {
        iter.fold(Moments::default(), |a, b| a + b)
    }
}

pub fn moments_from_lognormal(p: LogNormalParams) -> Moments {
    let mean = (p.mu + 0.5 * p.sigma2).exp();
    Moments {
        mean,
        variance: p.sigma2.exp_m1() * mean * mean,
    }
}

pub fn lognormal_from_moments(m: Moments) -> Result<LogNormalParams> {
    if !(m.mean > 0.0) || !m.mean.is_finite() {
        return Err(Error::domain(format!(
            "lognormal needs a positive mean, got {}",
            m.mean
        )));
    }
    if !(m.variance >= 0.0) || !m.variance.is_finite() {
        return Err(Error::domain(format!(
            "lognormal needs a nonnegative variance, got {}",
            m.variance
        )));
    }
    let sigma2 = (m.variance / (m.mean * m.mean)).ln_1p();
    Ok(LogNormalParams {
        mu: m.mean.ln() - 0.5 * sigma2,
        sigma2,
    })
}

/// Moment-matched lognormal for the sum of independent components.
pub fn fenton_wilkinson_sum(parts: &[Moments]) -> Result<LogNormalParams> {
    if parts.is_empty() {
        return Err(Error::domain("Fenton-Wilkinson sum of an empty list"));
    }
    if let Some(bad) = parts.iter().find(|m| !(m.mean > 0.0)) {
        return Err(Error::domain(format!(
            "component with nonpositive mean {}",
            bad.mean
        )));
    }
    lognormal_from_moments(parts.iter().copied().sum())
}

pub fn lognormal_percentile(p: LogNormalParams, level: f64) -> Result<f64> {
    let z = inv_norm_cdf(level)?;
    Ok((p.mu + p.sigma() * z).exp())
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile.
///
/// Acklam's rational approximation (relative error ~1e-9) followed by one
/// Halley step against the erfc-based CDF, which brings the result to
/// machine precision over the whole open interval.
pub fn inv_norm_cdf(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!(
            "probability level must lie in (0, 1), got {level}"
        )));
    }

    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let p = level;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    // Work on the smaller tail so the residual keeps its relative precision.
    let e = if x <= 0.0 {
        norm_cdf(x) - p
    } else {
        (1.0 - p) - 0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
    };
    let u = e / norm_pdf(x);
    Ok(x - u / (1.0 + 0.5 * x * u))
}

/// Sample statistics of one surgery type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeFit {
    pub sample_mean: f64,
    pub normal: NormalParams,
    pub lognormal: LogNormalParams,
}

/// Fit normal and lognormal parameters to the observed durations of a type.
///
/// Variances use the population (divide-by-n) estimator, so a single
/// observation yields sigma = 0 for both distributions.
pub fn fit_type_params(durations: &[f64]) -> Result<TypeFit> {
    if durations.is_empty() {
        return Err(Error::domain("cannot fit a type without observations"));
    }
    if let Some(bad) = durations.iter().find(|d| !(**d > 0.0) || !d.is_finite()) {
        return Err(Error::domain(format!(
            "observed duration {bad} is not a positive number of minutes"
        )));
    }
    let (mean, var) = mean_and_population_variance(durations.iter().copied());
    let (log_mean, log_var) = mean_and_population_variance(durations.iter().map(|d| d.ln()));
    Ok(TypeFit {
        sample_mean: mean,
        normal: NormalParams {
            mu: mean,
            sigma2: var,
        },
        lognormal: LogNormalParams {
            mu: log_mean,
            sigma2: log_var,
        },
    })
}

fn mean_and_population_variance(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BetterFit {
    Normal,
    LogNormal,
}

/// Minimum sample size for the AIC comparison.
pub const AIC_MIN_SAMPLES: usize = 5;

/// Compare Gaussian and log-Gaussian maximum-likelihood fits by AIC.
///
/// Returns `None` below [`AIC_MIN_SAMPLES`] observations. Ties (including the
/// degenerate constant sample) go to [`BetterFit::Normal`].
pub fn aic_better_fit(durations: &[f64]) -> Option<BetterFit> {
    if durations.len() < AIC_MIN_SAMPLES || durations.iter().any(|d| !(*d > 0.0)) {
        return None;
    }
    let n = durations.len() as f64;
    let (_, var) = mean_and_population_variance(durations.iter().copied());
    let (_, log_var) = mean_and_population_variance(durations.iter().map(|d| d.ln()));
    if var == 0.0 || log_var == 0.0 {
        return Some(BetterFit::Normal);
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let ll_normal = -0.5 * n * (two_pi * var).ln() - 0.5 * n;
    let ll_lognormal =
        -durations.iter().map(|d| d.ln()).sum::<f64>() - 0.5 * n * (two_pi * log_var).ln() - 0.5 * n;
    // Both models have two parameters, so the penalty cancels.
    let aic_normal = 4.0 - 2.0 * ll_normal;
    let aic_lognormal = 4.0 - 2.0 * ll_lognormal;
    if aic_lognormal < aic_normal {
        Some(BetterFit::LogNormal)
    } else {
        Some(BetterFit::Normal)
    }
}
