//! Occurrence-rate distributions for an event in a fixed-length document.
//!
//! Two families are supported: the Poisson distribution, and the negative
//! binomial that results from mixing the Poisson rate over a gamma density.
//! All probability mass functions are evaluated in log space so they remain
//! finite for counts up to very long documents.
//!
//! [`fit_rate`] turns the moments of normalized per-document counts into a
//! distribution, and [`RateProfile`] truncates a distribution to the support
//! `0..=N` of an `N`-token document.

mod profile;
pub mod quadrature;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

pub use profile::{ProfileTable, RateProfile, TailSums};

/// Overdispersion guard: variance must exceed `mean * (1 + EPS_FIT)` before a
/// negative binomial is fitted.
pub const EPS_FIT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RateError {
    #[error("invalid parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("event never occurs (mean 0); no rate distribution can be fitted")]
    UnobservedEvent,
    #[error("quadrature failed to converge (estimate {estimate:e}, error {error:e})")]
    QuadratureDiverged { estimate: f64, error: f64 },
}

fn positive(name: &'static str, value: f64) -> Result<f64, RateError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(RateError::InvalidParameter { name, value })
    }
}

/// `ln(x!)`
#[inline]
pub fn ln_factorial(x: u64) -> f64 {
    ln_gamma(x as f64 + 1.0)
}

/// Poisson rate: expected occurrences per document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonParams {
    lambda: f64,
}

impl PoissonParams {
    pub fn new(lambda: f64) -> Result<Self, RateError> {
        Ok(Self {
            lambda: positive("lambda", lambda)?,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Negative binomial shape `alpha` and scale `beta`, with mean `alpha * beta`
/// and variance `alpha * beta * (beta + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegBinParams {
    alpha: f64,
    beta: f64,
}

impl NegBinParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, RateError> {
        Ok(Self {
            alpha: positive("alpha", alpha)?,
            beta: positive("beta", beta)?,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// `ln P(X = x)` for a Poisson variable.
pub fn poisson_ln_pmf(x: u64, params: &PoissonParams) -> f64 {
    let lambda = params.lambda;
    if x == 0 {
        return -lambda;
    }
    -lambda + x as f64 * lambda.ln() - ln_factorial(x)
}

/// `P(X = x) = e^{-λ} λ^x / x!`
pub fn poisson_pmf(x: u64, params: &PoissonParams) -> f64 {
    poisson_ln_pmf(x, params).exp()
}

/// `ln P(X = x)` for a negative binomial variable.
pub fn negbin_ln_pmf(x: u64, params: &NegBinParams) -> f64 {
    let NegBinParams { alpha, beta } = *params;
    let ln_one_plus_beta = beta.ln_1p();
    if x == 0 {
        return -alpha * ln_one_plus_beta;
    }
    let xf = x as f64;
    ln_gamma(alpha + xf) - ln_gamma(alpha) - ln_factorial(x) + xf * beta.ln()
        - (alpha + xf) * ln_one_plus_beta
}

/// `P(X = x) = C(α+x-1, x) β^x / (1+β)^{α+x}` with the generalized binomial
/// coefficient `Γ(α+x) / (Γ(α) Γ(x+1))`.
pub fn negbin_pmf(x: u64, params: &NegBinParams) -> f64 {
    negbin_ln_pmf(x, params).exp()
}

/// Gamma density with shape `alpha` and scale `beta`.
pub fn gamma_pdf(lambda: f64, alpha: f64, beta: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    ((alpha - 1.0) * lambda.ln() - lambda / beta - alpha * beta.ln() - ln_gamma(alpha)).exp()
}

/// Probability of `x` under a Poisson whose rate is gamma distributed,
/// obtained by numerically integrating the mixture rather than through the
/// closed form. Used to cross-check [`negbin_pmf`].
pub fn poisson_gamma_mixture_pmf(x: u64, alpha: f64, beta: f64) -> Result<f64, RateError> {
    let alpha = positive("alpha", alpha)?;
    let beta = positive("beta", beta)?;
    let xf = x as f64;

    // The integrand is proportional to a gamma density with shape x + alpha
    // and scale beta / (1 + beta); use it to bound the effective support.
    let shape = xf + alpha;
    let scale = beta / (1.0 + beta);
    let mode = ((shape - 1.0).max(0.0)) * scale;
    let upper = shape * scale + 60.0 * shape.sqrt() * scale + 60.0 * scale;

    let ln_gamma_alpha = ln_gamma(alpha);
    let ln_x_factorial = ln_factorial(x);
    let ln_beta = beta.ln();
    let integrand = |lambda: f64| -> f64 {
        if lambda <= 0.0 {
            return 0.0;
        }
        let ln_l = lambda.ln();
        let ln_poisson = -lambda + xf * ln_l - ln_x_factorial;
        let ln_gamma_pdf = (alpha - 1.0) * ln_l - lambda / beta - alpha * ln_beta - ln_gamma_alpha;
        (ln_poisson + ln_gamma_pdf).exp()
    };
    // lambda = t^2 removes the integrable singularity at zero for alpha < 1.
    let in_t = |t: f64| 2.0 * t * integrand(t * t);
    let mut breaks = vec![0.0];
    if mode > 0.0 {
        breaks.push(mode.sqrt());
    }
    breaks.push(upper.sqrt());
    quadrature::integrate_with_breaks(in_t, &breaks, 1e-15, 1e-12)
}

/// Which family a [`RateDistribution`] belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Poisson,
    NegBin,
    Degenerate,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::NegBin => "negbin",
            Family::Degenerate => "degenerate",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "poisson" => Ok(Family::Poisson),
            "negbin" => Ok(Family::NegBin),
            "degenerate" => Ok(Family::Degenerate),
            other => Err(format!("unknown rate family `{other}`")),
        }
    }
}

/// Fitted occurrence distribution of one event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RateDistribution {
    Poisson(PoissonParams),
    NegBin(NegBinParams),
    /// Point mass at the mean, split between the two neighbouring integers
    /// when the mean is fractional. Used for events with no training mass.
    Degenerate { mean: f64 },
}

impl RateDistribution {
    pub fn family(&self) -> Family {
        match self {
            RateDistribution::Poisson(_) => Family::Poisson,
            RateDistribution::NegBin(_) => Family::NegBin,
            RateDistribution::Degenerate { .. } => Family::Degenerate,
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            RateDistribution::Poisson(p) => p.lambda,
            RateDistribution::NegBin(p) => p.alpha * p.beta,
            RateDistribution::Degenerate { mean } => *mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            RateDistribution::Poisson(p) => p.lambda,
            RateDistribution::NegBin(p) => p.alpha * p.beta * (p.beta + 1.0),
            RateDistribution::Degenerate { mean } => {
                let frac = mean - mean.floor();
                frac * (1.0 - frac)
            }
        }
    }

    pub fn ln_pmf(&self, x: u64) -> f64 {
        match self {
            RateDistribution::Poisson(p) => poisson_ln_pmf(x, p),
            RateDistribution::NegBin(p) => negbin_ln_pmf(x, p),
            RateDistribution::Degenerate { .. } => self.pmf(x).ln(),
        }
    }

    pub fn pmf(&self, x: u64) -> f64 {
        match self {
            RateDistribution::Poisson(p) => poisson_pmf(x, p),
            RateDistribution::NegBin(p) => negbin_pmf(x, p),
            RateDistribution::Degenerate { mean } => {
                let floor = mean.floor();
                let frac = mean - floor;
                let k = floor as u64;
                if x == k {
                    1.0 - frac
                } else if x == k + 1 {
                    frac
                } else {
                    0.0
                }
            }
        }
    }

    /// `P(X = j + 1) / P(X = j)` for the Poisson and negative binomial families.
    #[inline]
    pub(crate) fn successor_ratio(&self, j: u64) -> f64 {
        let jf = j as f64;
        match self {
            RateDistribution::Poisson(p) => p.lambda / (jf + 1.0),
            RateDistribution::NegBin(p) => {
                (p.alpha + jf) / (jf + 1.0) * (p.beta / (1.0 + p.beta))
            }
            RateDistribution::Degenerate { .. } => f64::NAN,
        }
    }

    /// Upper bound on every successor ratio beyond `j`, given the ratio at `j`.
    #[inline]
    pub(crate) fn ratio_bound_after(&self, ratio_at_j: f64) -> f64 {
        match self {
            // λ/(j+1) decreases in j.
            RateDistribution::Poisson(_) => ratio_at_j,
            // (α+j)/(j+1)·q approaches q = β/(1+β) monotonically.
            RateDistribution::NegBin(p) => ratio_at_j.max(p.beta / (1.0 + p.beta)),
            RateDistribution::Degenerate { .. } => 0.0,
        }
    }
}

impl fmt::Display for RateDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateDistribution::Poisson(p) => write!(f, "Poisson(lambda={})", p.lambda),
            RateDistribution::NegBin(p) => write!(f, "NB(alpha={}, beta={})", p.alpha, p.beta),
            RateDistribution::Degenerate { mean } => write!(f, "Degenerate(mean={mean})"),
        }
    }
}

/// Which family [`fit_rate`] may choose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitPolicy {
    /// Negative binomial when overdispersed, Poisson otherwise.
    #[default]
    Auto,
    Poisson,
    /// Negative binomial whenever the variance exceeds the mean at all.
    NegBin,
}

impl FromStr for FitPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(FitPolicy::Auto),
            "poisson" => Ok(FitPolicy::Poisson),
            "negbin" => Ok(FitPolicy::NegBin),
            other => Err(format!("unknown fit family `{other}` (auto|poisson|negbin)")),
        }
    }
}

impl fmt::Display for FitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitPolicy::Auto => "auto",
            FitPolicy::Poisson => "poisson",
            FitPolicy::NegBin => "negbin",
        })
    }
}

/// Length-weighted moments of normalized per-document counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMoments {
    pub mean: f64,
    /// `None` when only one document was observed.
    pub variance: Option<f64>,
}

impl SampleMoments {
    /// Moments of the same samples normalized to a length `factor` times
    /// longer.
    pub fn rescaled(&self, factor: f64) -> Self {
        Self {
            mean: self.mean * factor,
            variance: self.variance.map(|v| v * factor * factor),
        }
    }
}

/// Method-of-moments fit.
///
/// Inverts `E = αβ`, `V = αβ(β+1)` when the samples are overdispersed and
/// falls back to a Poisson with the sample mean otherwise.
pub fn fit_rate(moments: &SampleMoments, policy: FitPolicy) -> Result<RateDistribution, RateError> {
    let mean = moments.mean;
    if !mean.is_finite() || mean < 0.0 {
        return Err(RateError::InvalidParameter { name: "mean", value: mean });
    }
    if mean == 0.0 {
        return Err(RateError::UnobservedEvent);
    }
    let poisson = RateDistribution::Poisson(PoissonParams::new(mean)?);
    let Some(variance) = moments.variance else {
        return Ok(poisson);
    };
    let threshold = match policy {
        FitPolicy::Poisson => return Ok(poisson),
        FitPolicy::Auto => mean * (1.0 + EPS_FIT),
        FitPolicy::NegBin => mean,
    };
    if variance > threshold {
        let beta = variance / mean - 1.0;
        let alpha = mean / beta;
        Ok(RateDistribution::NegBin(NegBinParams::new(alpha, beta)?))
    } else {
        Ok(poisson)
    }
}
