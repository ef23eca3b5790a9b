//! Scalar and multivariate log-densities used by the model graph.

use std::f64::consts::PI;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * LN_2PI
}

/// Poisson log-pmf at `count` with log-mean `log_rate`; `ln_fact` is `ln(count!)`.
#[inline]
pub fn poisson_logpmf_log_rate(count: f64, log_rate: f64, ln_fact: f64) -> f64 {
    if count == 0.0 {
        -log_rate.exp()
    } else {
        count * log_rate - log_rate.exp() - ln_fact
    }
}

pub fn ln_factorial(n: u64) -> f64 {
    statrs::function::gamma::ln_gamma(n as f64 + 1.0)
}

#[inline]
pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Unchecked closed form of `log N(residuals | 0, sigma^2 P)` with `P` the
/// exchangeable correlation matrix.
#[inline]
pub(crate) fn exchangeable_mvn_unchecked(residuals: &[f64], sigma: f64, rho: f64) -> f64 {
    let d = residuals.len() as f64;
    let s2 = sigma * sigma;
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for &e in residuals {
        sum += e;
        sumsq += e * e;
    }
    let lead = 1.0 + (d - 1.0) * rho;
    let tail = 1.0 - rho;
    // eigenvalues: s2 * lead (once), s2 * tail (d - 1 times)
    let logdet = d * s2.ln() + lead.ln() + (d - 1.0) * tail.ln();
    let quad = (sumsq - rho / lead * sum * sum) / (s2 * tail);
    -0.5 * (d * LN_2PI + logdet + quad)
}

/// Log-density of a zero-mean normal vector with covariance `sigma^2 P`,
/// `P` having unit diagonal and constant off-diagonal `rho`.
pub fn exchangeable_mvn_logdensity(residuals: &[f64], sigma: f64, rho: f64) -> Result<f64> {
    let d = residuals.len();
    if d < 2 {
        return Err(Error::Domain(format!("exchangeable MVN needs d >= 2, got {d}")));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let lower = -1.0 / (d as f64 - 1.0);
    if !(rho > lower && rho < 1.0) {
        return Err(Error::Domain(format!(
            "rho = {rho} outside the positive-definite range ({lower}, 1) for d = {d}"
        )));
    }
    if residuals.iter().any(|e| !e.is_finite()) {
        return Err(Error::Domain("non-finite residual".into()));
    }
    Ok(exchangeable_mvn_unchecked(residuals, sigma, rho))
}

/// 3x3 correlation matrix from canonical partial correlations
/// `(p12, p13, p23|1)`, each in (-1, 1). Always positive definite.
pub fn correlation_from_partials(p: [f64; 3]) -> [[f64; 3]; 3] {
    let [p12, p13, p23_1] = p;
    let r23 = p23_1 * ((1.0 - p12 * p12) * (1.0 - p13 * p13)).sqrt() + p12 * p13;
    [[1.0, p12, p13], [p12, 1.0, r23], [p13, r23, 1.0]]
}

/// Log-density of `N(0, sigma^2 R)` for a 3-vector with a general correlation
/// matrix `R`, via Cholesky.
pub(crate) fn mvn3_logdensity(residuals: &[f64; 3], sigma: f64, r: &[[f64; 3]; 3]) -> f64 {
    // Cholesky of R
    let l00 = 1.0;
    let l10 = r[1][0];
    let l11 = (1.0 - l10 * l10).sqrt();
    let l20 = r[2][0];
    let l21 = (r[2][1] - l20 * l10) / l11;
    let l22 = (1.0 - l20 * l20 - l21 * l21).sqrt();
    let z0 = residuals[0] / sigma / l00;
    let z1 = (residuals[1] / sigma - l10 * z0) / l11;
    let z2 = (residuals[2] / sigma - l20 * z0 - l21 * z1) / l22;
    let logdet = 3.0 * (2.0 * sigma.ln()) + 2.0 * (l11.ln() + l22.ln());
    -0.5 * (3.0 * (2.0 * PI).ln() + logdet + z0 * z0 + z1 * z1 + z2 * z2)
}
