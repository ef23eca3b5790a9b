use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::draws::PosteriorDraws;
use super::SamplerConfig;
use crate::error::{Error, Result};
use crate::model::graph::{ModelGraph, Transform};
use crate::stats;

fn equal_length_chains(chains: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    chains.into_iter().map(|mut c| {
        c.truncate(n);
        c
    }).collect()
}

/// Split-chain potential scale reduction factor.
pub fn rhat(draws: &PosteriorDraws, param: &str) -> Result<f64> {
    let chains = draws.column_by_chain(param)?;
    rhat_chains(&chains)
}

pub(crate) fn rhat_chains(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Diagnostic("R-hat needs at least two chains".into()));
    }
    let chains = equal_length_chains(chains.to_vec());
    let half = chains[0].len() / 2;
    if half < 2 {
        return Err(Error::Diagnostic("chains too short for split R-hat".into()));
    }
    let n = chains[0].len();
    let mut split = Vec::with_capacity(2 * chains.len());
    for c in &chains {
        split.push(&c[..half]);
        split.push(&c[n - half..]);
    }
    let means: Vec<f64> = split.iter().map(|c| stats::mean(c)).collect();
    let w = split.iter().map(|c| stats::variance(c)).sum::<f64>() / split.len() as f64;
    let b_over_n = stats::variance(&means);
    let nh = half as f64;
    if w == 0.0 {
        return Ok(if b_over_n == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (nh - 1.0) / nh * w + b_over_n;
    Ok((var_plus / w).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssEstimate {
    pub ess: f64,
    /// The chains were constant; `ess` is then the draw count.
    pub constant: bool,
}

/// Multi-chain effective sample size with Geyer's initial positive sequence:
/// autocorrelation pairs are summed until the first negative pair sum.
pub fn ess(draws: &PosteriorDraws, param: &str) -> Result<EssEstimate> {
    let chains = draws.column_by_chain(param)?;
    ess_chains(&chains)
}

pub(crate) fn ess_chains(chains: &[Vec<f64>]) -> Result<EssEstimate> {
    let total: usize = chains.iter().map(Vec::len).sum();
    if total < 100 {
        return Err(Error::Diagnostic(format!("ESS needs at least 100 draws, got {total}")));
    }
    let chains = equal_length_chains(chains.to_vec());
    let m = chains.len();
    let n = chains[0].len();
    let big_m = (m * n) as f64;
    let first = chains[0][0];
    if chains.iter().flatten().all(|&v| v == first) {
        return Ok(EssEstimate { ess: total as f64, constant: true });
    }
    let means: Vec<f64> = chains.iter().map(|c| stats::mean(c)).collect();
    let centered: Vec<Vec<f64>> = chains.iter().zip(&means).map(|(c, mu)| c.iter().map(|v| v - mu).collect()).collect();
    let nf = n as f64;
    let acov = |lag: usize| -> f64 {
        centered
            .iter()
            .map(|c| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / nf)
            .sum::<f64>()
            / m as f64
    };
    let acov0 = acov(0);
    let w = acov0 * nf / (nf - 1.0);
    let b_over_n = if m > 1 { stats::variance(&means) } else { 0.0 };
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    if var_plus <= 0.0 {
        return Ok(EssEstimate { ess: total as f64, constant: true });
    }
    let rho = |lag: usize| -> f64 {
        if lag == 0 {
            1.0
        } else {
            1.0 - (w - acov(lag)) / var_plus
        }
    };
    let mut sum_pairs = 0.0;
    let mut k = 0;
    while 2 * k + 1 < n - 1 {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair < 0.0 {
            break;
        }
        sum_pairs += pair;
        k += 1;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / big_m.log10().max(1.0));
    Ok(EssEstimate { ess: big_m / tau, constant: false })
}

/// Normal prior on the sampling scale of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub transform: Transform,
    pub mean: f64,
    pub sd: f64,
}

impl PriorSpec {
    /// The prior attached to a population parameter of `graph`.
    pub fn for_parameter(graph: &ModelGraph, name: &str) -> Result<PriorSpec> {
        let p = graph
            .params()
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Diagnostic(format!("`{name}` is not a population parameter with a prior")))?;
        Ok(PriorSpec { transform: p.transform, mean: 0.0, sd: p.prior_sd })
    }
}

impl FromStr for PriorSpec {
    type Err = Error;

    /// Parses `normal(m, s)`, `lognormal(m, s)` or `logitnormal(m, s)`, where
    /// `(m, s)` apply on the identity, log or logit scale.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Diagnostic(format!("unknown prior form `{s}`"));
        let (form, rest) = s.split_once('(').ok_or_else(bad)?;
        let args = rest.strip_suffix(')').ok_or_else(bad)?;
        let nums: Vec<f64> = args.split(',').map(|a| a.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
        let transform = match form.trim() {
            "normal" => Transform::Identity,
            "lognormal" => Transform::Log,
            "logitnormal" => Transform::Logit,
            _ => return Err(bad()),
        };
        match nums[..] {
            [mean, sd] if sd > 0.0 => Ok(PriorSpec { transform, mean, sd }),
            _ => Err(bad()),
        }
    }
}

/// `1 - overlap` between a kernel density estimate of the posterior and the
/// analytic prior, both on the sampling scale.
pub fn prior_posterior_shift(draws: &PosteriorDraws, param: &str, prior: &PriorSpec) -> Result<f64> {
    let values = draws.column(param)?;
    shift_from_values(&values, prior)
}

pub(crate) fn shift_from_values(values: &[f64], prior: &PriorSpec) -> Result<f64> {
    if !(prior.sd > 0.0 && prior.sd.is_finite()) {
        return Err(Error::Diagnostic(format!("prior sd must be positive, got {}", prior.sd)));
    }
    let u: Vec<f64> = values
        .iter()
        .map(|&v| prior.transform.to_unconstrained(v).unwrap_or(f64::NAN))
        .filter(|v| v.is_finite())
        .collect();
    if u.len() < 2 {
        return Err(Error::Diagnostic("too few finite posterior values for a density estimate".into()));
    }
    let sorted = stats::sorted(&u);
    let sd = stats::variance(&u).sqrt();
    let iqr = stats::quantile_sorted(&sorted, 0.75) - stats::quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if spread <= 0.0 {
        // a point mass shares no area with a continuous prior
        return Ok(1.0);
    }
    let bw = 0.9 * spread * (u.len() as f64).powf(-0.2);
    let lo = (sorted[0] - 4.0 * bw).min(prior.mean - 6.0 * prior.sd);
    let hi = (sorted[sorted.len() - 1] + 4.0 * bw).max(prior.mean + 6.0 * prior.sd);
    let n_grid = (((hi - lo) / (bw / 4.0)).ceil() as usize).clamp(512, 200_000);
    let step = (hi - lo) / (n_grid - 1) as f64;

    // linear binning, then a truncated Gaussian convolution
    let mut weights = vec![0.0; n_grid];
    for &v in &u {
        let pos = (v - lo) / step;
        let k = (pos.floor() as usize).min(n_grid - 2);
        let frac = pos - k as f64;
        weights[k] += 1.0 - frac;
        weights[k + 1] += frac;
    }
    let reach = ((4.0 * bw / step).ceil() as usize).max(1);
    let kernel: Vec<f64> = (0..=reach)
        .map(|d| {
            let z = d as f64 * step / bw;
            (-0.5 * z * z).exp() / (bw * (2.0 * std::f64::consts::PI).sqrt())
        })
        .collect();
    let n = u.len() as f64;
    let mut overlap = 0.0;
    for g in 0..n_grid {
        let from = g.saturating_sub(reach);
        let to = (g + reach).min(n_grid - 1);
        let mut dens = 0.0;
        for k in from..=to {
            dens += weights[k] * kernel[k.abs_diff(g)];
        }
        dens /= n;
        let x = lo + g as f64 * step;
        let z = (x - prior.mean) / prior.sd;
        let prior_dens = (-0.5 * z * z).exp() / (prior.sd * (2.0 * std::f64::consts::PI).sqrt());
        overlap += dens.min(prior_dens) * step;
    }
    Ok((1.0 - overlap).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
    pub rhat: Option<f64>,
    pub ess: f64,
    pub ess_constant: bool,
    pub prior_posterior_shift: Option<f64>,
    pub acceptance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n_chains: usize,
    pub n_draws: usize,
    /// R-hat gate.
    pub rhat_max: f64,
    /// ESS gate.
    pub ess_min: f64,
    pub converged: bool,
    pub failures: Vec<String>,
    pub parameters: Vec<ParameterDiagnostics>,
}

/// Summaries, convergence diagnostics and prior-posterior shift for each
/// population parameter of `graph`, with the sampler's convergence gates.
pub fn diagnose(graph: &ModelGraph, draws: &PosteriorDraws, config: &SamplerConfig) -> Result<DiagnosticsReport> {
    let named: Vec<(String, Option<PriorSpec>)> = graph
        .params()
        .iter()
        .map(|p| (p.name.clone(), Some(PriorSpec { transform: p.transform, mean: 0.0, sd: p.prior_sd })))
        .collect();
    diagnose_columns(draws, &named, config)
}

pub fn diagnose_columns(
    draws: &PosteriorDraws,
    columns: &[(String, Option<PriorSpec>)],
    config: &SamplerConfig,
) -> Result<DiagnosticsReport> {
    let mut parameters = Vec::new();
    let mut failures = Vec::new();
    let multi = draws.n_chains() >= 2;
    for (name, prior) in columns {
        let values = draws.column(name)?;
        let chains = draws.column_by_chain(name)?;
        let sorted = stats::sorted(&values);
        let r = if multi { Some(rhat_chains(&chains)?) } else { None };
        let e = ess_chains(&chains)?;
        let shift = match prior {
            Some(p) => Some(shift_from_values(&values, p)?),
            None => None,
        };
        if let Some(r) = r {
            if !(r < config.rhat_max) {
                failures.push(format!("{name}: R-hat {r:.3} >= {}", config.rhat_max));
            }
        }
        if !e.constant && !(e.ess > config.ess_min) {
            failures.push(format!("{name}: ESS {:.0} <= {}", e.ess, config.ess_min));
        }
        parameters.push(ParameterDiagnostics {
            name: name.clone(),
            mean: stats::mean(&values),
            sd: stats::variance(&values).sqrt(),
            median: stats::quantile_sorted(&sorted, 0.5),
            q05: stats::quantile_sorted(&sorted, 0.05),
            q95: stats::quantile_sorted(&sorted, 0.95),
            rhat: r,
            ess: e.ess,
            ess_constant: e.constant,
            prior_posterior_shift: shift,
            acceptance: draws.acceptance.mean_rate(name),
        });
    }
    Ok(DiagnosticsReport {
        n_chains: draws.n_chains(),
        n_draws: draws.n_draws(),
        rhat_max: config.rhat_max,
        ess_min: config.ess_min,
        converged: failures.is_empty(),
        failures,
        parameters,
    })
}
