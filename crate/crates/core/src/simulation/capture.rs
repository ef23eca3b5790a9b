use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::assign::TrueParams;
use super::generate::simulate_with_config;
use crate::dataset::TripRecord;
use crate::error::{Error, Result};
use crate::inference::{diagnose, run_mcmc, PosteriorDraws, SamplerConfig};
use crate::model::{ModelConfig, ModelGraph, Population};
use crate::stats;

/// Options of a capture-rate study beyond the sampler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureOptions {
    pub n_datasets: usize,
    pub nominal: f64,
    pub replication: usize,
    pub jitter_sd: f64,
}

impl Default for CaptureOptions {
    fn default() -> Self {
        CaptureOptions { n_datasets: 50, nominal: 0.90, replication: 6, jitter_sd: 0.27 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub name: String,
    pub truth: f64,
    pub lo: f64,
    pub hi: f64,
    pub median: f64,
    pub captured: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub seed: u64,
    pub converged: bool,
    /// Convergence-gate failures; a non-converged replicate is left out of the rates.
    pub failures: Vec<String>,
    pub intervals: Vec<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureRow {
    pub name: String,
    pub level: String,
    pub captured: usize,
    pub total: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureReport {
    pub nominal: f64,
    pub n_datasets: usize,
    pub n_excluded: usize,
    pub rows: Vec<CaptureRow>,
    pub combined_captured: usize,
    pub combined_total: usize,
    pub combined_rate: f64,
    pub replicates: Vec<ReplicateResult>,
}

/// Table group of a tracked quantity.
pub fn level_of(name: &str) -> &'static str {
    let rov = name.ends_with(",R]") || name.ends_with("[R]") || name == "sigma_yR";
    if name.starts_with('M') {
        "derived"
    } else if name.starts_with("beta0") || name.starts_with("nu_x") || name.starts_with("gamma_x") || name.starts_with("sigma_phi") {
        "3"
    } else if name.starts_with("xi") || name.starts_with("sigma_x") {
        "2.2"
    } else if rov || matches!(name, "beta1[D]" | "beta1[S]" | "beta1[T]") {
        "2.1 (R)"
    } else {
        "2.1 (D,S,T)"
    }
}

/// `(name, value)` of `M^log_ij = beta0 + nu_i + gamma_j` and
/// `M_ij = exp(M^log_ij + sigma_phi_j^2 / 2)`.
pub fn derived_values(pop: &Population) -> Vec<(String, f64)> {
    let mut out = Vec::with_capacity(8);
    for i in 1..=2 {
        for j in 1..=2 {
            let mlog = pop.cell_mean_log_phi(i, j);
            out.push((format!("Mlog[{i},{j}]"), mlog));
            out.push((format!("M[{i},{j}]"), (mlog + 0.5 * pop.sigma_phi[j - 1].powi(2)).exp()));
        }
    }
    out
}

/// Per-draw values of every tracked quantity, in `names` order.
fn tracked_draws(graph: &ModelGraph, draws: &PosteriorDraws) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let params = graph.params();
    let idx: Vec<usize> = params
        .iter()
        .map(|p| draws.column_index(&p.name).ok_or_else(|| Error::Validation(format!("draws lack `{}`", p.name))))
        .collect::<Result<_>>()?;
    let mut names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
    let mut cols: Vec<Vec<f64>> = idx.iter().map(|&j| draws.column_at(j)).collect();
    let beta0 = graph.param_by_name("beta0");
    let mut derived: Vec<Vec<f64>> = vec![Vec::with_capacity(draws.n_draws()); 8];
    let value = |name: &str, m: usize| -> f64 {
        names.iter().position(|n| n == name).map(|k| cols[k][m]).unwrap_or(0.0)
    };
    for m in 0..draws.n_draws() {
        let mut pop = Population::default();
        pop.beta0 = if beta0.is_some() { value("beta0", m) } else { 0.0 };
        pop.nu_x1 = value("nu_x[1]", m);
        pop.gamma_x1 = value("gamma_x[1]", m);
        pop.sigma_phi = [value("sigma_phi[1]", m), value("sigma_phi[2]", m)];
        for (k, (_, v)) in derived_values(&pop).into_iter().enumerate() {
            derived[k].push(v);
        }
    }
    for ((name, _), col) in derived_values(&Population::default()).into_iter().zip(derived) {
        names.push(name);
        cols.push(col);
    }
    Ok((names, cols))
}

/// Central `nominal` interval of `values` by type-7 quantiles.
pub fn central_interval(values: &[f64], nominal: f64) -> (f64, f64) {
    let sorted = stats::sorted(values);
    let lo_p = (1.0 - nominal) / 2.0;
    (stats::quantile_sorted(&sorted, lo_p), stats::quantile_sorted(&sorted, 1.0 - lo_p))
}

/// Central `nominal` credible interval check for every tracked quantity.
pub fn capture_intervals(graph: &ModelGraph, draws: &PosteriorDraws, truth: &TrueParams, nominal: f64) -> Result<Vec<Interval>> {
    let mut truths = truth.named_values(graph);
    truths.extend(derived_values(&truth.population));
    let (names, cols) = tracked_draws(graph, draws)?;
    names
        .iter()
        .zip(&cols)
        .map(|(name, col)| {
            let t = truths
                .iter()
                .find(|(n, _)| n == name)
                .map(|p| p.1)
                .ok_or_else(|| Error::Validation(format!("no true value for `{name}`")))?;
            let (lo, hi) = central_interval(col, nominal);
            Ok(Interval {
                name: name.clone(),
                truth: t,
                lo,
                hi,
                median: stats::median(col),
                captured: lo <= t && t <= hi,
            })
        })
        .collect()
}

/// Simulates, refits and scores one replicate.
pub fn run_replicate(
    truth: &TrueParams,
    base: &[TripRecord],
    options: &CaptureOptions,
    sampler: &SamplerConfig,
    index: usize,
) -> Result<ReplicateResult> {
    let seed = sampler.seed ^ index as u64;
    let config = ModelConfig::comprehensive();
    let trips = simulate_with_config(&truth.population, &config, base, options.replication, options.jitter_sd, seed)?;
    let graph = ModelGraph::build(&config, &trips)?;
    let cfg = SamplerConfig { seed, ..sampler.clone() };
    let draws = run_mcmc(&graph, &cfg)?;
    let diag = diagnose(&graph, &draws, &cfg)?;
    let intervals = capture_intervals(&graph, &draws, truth, options.nominal)?;
    Ok(ReplicateResult { index, seed, converged: diag.converged, failures: diag.failures, intervals })
}

/// Tabulates capture rates over converged replicates.
pub fn summarize(replicates: Vec<ReplicateResult>, nominal: f64) -> CaptureReport {
    let kept: Vec<&ReplicateResult> = replicates.iter().filter(|r| r.converged).collect();
    let names: Vec<String> = replicates.first().map(|r| r.intervals.iter().map(|i| i.name.clone()).collect()).unwrap_or_default();
    let rows: Vec<CaptureRow> = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let captured = kept.iter().filter(|r| r.intervals[k].captured).count();
            let total = kept.len();
            CaptureRow {
                name: name.clone(),
                level: level_of(name).to_string(),
                captured,
                total,
                rate: if total > 0 { captured as f64 / total as f64 } else { 0.0 },
            }
        })
        .collect();
    let combined_captured: usize = rows.iter().map(|r| r.captured).sum();
    let combined_total: usize = rows.iter().map(|r| r.total).sum();
    CaptureReport {
        nominal,
        n_datasets: replicates.len(),
        n_excluded: replicates.len() - kept.len(),
        combined_rate: if combined_total > 0 { combined_captured as f64 / combined_total as f64 } else { 0.0 },
        combined_captured,
        combined_total,
        rows,
        replicates,
    }
}

/// Simulates `options.n_datasets` comprehensive-model datasets from `truth`,
/// refits each and reports interval capture rates. Replicate `i` uses seed
/// `sampler.seed ^ i` for both simulation and fitting.
pub fn run_capture_study(
    truth: &TrueParams,
    base: &[TripRecord],
    options: &CaptureOptions,
    sampler: &SamplerConfig,
) -> Result<CaptureReport> {
    if options.n_datasets == 0 {
        return Err(Error::Config("n_datasets must be at least 1".into()));
    }
    if !(options.nominal > 0.0 && options.nominal < 1.0) {
        return Err(Error::Config(format!("nominal level {} not in (0, 1)", options.nominal)));
    }
    sampler.validate()?;
    let replicates = (0..options.n_datasets)
        .into_par_iter()
        .map(|i| run_replicate(truth, base, options, sampler, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(replicates, options.nominal))
}

impl CaptureReport {
    pub fn row(&self, name: &str) -> Option<&CaptureRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Pooled capture rate over the rows selected by `keep`.
    pub fn pooled_rate(&self, keep: impl Fn(&CaptureRow) -> bool) -> Option<f64> {
        let (c, t) = self.rows.iter().filter(|r| keep(r)).fold((0, 0), |(c, t), r| (c + r.captured, t + r.total));
        (t > 0).then(|| c as f64 / t as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Three side-by-side `Level | Parameter | Rate` panels: D/S/T
    /// regressions, ROV regression plus count offsets, abundance level plus
    /// derived quantities.
    pub fn render_table(&self) -> String {
        let panels: [Vec<&CaptureRow>; 3] = [
            self.rows.iter().filter(|r| r.level == "2.1 (D,S,T)").collect(),
            self.rows.iter().filter(|r| r.level == "2.1 (R)" || r.level == "2.2").collect(),
            self.rows.iter().filter(|r| r.level == "3" || r.level == "derived").collect(),
        ];
        let cell = |r: Option<&&CaptureRow>| match r {
            Some(r) => format!("{:<11} {:<14} {:>5.2}", r.level, r.name, r.rate),
            None => " ".repeat(32),
        };
        let mut s = String::new();
        let head = format!("{:<11} {:<14} {:>5}", "Level", "Parameter", "Rate");
        let _ = writeln!(s, "{head}   {head}   {head}");
        let _ = writeln!(s, "{}", "-".repeat(32 * 3 + 6));
        let depth = panels.iter().map(Vec::len).max().unwrap_or(0);
        for k in 0..depth {
            let line = format!("{}   {}   {}", cell(panels[0].get(k)), cell(panels[1].get(k)), cell(panels[2].get(k)));
            let _ = writeln!(s, "{}", line.trim_end());
        }
        let _ = writeln!(s, "{}", "-".repeat(32 * 3 + 6));
        let _ = writeln!(
            s,
            "Combined {:.2} ({} of {}); nominal {:.2}; {} of {} replicates excluded for non-convergence",
            self.combined_rate, self.combined_captured, self.combined_total, self.nominal, self.n_excluded, self.n_datasets
        );
        s
    }
}
