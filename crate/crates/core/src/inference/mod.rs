//! Adaptive MCMC over any [`Posterior`], posterior draw storage and
//! convergence / adequacy diagnostics.

mod diagnostics;
mod draws;
mod impute;
mod sampler;

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::kv_pairs;

pub use diagnostics::{
    diagnose, ess, prior_posterior_shift, rhat, DiagnosticsReport, EssEstimate, ParameterDiagnostics, PriorSpec,
};
pub use draws::{AcceptanceLedger, PosteriorDraws};
pub use impute::{impute_missing_y, ImputedCell};
pub(crate) use impute::poisson_from_log as poisson_count;
pub use sampler::{initialize_state, run_mcmc, sample, FnPosterior, Posterior};

/// Optional joint-update blocks on top of the scalar Gibbs scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSpec {
    /// `(nu_x[1], gamma_x[1])`
    LevelThreeEffects,
    /// Each trip's `log phi` together with its `log mu` vector.
    TripLatents,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub target_accept_scalar: f64,
    pub target_accept_block: f64,
    /// Iterations per adaptation batch during burn-in.
    pub adapt_window: usize,
    pub blocks: Vec<BlockSpec>,
    /// Convergence gates applied to population parameters.
    pub rhat_max: f64,
    pub ess_min: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_chains: 4,
            n_iterations: 50_000,
            burn_in: 20_000,
            thin: 10,
            seed: 1,
            target_accept_scalar: 0.44,
            target_accept_block: 0.234,
            adapt_window: 50,
            blocks: Vec::new(),
            rhat_max: 1.05,
            ess_min: 400.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::Config("n_chains must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.burn_in >= self.n_iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than n_iterations ({})",
                self.burn_in, self.n_iterations
            )));
        }
        if self.draws_per_chain() < 100 {
            return Err(Error::Config(format!(
                "(n_iterations - burn_in) / thin = {} but at least 100 stored draws per chain are required",
                self.draws_per_chain()
            )));
        }
        if self.adapt_window == 0 {
            return Err(Error::Config("adapt_window must be positive".into()));
        }
        for t in [self.target_accept_scalar, self.target_accept_block] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("target acceptance {t} not in (0, 1)")));
            }
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        self.n_iterations.saturating_sub(self.burn_in) / self.thin.max(1)
    }

    pub fn to_kv(&self) -> String {
        let blocks = self
            .blocks
            .iter()
            .map(|b| match b {
                BlockSpec::LevelThreeEffects => "level3_effects",
                BlockSpec::TripLatents => "trip_latents",
            })
            .collect::<Vec<_>>()
            .join(",");
        let mut s = String::new();
        let _ = writeln!(s, "n_chains = {}", self.n_chains);
        let _ = writeln!(s, "n_iterations = {}", self.n_iterations);
        let _ = writeln!(s, "burn_in = {}", self.burn_in);
        let _ = writeln!(s, "thin = {}", self.thin);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "target_accept_scalar = {}", self.target_accept_scalar);
        let _ = writeln!(s, "target_accept_block = {}", self.target_accept_block);
        let _ = writeln!(s, "adapt_window = {}", self.adapt_window);
        let _ = writeln!(s, "blocks = {blocks}");
        let _ = writeln!(s, "rhat_max = {}", self.rhat_max);
        let _ = writeln!(s, "ess_min = {}", self.ess_min);
        s
    }
}

fn parse_num<T: FromStr>(v: &str, line: usize) -> Result<T> {
    v.parse().map_err(|_| Error::Parse { line, message: format!("invalid number `{v}`") })
}

impl FromStr for SamplerConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut c = SamplerConfig::default();
        for (line, k, v) in kv_pairs(text)? {
            match k.as_str() {
                "n_chains" => c.n_chains = parse_num(&v, line)?,
                "n_iterations" => c.n_iterations = parse_num(&v, line)?,
                "burn_in" => c.burn_in = parse_num(&v, line)?,
                "thin" => c.thin = parse_num(&v, line)?,
                "seed" => c.seed = parse_num(&v, line)?,
                "target_accept_scalar" => c.target_accept_scalar = parse_num(&v, line)?,
                "target_accept_block" => c.target_accept_block = parse_num(&v, line)?,
                "adapt_window" => c.adapt_window = parse_num(&v, line)?,
                "blocks" => {
                    c.blocks = v
                        .split(',')
                        .map(str::trim)
                        .filter(|b| !b.is_empty())
                        .map(|b| match b {
                            "level3_effects" => Ok(BlockSpec::LevelThreeEffects),
                            "trip_latents" => Ok(BlockSpec::TripLatents),
                            _ => Err(Error::Parse { line, message: format!("unknown block `{b}`") }),
                        })
                        .collect::<Result<_>>()?
                }
                "rhat_max" => c.rhat_max = parse_num(&v, line)?,
                "ess_min" => c.ess_min = parse_num(&v, line)?,
                _ => return Err(Error::Parse { line, message: format!("unknown key `{k}`") }),
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// Worker count from `GEARCALIB_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("GEARCALIB_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Configures the global worker pool from `GEARCALIB_THREADS`. Later calls
/// are no-ops.
pub fn init_thread_pool() {
    if let Some(n) = threads_from_env() {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
