//! Simulation study: generating values from a final-model fit, replicated
//! datasets from the comprehensive model, refits and interval capture rates.

mod assign;
mod capture;
pub mod fixture;
mod generate;

pub use assign::{assign_sim_parameters, TrueParams, SCALE_FLOOR};
pub use capture::{
    capture_intervals, central_interval, derived_values, level_of, run_capture_study, run_replicate, summarize, CaptureOptions,
    CaptureReport, CaptureRow, Interval, ReplicateResult,
};
pub use generate::{draw_counts, draw_latents, draw_maxn, generate_trips, replicate_design, simulate_with_config, Latents};

use crate::dataset::TripRecord;
use crate::error::Result;
use crate::model::ModelConfig;

/// `replication` copies of `base` with log-jittered ratios, counts drawn
/// from the comprehensive model at `truth`.
pub fn simulate_dataset(
    truth: &TrueParams,
    base: &[TripRecord],
    replication: usize,
    jitter_sd: f64,
    seed: u64,
) -> Result<Vec<TripRecord>> {
    simulate_with_config(&truth.population, &ModelConfig::comprehensive(), base, replication, jitter_sd, seed)
}
