//! Bayesian calibration of camera MaxN indices against acoustic and
//! mark-recapture abundance.

pub mod calibration;
pub mod dataset;
pub mod error;
pub mod inference;
pub mod model;
pub mod ratio;
pub mod simulation;
pub mod stats;

pub use dataset::{Camera, SpeciesMaxNTable, TripRecord};
pub use error::{Error, Result};
pub use model::{build_model, ModelConfig, ModelGraph, ParameterState};
pub use inference::{run_mcmc, PosteriorDraws, SamplerConfig};
pub use calibration::{apply_calibration, CalibrationPack};
pub use ratio::{fit_ratio_regression, predict_pooled_ratio, RatioRegressionModel};
pub use simulation::{assign_sim_parameters, run_capture_study, simulate_dataset, CaptureReport, TrueParams};
