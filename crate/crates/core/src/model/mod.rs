//! The calibration model family: configuration, densities and the joint graph.

pub mod config;
pub mod density;
pub mod graph;
mod moves;

pub use config::{Correlation, ModelConfig, MuIntercepts, SlopeCell};
pub use density::exchangeable_mvn_logdensity;
pub use graph::{
    EvalContext, LatentValues, ModelGraph, Node, NodeKind, ParamSpec, ParameterState, Population, Target,
    Transform, TripDesign, TripLatents,
};

use crate::dataset::TripRecord;
use crate::error::Result;

pub fn build_model(config: &ModelConfig, trips: &[TripRecord]) -> Result<ModelGraph> {
    ModelGraph::build(config, trips)
}

pub fn log_posterior(graph: &ModelGraph, state: &ParameterState) -> Result<f64> {
    graph.log_posterior(state)
}

pub fn sub_log_likelihood(graph: &ModelGraph, state: &ParameterState, node_set: &[usize]) -> Result<f64> {
    graph.sub_log_likelihood(state, node_set)
}
