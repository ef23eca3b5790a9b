use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::draws::PosteriorDraws;
use crate::dataset::Camera;
use crate::error::{Error, Result};
use crate::model::graph::ModelGraph;
use crate::stats;

/// Posterior-predictive MaxN for one missing `(trip, camera)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputedCell {
    pub trip_id: String,
    pub camera: Camera,
    pub counts: Vec<u64>,
    pub median: f64,
    pub lo80: f64,
    pub hi80: f64,
}

/// Poisson count with mean `exp(log_mean)`; a vanishing or invalid mean gives 0.
pub(crate) fn poisson_from_log(log_mean: f64, rng: &mut ChaCha8Rng) -> u64 {
    let mean = log_mean.exp();
    if !(mean > 0.0 && mean.is_finite()) {
        return 0;
    }
    match Poisson::new(mean) {
        Ok(d) => d.sample(rng) as u64,
        Err(_) => 0,
    }
}

/// Draws one predictive count per stored draw for every missing MaxN cell.
pub fn impute_missing_y(graph: &ModelGraph, draws: &PosteriorDraws, seed: u64) -> Result<Vec<ImputedCell>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for t in graph.trips() {
        for camera in Camera::ALL {
            if t.y[camera.index()].is_some() {
                continue;
            }
            let name = format!("log_mu[{},{}]", t.trip_id, camera.code());
            let col = draws
                .column(&name)
                .map_err(|_| Error::Validation(format!("draws lack `{name}` for a missing MaxN cell")))?;
            let counts: Vec<u64> = col.iter().map(|&lm| poisson_from_log(lm, &mut rng)).collect();
            let as_f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            let sorted = stats::sorted(&as_f);
            out.push(ImputedCell {
                trip_id: t.trip_id.clone(),
                camera,
                median: stats::quantile_sorted(&sorted, 0.5),
                lo80: stats::quantile_sorted(&sorted, 0.1),
                hi80: stats::quantile_sorted(&sorted, 0.9),
                counts,
            });
        }
    }
    Ok(out)
}
