use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dataset::{validate_trips, Camera, TripRecord, RATIO_SHIFT};
use crate::error::{Error, Result};
use crate::inference::poisson_count;
use crate::model::{ModelConfig, Population};

/// Latent `log phi` and `log mu` per design trip.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    pub log_phi: Vec<f64>,
    pub log_mu: Vec<[f64; 4]>,
}

/// Draws Levels 3 and 2.1 for every design trip under `config`.
pub fn draw_latents(pop: &Population, config: &ModelConfig, design: &[TripRecord], rng: &mut ChaCha8Rng) -> Result<Latents> {
    config.validate()?;
    if design.is_empty() {
        return Err(Error::NoTrips);
    }
    let n = design.len();
    let z = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    let log_phi: Vec<f64> = design
        .iter()
        .map(|t| {
            let j = t.reef_size - 1;
            let beta0 = if config.phi_intercept_beta0 { pop.beta0 } else { 0.0 };
            beta0 + pop.nu_x(t.boat) + pop.gamma_x(t.reef_size) + pop.sigma_phi[j] * z(rng)
        })
        .collect();
    let mean_phi = log_phi.iter().sum::<f64>() / n as f64;
    let d = if config.rov_separate { 3 } else { 4 };
    let mut log_mu = vec![[0.0; 4]; n];
    for (s, t) in design.iter().enumerate() {
        let j = t.reef_size - 1;
        let lphi_t = if config.center_logphi { log_phi[s] - mean_phi } else { log_phi[s] };
        let shared: f64 = z(rng);
        for c in 0..d {
            // exchangeable residual: sigma_y (sqrt(rho) z0 + sqrt(1 - rho) z_c)
            let eps = pop.sigma_y * (pop.rho.sqrt() * shared + (1.0 - pop.rho).sqrt() * z(rng));
            log_mu[s][c] =
                pop.beta_y0[c] + pop.nu_y(t.boat, c) + pop.gamma_y(t.reef_size, c) + pop.beta1[j][c] * lphi_t + eps;
        }
    }
    if config.rov_separate {
        let mut mean_mu = [0.0; 3];
        for row in &log_mu {
            for k in 0..3 {
                mean_mu[k] += row[k] / n as f64;
            }
        }
        let r = Camera::Rov.index();
        for (s, t) in design.iter().enumerate() {
            let lphi_t = if config.center_logphi { log_phi[s] - mean_phi } else { log_phi[s] };
            let mut pred = pop.beta_y0[r] + pop.gamma_y(t.reef_size, r) + pop.beta1[t.reef_size - 1][r] * lphi_t;
            for k in 0..3 {
                let lmu = if config.center_logmu { log_mu[s][k] - mean_mu[k] } else { log_mu[s][k] };
                pred += pop.beta1_rov[k] * lmu;
            }
            log_mu[s][r] = pred + pop.sigma_yr * z(rng);
        }
    }

    Ok(Latents { log_phi, log_mu })
}

/// Poisson MaxN for every camera present in the design trip.
pub fn draw_maxn(design: &[TripRecord], latents: &Latents, rng: &mut ChaCha8Rng) -> Vec<[Option<u64>; 4]> {
    design
        .iter()
        .zip(&latents.log_mu)
        .map(|(t, lmu)| std::array::from_fn(|c| t.maxn[c].map(|_| poisson_count(lmu[c], rng))))
        .collect()
}

/// Acoustic count and, where the design trip has one, mark-recapture
/// estimate, drawn from Levels 2.2 and 1 using each trip's ratio.
///
/// Mark-recapture estimates are drawn even when `config` leaves them out
/// of the likelihood.
pub fn draw_counts(
    pop: &Population,
    config: &ModelConfig,
    design: &[TripRecord],
    latents: &Latents,
    rng: &mut ChaCha8Rng,
) -> Vec<(u64, Option<u64>)> {
    let z = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    design
        .iter()
        .zip(&latents.log_phi)
        .map(|(t, &lphi)| {
            let offset = if config.include_ratio_offset { t.pooled_ratio.ln() } else { 0.0 };
            let zeta_sd = |h: usize| if t.reef_size == 1 || !config.reef_specific_sigma_x { pop.sigma_x[h] } else { 0.0 };
            let acoustic_log = if config.include_markrecapture {
                lphi - offset + pop.xi(0) + zeta_sd(0) * z(rng)
            } else {
                lphi - offset
            };
            let acoustic = poisson_count(acoustic_log, rng);
            let markrecapture = t.markrecapture.map(|_| poisson_count(lphi + pop.xi(1) + zeta_sd(1) * z(rng), rng));
            (acoustic, markrecapture)
        })
        .collect()
}

/// Draws one trip list from Levels 3 -> 2 -> 1 of the model selected by
/// `config`, reusing each design trip's boat, reef size, camera missingness,
/// mark-recapture availability, ratio and reef type.
pub fn generate_trips(
    pop: &Population,
    config: &ModelConfig,
    design: &[TripRecord],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TripRecord>> {
    let latents = draw_latents(pop, config, design, rng)?;
    let maxn = draw_maxn(design, &latents, rng);
    let counts = draw_counts(pop, config, design, &latents, rng);
    Ok(design
        .iter()
        .zip(maxn)
        .zip(counts)
        .map(|((t, maxn), (acoustic, markrecapture))| TripRecord {
            maxn,
            acoustic_total: acoustic,
            acoustic_focal: acoustic,
            markrecapture,
            ..t.clone()
        })
        .collect())
}

/// Replicates `base` `replication` times with jittered ratios, renumbering
/// replicates in order within each `(boat, reef size)` cell.
pub fn replicate_design(base: &[TripRecord], replication: usize, jitter_sd: f64, rng: &mut ChaCha8Rng) -> Result<Vec<TripRecord>> {
    if replication == 0 {
        return Err(Error::Config("replication must be at least 1".into()));
    }
    if !(jitter_sd >= 0.0 && jitter_sd.is_finite()) {
        return Err(Error::Config(format!("jitter_sd must be finite and nonnegative, got {jitter_sd}")));
    }
    if base.is_empty() {
        return Err(Error::NoTrips);
    }
    let mut next_k = [[0usize; 2]; 2];
    let mut out = Vec::with_capacity(base.len() * replication);
    for rep in 1..=replication {
        for t in base {
            let k = &mut next_k[t.boat - 1][t.reef_size - 1];
            *k += 1;
            let ratio = if jitter_sd > 0.0 {
                let jitter = jitter_sd * rng.sample::<f64, _>(StandardNormal);
                (t.pooled_ratio.ln() + jitter).exp().clamp(RATIO_SHIFT, 1.0 + RATIO_SHIFT)
            } else {
                t.pooled_ratio
            };
            out.push(TripRecord {
                trip_id: format!("{}-r{rep}", t.trip_id),
                replicate: *k,
                pooled_ratio: ratio,
                ..t.clone()
            });
        }
    }
    Ok(out)
}

/// Simulated experiment: `base` replicated `replication` times with
/// jittered ratios, then counts drawn from the model selected by `config`.
pub fn simulate_with_config(
    pop: &Population,
    config: &ModelConfig,
    base: &[TripRecord],
    replication: usize,
    jitter_sd: f64,
    seed: u64,
) -> Result<Vec<TripRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design = replicate_design(base, replication, jitter_sd, &mut rng)?;
    let trips = generate_trips(pop, config, &design, &mut rng)?;
    validate_trips(&trips)?;
    Ok(trips)
}
