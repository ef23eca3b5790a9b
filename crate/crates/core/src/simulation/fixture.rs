//! A synthetic stand-in for the calibration experiment: the 21-trip
//! boat x reef-size design with its camera gaps and mark-recapture
//! coverage, counts drawn from fixed final-model parameters, and a
//! per-species MaxN table from which the pooled ratios are computed.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::generate::{draw_counts, draw_latents, draw_maxn};
use crate::dataset::{compute_pooled_ratio, validate_trips, Camera, SpeciesFlags, SpeciesMaxNTable, SpeciesRow, TripRecord};
use crate::error::Result;
use crate::inference::poisson_count;
use crate::model::{ModelConfig, Population};

pub const FIXTURE_SEED: u64 = 20_240_521;

pub const GAJ: &str = "greater_amberjack";
const OTHER_GAJ_PLUS: [&str; 2] = ["almaco_jack", "lesser_amberjack"];
const NOT_GAJ_PLUS: &str = "red_snapper";

#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub trips: Vec<TripRecord>,
    pub species: SpeciesMaxNTable,
    pub truth: Population,
}

/// Generating values on the final-model structure.
pub fn fixture_truth() -> Population {
    Population {
        nu_x1: 0.6,
        gamma_x1: 1.4,
        sigma_phi: [0.6, 0.5],
        beta_y0: [0.6, 0.9, 0.3, 1.0],
        beta1: [[0.8, 0.9, 0.6, 1.0], [0.5, 0.4, 0.3, 0.5]],
        rho: 0.4,
        sigma_y: 0.5,
        ..Population::default()
    }
}

/// `(boat, reef size, reef type, present cameras D/S/T/R, has mark-recapture)`
type DesignRow = (usize, usize, &'static str, [bool; 4], bool);

const ALL: [bool; 4] = [true; 4];
const NO_D: [bool; 4] = [false, true, true, true];
const NO_R: [bool; 4] = [true, true, true, false];
const NO_DR: [bool; 4] = [false, true, true, false];

const DESIGN: [DesignRow; 21] = [
    (1, 1, "super pyramid", ALL, true),
    (1, 1, "super pyramid", ALL, true),
    (2, 1, "super pyramid", NO_R, true),
    (1, 1, "pyramid", ALL, false),
    (1, 2, "chicken coop", ALL, false),
    (1, 1, "super pyramid", NO_D, true),
    (2, 1, "tank", NO_R, false),
    (1, 1, "super pyramid", ALL, true),
    (2, 2, "rock outcrop", NO_R, false),
    (1, 1, "pyramid", ALL, false),
    (1, 1, "super pyramid", ALL, true),
    (2, 1, "super pyramid", NO_DR, true),
    (1, 1, "tank", NO_R, false),
    (1, 2, "large rocks", NO_D, false),
    (1, 1, "super pyramid", ALL, true),
    (2, 1, "pyramid", NO_R, false),
    (1, 1, "super pyramid", ALL, true),
    (2, 2, "large rocks", NO_DR, false),
    (1, 1, "pyramid", ALL, false),
    (1, 1, "tank", ALL, false),
    (1, 1, "super pyramid", ALL, true),
];

/// The 21-trip design with placeholder counts and ratio 0.5.
pub fn study_design() -> Vec<TripRecord> {
    let mut next_k = [[0usize; 2]; 2];
    DESIGN
        .iter()
        .enumerate()
        .map(|(s, &(boat, reef, label, present, mr))| {
            let k = &mut next_k[boat - 1][reef - 1];
            *k += 1;
            TripRecord {
                trip_id: format!("T{:02}", s + 1),
                boat,
                reef_size: reef,
                replicate: *k,
                maxn: present.map(|p| p.then_some(0)),
                acoustic_total: 0,
                acoustic_focal: 0,
                markrecapture: mr.then_some(0),
                pooled_ratio: 0.5,
                reef_type: label.to_string(),
            }
        })
        .collect()
}

pub fn species_registry() -> BTreeMap<String, SpeciesFlags> {
    let mut r = BTreeMap::new();
    r.insert(GAJ.to_string(), SpeciesFlags { is_gaj: true, is_gaj_plus: true });
    for s in OTHER_GAJ_PLUS {
        r.insert(s.to_string(), SpeciesFlags { is_gaj: false, is_gaj_plus: true });
    }
    r.insert(NOT_GAJ_PLUS.to_string(), SpeciesFlags { is_gaj: false, is_gaj_plus: false });
    r
}

/// Per-species MaxN for one camera given its GAJ MaxN and the trip's GAJ
/// share of GAJ+ fish. Every deployed camera sees at least one GAJ+ fish.
fn species_rows(trip_id: &str, camera: Camera, gaj: u64, share: f64, rng: &mut ChaCha8Rng) -> Vec<SpeciesRow> {
    let others = poisson_count((gaj as f64 * (1.0 - share) / share + 0.3).ln(), rng);
    let first = others / 2 + u64::from(gaj + others == 0);
    let counts = [(GAJ, gaj), (OTHER_GAJ_PLUS[0], first), (OTHER_GAJ_PLUS[1], others - others / 2)];
    let mut rows: Vec<SpeciesRow> = counts
        .iter()
        .map(|&(id, maxn)| SpeciesRow { trip_id: trip_id.to_string(), camera, species_id: id.to_string(), maxn })
        .collect();
    rows.push(SpeciesRow {
        trip_id: trip_id.to_string(),
        camera,
        species_id: NOT_GAJ_PLUS.to_string(),
        maxn: poisson_count(3f64.ln(), rng),
    });
    rows
}

/// Draws the fixture for `design` from the final model with parameters
/// `truth`. Mark-recapture estimates are drawn as `Pois(phi)`.
pub fn generate_fixture(truth: &Population, design: &[TripRecord], seed: u64) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig::final_model();
    let latents = draw_latents(truth, &config, design, &mut rng)?;
    let maxn = draw_maxn(design, &latents, &mut rng);
    let mut rows = Vec::new();
    for (t, m) in design.iter().zip(&maxn) {
        let share: f64 = rng.gen_range(0.35..0.9);
        for cam in Camera::ALL {
            if let Some(y) = m[cam.index()] {
                rows.extend(species_rows(&t.trip_id, cam, y, share, &mut rng));
            }
        }
    }
    let species = SpeciesMaxNTable::new(rows, species_registry())?;
    let mut trips: Vec<TripRecord> = design
        .iter()
        .zip(maxn)
        .map(|(t, m)| TripRecord { maxn: m, ..t.clone() })
        .collect();
    for t in &mut trips {
        t.pooled_ratio = compute_pooled_ratio(&species, &t.trip_id, &t.present_cameras())?;
    }
    let mr_truth = Population { xi1: 0.0, sigma_x: [0.0; 2], ..truth.clone() };
    let counts = draw_counts(&mr_truth, &config, &trips, &latents, &mut rng);
    for (t, (n, mr)) in trips.iter_mut().zip(counts) {
        t.acoustic_total = n;
        t.acoustic_focal = n;
        t.markrecapture = mr;
    }
    validate_trips(&trips)?;
    Ok(Fixture { trips, species, truth: truth.clone() })
}

/// The default fixture: [`study_design`] drawn from [`fixture_truth`].
pub fn default_fixture() -> Result<Fixture> {
    generate_fixture(&fixture_truth(), &study_design(), FIXTURE_SEED)
}
