//! Per-draw regressions of latent abundance on observed quantities:
//! adequacy alignment, camera calibration formulae, calibration errors and the
//! serialized calibration pack.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Camera, TripRecord};
use crate::error::{Error, Result};
use crate::inference::PosteriorDraws;
use crate::model::ModelConfig;
use crate::ratio::{fit_ratio_regression, RatioRegressionModel};
use crate::stats;

pub const PACK_SCHEMA: &str = "gearcalib.pack/v1";

/// A fitted line whose slope is constrained to be non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub residual_sd: f64,
    pub r2: f64,
    pub n_points: usize,
    /// The unconstrained slope was negative and has been set to zero.
    pub clamped: bool,
}

/// Least squares of `y` on `x`; a negative slope is replaced by the flat line
/// through `mean(y)`.
pub fn constrained_ls(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::Regression(format!("x has {n} values but y has {}", y.len())));
    }
    if n < 2 {
        return Err(Error::Regression("at least two points are required".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= 0.0 {
        return Err(Error::Regression("x is constant".into()));
    }
    let ols = sxy / sxx;
    let (intercept, slope, clamped) = if ols < 0.0 { (my, 0.0, true) } else { (my - ols * mx, ols, false) };
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let residual_sd = if n > 2 { (sse / (nf - 2.0)).sqrt() } else { 0.0 };
    let r2 = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 0.0 };
    Ok(LineFit { intercept, slope, residual_sd, r2, n_points: n, clamped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub mean: f64,
    pub median: f64,
    pub variance: f64,
    pub q10: f64,
    pub q90: f64,
}

impl CoefficientSummary {
    pub fn of(values: &[f64]) -> Self {
        let sorted = stats::sorted(values);
        CoefficientSummary {
            mean: stats::mean(values),
            median: stats::quantile_sorted(&sorted, 0.5),
            variance: stats::variance(values),
            q10: stats::quantile_sorted(&sorted, 0.1),
            q90: stats::quantile_sorted(&sorted, 0.9),
        }
    }
}

/// Summary of the per-draw `phi`-on-regressor lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub regressor: String,
    pub n_trips: usize,
    pub c0: CoefficientSummary,
    pub c1: CoefficientSummary,
    /// `(median c0, median c1)`
    pub median_line: [f64; 2],
    pub median_r2: f64,
    pub median_residual_sd: f64,
    pub n_clamped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentFit {
    pub summary: AlignmentSummary,
    pub c0: Vec<f64>,
    pub c1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdequacyBlock {
    pub acoustic: AlignmentFit,
    pub markrecapture: Option<AlignmentFit>,
    /// Why the mark-recapture regression was omitted, if it was.
    pub markrecapture_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdequacySummary {
    pub acoustic: AlignmentSummary,
    pub markrecapture: Option<AlignmentSummary>,
    pub markrecapture_note: Option<String>,
}

impl AdequacyBlock {
    pub fn summary(&self) -> AdequacySummary {
        AdequacySummary {
            acoustic: self.acoustic.summary.clone(),
            markrecapture: self.markrecapture.as_ref().map(|m| m.summary.clone()),
            markrecapture_note: self.markrecapture_note.clone(),
        }
    }
}

/// `phi[m][s] = exp(log_phi[trip s])` for every stored draw.
fn phi_matrix(draws: &PosteriorDraws, trips: &[TripRecord]) -> Result<Vec<Vec<f64>>> {
    let cols = trips
        .iter()
        .map(|t| {
            let name = format!("log_phi[{}]", t.trip_id);
            draws.column_index(&name).ok_or_else(|| Error::Validation(format!("draws lack `{name}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..draws.n_draws())
        .map(|m| {
            let row = draws.row(m);
            cols.iter().map(|&c| row[c].exp()).collect()
        })
        .collect())
}

/// Regresses each draw's `phi` subset (`select`) on `x`.
fn per_draw_fits(phi: &[Vec<f64>], select: &[usize], x: &[f64]) -> Result<Vec<LineFit>> {
    phi.par_iter()
        .map(|row| {
            let y: Vec<f64> = select.iter().map(|&s| row[s]).collect();
            constrained_ls(x, &y)
        })
        .collect()
}

fn alignment(regressor: &str, fits: &[LineFit]) -> AlignmentFit {
    let c0: Vec<f64> = fits.iter().map(|f| f.intercept).collect();
    let c1: Vec<f64> = fits.iter().map(|f| f.slope).collect();
    let r2: Vec<f64> = fits.iter().map(|f| f.r2).collect();
    let sd: Vec<f64> = fits.iter().map(|f| f.residual_sd).collect();
    let c0s = CoefficientSummary::of(&c0);
    let c1s = CoefficientSummary::of(&c1);
    AlignmentFit {
        summary: AlignmentSummary {
            regressor: regressor.to_string(),
            n_trips: fits.first().map_or(0, |f| f.n_points),
            median_line: [c0s.median, c1s.median],
            c0: c0s,
            c1: c1s,
            median_r2: stats::median(&r2),
            median_residual_sd: stats::median(&sd),
            n_clamped: fits.iter().filter(|f| f.clamped).count(),
        },
        c0,
        c1,
    }
}

/// Per-draw constrained regressions of `phi` on `r N` (all trips) and on the
/// mark-recapture estimate (trips that have one).
pub fn adequacy_alignment(draws: &PosteriorDraws, trips: &[TripRecord]) -> Result<AdequacyBlock> {
    let phi = phi_matrix(draws, trips)?;
    let all: Vec<usize> = (0..trips.len()).collect();
    let rn: Vec<f64> = trips.iter().map(TripRecord::adjusted_acoustic).collect();
    let acoustic = alignment("rN", &per_draw_fits(&phi, &all, &rn)?);
    let mr_idx: Vec<usize> = (0..trips.len()).filter(|&s| trips[s].markrecapture.is_some()).collect();
    let (markrecapture, markrecapture_note) = if mr_idx.len() < 2 {
        (None, Some(format!("only {} trips have a mark-recapture estimate", mr_idx.len())))
    } else {
        let x: Vec<f64> = mr_idx.iter().map(|&s| trips[s].markrecapture.unwrap_or(0) as f64).collect();
        match per_draw_fits(&phi, &mr_idx, &x) {
            Ok(fits) => (Some(alignment("N_mr", &fits)), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    Ok(AdequacyBlock { acoustic, markrecapture, markrecapture_note })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub trip_id: String,
    pub reef_type: String,
    pub maxn: u64,
    pub median: f64,
    pub lo80: f64,
    pub hi80: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianLine {
    pub b0: f64,
    pub b1: f64,
}

/// Calibration of one camera: per-draw coefficients and their summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraCalibration {
    pub camera: Camera,
    pub n_trips: usize,
    pub b0: Vec<f64>,
    pub b1: Vec<f64>,
    pub b0_summary: CoefficientSummary,
    pub b1_summary: CoefficientSummary,
    pub cov_b0_b1: f64,
    pub corr_b0_b1: f64,
    pub median_line: MedianLine,
    pub median_r2: f64,
    pub median_residual_sd: f64,
    pub n_clamped: usize,
    pub error_table: Vec<ErrorRow>,
}

fn observed(trips: &[TripRecord], camera: Camera) -> (Vec<usize>, Vec<f64>) {
    let idx: Vec<usize> = (0..trips.len()).filter(|&s| trips[s].maxn_of(camera).is_some()).collect();
    let x = idx.iter().map(|&s| trips[s].maxn_of(camera).unwrap_or(0) as f64).collect();
    (idx, x)
}

/// Per-draw regressions of `phi` on camera `camera`'s MaxN over the trips where
/// it was observed. The error table is left empty; see [`calibration_error`].
pub fn derive_calibration(draws: &PosteriorDraws, trips: &[TripRecord], camera: Camera) -> Result<CameraCalibration> {
    let (idx, x) = observed(trips, camera);
    if idx.len() < 3 {
        return Err(Error::Regression(format!("camera {camera} observed on {} trips; at least 3 needed", idx.len())));
    }
    let phi = phi_matrix(draws, trips)?;
    let fits = per_draw_fits(&phi, &idx, &x)?;
    let b0: Vec<f64> = fits.iter().map(|f| f.intercept).collect();
    let b1: Vec<f64> = fits.iter().map(|f| f.slope).collect();
    let r2: Vec<f64> = fits.iter().map(|f| f.r2).collect();
    let sd: Vec<f64> = fits.iter().map(|f| f.residual_sd).collect();
    let b0_summary = CoefficientSummary::of(&b0);
    let b1_summary = CoefficientSummary::of(&b1);
    Ok(CameraCalibration {
        camera,
        n_trips: idx.len(),
        cov_b0_b1: stats::covariance(&b0, &b1),
        corr_b0_b1: stats::correlation(&b0, &b1),
        median_line: MedianLine { b0: b0_summary.median, b1: b1_summary.median },
        median_r2: stats::median(&r2),
        median_residual_sd: stats::median(&sd),
        n_clamped: fits.iter().filter(|f| f.clamped).count(),
        b0,
        b1,
        b0_summary,
        b1_summary,
        error_table: Vec::new(),
    })
}

/// Posterior of `(median-line prediction at y) - phi` for each trip with the
/// camera observed: median and central 80% interval.
pub fn calibration_error(
    draws: &PosteriorDraws,
    entry: &CameraCalibration,
    trips: &[TripRecord],
) -> Result<Vec<ErrorRow>> {
    let (idx, x) = observed(trips, entry.camera);
    let phi = phi_matrix(draws, trips)?;
    let mut rows = Vec::with_capacity(idx.len());
    for (&s, &y) in idx.iter().zip(&x) {
        let pred = entry.median_line.b0 + entry.median_line.b1 * y;
        let err: Vec<f64> = phi.iter().map(|row| pred - row[s]).collect();
        let sorted = stats::sorted(&err);
        rows.push(ErrorRow {
            trip_id: trips[s].trip_id.clone(),
            reef_type: trips[s].reef_type.clone(),
            maxn: y as u64,
            median: stats::quantile_sorted(&sorted, 0.5),
            lo80: stats::quantile_sorted(&sorted, 0.1),
            hi80: stats::quantile_sorted(&sorted, 0.9),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationEstimate {
    pub estimate: f64,
    pub approx_se: f64,
}

/// Converts a MaxN count to estimated abundance with the median line and an
/// affine-propagation standard error.
pub fn apply_calibration(pack: &CalibrationPack, camera: Camera, maxn: i64) -> Result<CalibrationEstimate> {
    let entry = pack.camera(camera)?;
    apply_entry(entry, maxn)
}

pub fn apply_entry(entry: &CameraCalibration, maxn: i64) -> Result<CalibrationEstimate> {
    if maxn < 0 {
        return Err(Error::Domain(format!("maxn must be non-negative, got {maxn}")));
    }
    let m = maxn as f64;
    let var = entry.b0_summary.variance + m * m * entry.b1_summary.variance + 2.0 * m * entry.cov_b0_b1;
    Ok(CalibrationEstimate {
        estimate: entry.median_line.b0 + entry.median_line.b1 * m,
        approx_se: var.max(0.0).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_config_hash: String,
    pub model_config: String,
    pub seed: u64,
    pub draw_count: usize,
    pub n_trips: usize,
}

/// Versioned calibration document consumed by the service and the widget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPack {
    pub schema: String,
    pub cameras: Vec<CameraCalibration>,
    pub adequacy: AdequacySummary,
    pub paired: Vec<RatioRegressionModel>,
    pub provenance: Provenance,
    pub warnings: Vec<String>,
    pub caveats: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct PackInputs<'a> {
    pub draws: &'a PosteriorDraws,
    pub trips: &'a [TripRecord],
    pub model_config: &'a ModelConfig,
    pub seed: u64,
    /// Per-trip camera-specific ratios (D, S, T, R), when a species table is available.
    pub camera_ratios: Option<&'a [[Option<f64>; 4]]>,
}

/// Assembles a pack: calibration and error table per camera with at least
/// three observations, the adequacy block, and paired-mode ratio regressions.
pub fn build_pack(inputs: &PackInputs) -> Result<CalibrationPack> {
    let mut warnings = Vec::new();
    let mut cameras = Vec::new();
    for camera in Camera::ALL {
        match derive_calibration(inputs.draws, inputs.trips, camera) {
            Ok(mut entry) => {
                entry.error_table = calibration_error(inputs.draws, &entry, inputs.trips)?;
                cameras.push(entry);
            }
            Err(Error::Regression(msg)) => warnings.push(format!("camera {camera} skipped: {msg}")),
            Err(e) => return Err(e),
        }
    }
    let adequacy = adequacy_alignment(inputs.draws, inputs.trips)?.summary();
    let mut paired = Vec::new();
    match inputs.camera_ratios {
        Some(ratios) => {
            for camera in Camera::ALL {
                let col: Vec<Option<f64>> = ratios.iter().map(|r| r[camera.index()]).collect();
                match fit_ratio_regression(inputs.trips, &col, camera) {
                    Ok(m) => paired.push(m),
                    Err(e) => warnings.push(format!("paired model for camera {camera} skipped: {e}")),
                }
            }
        }
        None => warnings.push("no species table supplied; paired-mode ratio models omitted".into()),
    }
    let kv = inputs.model_config.to_kv();
    Ok(CalibrationPack {
        schema: PACK_SCHEMA.to_string(),
        cameras,
        adequacy,
        paired,
        provenance: Provenance {
            model_config_hash: sha256_hex(kv.as_bytes()),
            model_config: kv,
            seed: inputs.seed,
            draw_count: inputs.draws.n_draws(),
            n_trips: inputs.trips.len(),
        },
        warnings,
        caveats: vec![crate::ratio::RATIO_CAVEAT.to_string()],
    })
}

impl CalibrationPack {
    pub fn camera(&self, camera: Camera) -> Result<&CameraCalibration> {
        self.cameras
            .iter()
            .find(|c| c.camera == camera)
            .ok_or_else(|| Error::Validation(format!("pack has no calibration for camera {camera}")))
    }

    pub fn paired_model(&self, camera: Camera) -> Result<&RatioRegressionModel> {
        self.paired
            .iter()
            .find(|m| m.camera == camera)
            .ok_or_else(|| Error::Validation(format!("pack has no paired model for camera {camera}")))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Schema(m));
        if self.schema != PACK_SCHEMA {
            return fail(format!("unsupported schema `{}`", self.schema));
        }
        if self.cameras.is_empty() {
            return fail("pack has no cameras".into());
        }
        let m = self.provenance.draw_count;
        let mut seen = Vec::new();
        for c in &self.cameras {
            if seen.contains(&c.camera) {
                return fail(format!("camera {} listed twice", c.camera));
            }
            seen.push(c.camera);
            if c.b0.len() != m || c.b1.len() != m {
                return fail(format!("camera {}: coefficient arrays must have {m} draws", c.camera));
            }
            if c.b0.iter().chain(&c.b1).any(|v| !v.is_finite()) || c.b1.iter().any(|&v| v < 0.0) {
                return fail(format!("camera {}: coefficients must be finite with non-negative slopes", c.camera));
            }
            for r in &c.error_table {
                if !(r.lo80 <= r.median && r.median <= r.hi80) {
                    return fail(format!("camera {}: error interval for trip {} is not ordered", c.camera, r.trip_id));
                }
            }
        }
        for p in &self.paired {
            if p.n < 4 {
                return fail(format!("paired model {} fitted on fewer than 4 trips", p.camera));
            }
            for a in 0..3 {
                for b in 0..3 {
                    let (x, y) = (p.covariance[a][b], p.covariance[b][a]);
                    if (x - y).abs() > 1e-9 * x.abs().max(y.abs()).max(1e-300) {
                        return fail(format!("paired model {}: covariance not symmetric", p.camera));
                    }
                }
                if p.covariance[a][a] < 0.0 {
                    return fail(format!("paired model {}: negative variance", p.camera));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let pack: CalibrationPack = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        pack.validate()?;
        Ok(pack)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
