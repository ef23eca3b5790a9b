//! Least-squares prediction of the pooled ratio from one camera's MaxN and
//! camera-specific ratio, for surveys pairing that camera with the echosounder.

use serde::{Deserialize, Serialize};

use crate::dataset::{Camera, TripRecord, RATIO_SHIFT};
use crate::error::{Error, Result};

pub const COLUMN_NAMES: [&str; 3] = ["intercept", "log_maxn_plus_1", "camera_ratio"];

pub const RATIO_CAVEAT: &str = "r_hat * N is not established as an abundance estimate; \
    uncertainty in r_hat is not propagated into r_hat * N";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRegressionModel {
    pub camera: Camera,
    /// `(intercept, coef_logmaxn, coef_camratio)`
    pub coefficients: [f64; 3],
    /// `s^2 (X'X)^-1`
    pub covariance: [[f64; 3]; 3],
    /// `(X'X)^-1`, kept so prediction errors stay defined when `s^2 = 0`.
    pub xtx_inv: [[f64; 3]; 3],
    pub residual_variance: f64,
    pub r2: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioPrediction {
    pub r_hat: f64,
    pub pred_se: f64,
    /// `r_hat` falls outside `[1e-6, 1 + 1e-6]`; it is reported unclipped.
    pub out_of_range: bool,
    pub caveat: String,
}

fn design_row(maxn: f64, camratio: f64) -> [f64; 3] {
    [1.0, (maxn + 1.0).ln(), camratio]
}

/// Ordinary least squares via modified Gram-Schmidt QR.
pub(crate) struct QrFit {
    pub coefficients: [f64; 3],
    pub xtx_inv: [[f64; 3]; 3],
    pub sse: f64,
}

pub(crate) fn qr_least_squares(rows: &[[f64; 3]], y: &[f64]) -> Result<QrFit> {
    let n = rows.len();
    let mut q: Vec<[f64; 3]> = rows.to_vec();
    let mut r = [[0.0; 3]; 3];
    for k in 0..3 {
        let original = rows.iter().map(|row| row[k] * row[k]).sum::<f64>().sqrt();
        for j in 0..k {
            let dot: f64 = (0..n).map(|i| q[i][j] * q[i][k]).sum();
            r[j][k] = dot;
            for row in q.iter_mut() {
                row[k] -= dot * row[j];
            }
        }
        let norm = q.iter().map(|row| row[k] * row[k]).sum::<f64>().sqrt();
        if !(norm > 1e-10 * original.max(1.0)) {
            return Err(Error::RankDeficient(COLUMN_NAMES[k].to_string()));
        }
        r[k][k] = norm;
        for row in q.iter_mut() {
            row[k] /= norm;
        }
    }
    let qty: [f64; 3] = std::array::from_fn(|k| (0..n).map(|i| q[i][k] * y[i]).sum());
    let mut beta = [0.0; 3];
    for k in (0..3).rev() {
        let tail: f64 = (k + 1..3).map(|j| r[k][j] * beta[j]).sum();
        beta[k] = (qty[k] - tail) / r[k][k];
    }
    // R^-1 (upper triangular), then (X'X)^-1 = R^-1 R^-T
    let mut rinv = [[0.0; 3]; 3];
    for c in 0..3 {
        for k in (0..=c).rev() {
            let e = if k == c { 1.0 } else { 0.0 };
            let tail: f64 = (k + 1..=c).map(|j| r[k][j] * rinv[j][c]).sum();
            rinv[k][c] = (e - tail) / r[k][k];
        }
    }
    let xtx_inv: [[f64; 3]; 3] = std::array::from_fn(|a| std::array::from_fn(|b| (0..3).map(|k| rinv[a][k] * rinv[b][k]).sum()));
    let sse = rows
        .iter()
        .zip(y)
        .map(|(row, yi)| {
            let e = yi - (0..3).map(|k| row[k] * beta[k]).sum::<f64>();
            e * e
        })
        .sum();
    Ok(QrFit { coefficients: beta, xtx_inv, sse })
}

/// Fits `r ~ 1 + log(y + 1) + camratio` over trips where camera `camera` was
/// deployed and its ratio is defined. `camera_ratios` is aligned with `trips`.
pub fn fit_ratio_regression(
    trips: &[TripRecord],
    camera_ratios: &[Option<f64>],
    camera: Camera,
) -> Result<RatioRegressionModel> {
    if trips.len() != camera_ratios.len() {
        return Err(Error::Regression("camera_ratios must align with trips".into()));
    }
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (t, cr) in trips.iter().zip(camera_ratios) {
        if let (Some(m), Some(c)) = (t.maxn_of(camera), cr) {
            rows.push(design_row(m as f64, *c));
            y.push(t.pooled_ratio);
        }
    }
    let n = rows.len();
    if n < 4 {
        return Err(Error::Regression(format!("camera {camera}: need at least 4 paired trips, got {n}")));
    }
    let fit = qr_least_squares(&rows, &y)?;
    let s2 = fit.sse / (n - 3) as f64;
    let ybar = y.iter().sum::<f64>() / n as f64;
    let sst: f64 = y.iter().map(|v| (v - ybar) * (v - ybar)).sum();
    let r2 = if sst > 0.0 { (1.0 - fit.sse / sst).clamp(0.0, 1.0) } else { 1.0 };
    let covariance = fit.xtx_inv.map(|row| row.map(|v| v * s2));
    Ok(RatioRegressionModel {
        camera,
        coefficients: fit.coefficients,
        covariance,
        xtx_inv: fit.xtx_inv,
        residual_variance: s2,
        r2,
        n,
    })
}

/// Predicted pooled ratio and its new-observation standard error.
pub fn predict_pooled_ratio(model: &RatioRegressionModel, maxn: u64, camratio: f64) -> Result<RatioPrediction> {
    if !(0.0..=1.0 + RATIO_SHIFT).contains(&camratio) {
        return Err(Error::Domain(format!("camera ratio {camratio} outside [0, 1 + 1e-6]")));
    }
    let x0 = design_row(maxn as f64, camratio);
    let r_hat: f64 = (0..3).map(|k| x0[k] * model.coefficients[k]).sum();
    let mut quad = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            quad += x0[a] * model.xtx_inv[a][b] * x0[b];
        }
    }
    let pred_se = (model.residual_variance * (1.0 + quad)).max(0.0).sqrt();
    Ok(RatioPrediction {
        r_hat,
        pred_se,
        out_of_range: !(RATIO_SHIFT..=1.0 + RATIO_SHIFT).contains(&r_hat),
        caveat: RATIO_CAVEAT.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trip(maxn: u64, r: f64) -> TripRecord {
        TripRecord {
            trip_id: format!("t{maxn}-{r}"),
            boat: 1,
            reef_size: 1,
            replicate: 1,
            maxn: [None, None, Some(maxn), None],
            acoustic_total: 10,
            acoustic_focal: 5,
            markrecapture: None,
            pooled_ratio: r,
            reef_type: "x".into(),
        }
    }

    #[test]
    fn exact_linear_data_is_recovered() {
        let cams = [0.1, 0.5, 0.3, 0.9, 0.7];
        let maxn = [1, 4, 2, 9, 0];
        let trips: Vec<_> = cams.iter().zip(maxn).map(|(c, m)| trip(m, 0.2 + 0.8 * c)).collect();
        let ratios: Vec<_> = cams.iter().map(|&c| Some(c)).collect();
        let m = fit_ratio_regression(&trips, &ratios, Camera::Trap).unwrap();
        assert!((m.coefficients[0] - 0.2).abs() < 1e-12);
        assert!(m.coefficients[1].abs() < 1e-12);
        assert!((m.coefficients[2] - 0.8).abs() < 1e-12);
        assert!((m.r2 - 1.0).abs() < 1e-12);
        let p = predict_pooled_ratio(&m, 3, 0.5).unwrap();
        assert!(p.pred_se < 1e-6);
        assert!(!p.out_of_range);
    }

    #[test]
    fn constant_camera_ratio_is_rank_deficient() {
        let trips: Vec<_> = [1, 2, 3, 4, 5].iter().map(|&m| trip(m, 0.3 + 0.01 * m as f64)).collect();
        let ratios = vec![Some(0.4); 5];
        match fit_ratio_regression(&trips, &ratios, Camera::Trap) {
            Err(Error::RankDeficient(col)) => assert_eq!(col, "camera_ratio"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn prediction_rejects_bad_ratio_and_flags_extrapolation() {
        let m = RatioRegressionModel {
            camera: Camera::Drop,
            coefficients: [0.9, 0.2, 0.5],
            covariance: [[0.0; 3]; 3],
            xtx_inv: [[0.0; 3]; 3],
            residual_variance: 0.0,
            r2: 1.0,
            n: 10,
        };
        assert!(predict_pooled_ratio(&m, 1, 2.0).is_err());
        let p = predict_pooled_ratio(&m, 0, 0.4).unwrap();
        assert_eq!(p.pred_se, 0.0);
        assert!((p.r_hat - 1.1).abs() < 1e-12);
        assert!(p.out_of_range);
    }
}
