use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Camera, TripRecord};
use crate::error::{Error, Result};
use crate::inference::PosteriorDraws;
use crate::model::{ModelConfig, ModelGraph, Population};
use crate::stats;

/// Smallest standard deviation or slope magnitude handed to the generator.
pub const SCALE_FLOOR: f64 = 0.05;
const RHO_RANGE: (f64, f64) = (0.05, 0.95);

/// Generating values for the comprehensive model, with a note per parameter
/// naming the regression step it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParams {
    pub population: Population,
    pub notes: BTreeMap<String, String>,
}

impl TrueParams {
    pub fn new(population: Population) -> Self {
        TrueParams { population, notes: BTreeMap::new() }
    }

    /// `(name, value)` for every parameter of `graph`, in graph order.
    pub fn named_values(&self, graph: &ModelGraph) -> Vec<(String, f64)> {
        graph
            .params()
            .iter()
            .map(|p| p.name.clone())
            .zip(graph.population_values(&self.population))
            .collect()
    }

    /// Checks that every value lies in the support of its sampling transform.
    pub fn validate(&self, graph: &ModelGraph) -> Result<()> {
        for (spec, v) in graph.params().iter().zip(graph.population_values(&self.population)) {
            spec.transform
                .to_unconstrained(v)
                .map_err(|e| Error::Domain(format!("{}: {e}", spec.name)))?;
        }
        Ok(())
    }

    fn note(&mut self, name: impl Into<String>, text: &str) {
        self.notes.insert(name.into(), text.to_string());
    }
}

/// Least-squares fit that drops columns collinear with earlier ones.
struct LsFit {
    coef: Vec<Option<f64>>,
    residuals: Vec<f64>,
    df: usize,
}

fn least_squares(columns: &[Vec<f64>], y: &[f64]) -> LsFit {
    let n = y.len();
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut r: Vec<Vec<f64>> = Vec::new();
    for (k, col) in columns.iter().enumerate() {
        let scale = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = col.clone();
        let mut rk = vec![0.0; q.len()];
        for (a, qa) in q.iter().enumerate() {
            let dot: f64 = (0..n).map(|i| qa[i] * v[i]).sum();
            rk[a] = dot;
            for i in 0..n {
                v[i] -= dot * qa[i];
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 * scale.max(1.0) {
            v.iter_mut().for_each(|x| *x /= norm);
            rk.push(norm);
            q.push(v);
            r.push(rk);
            kept.push(k);
        }
    }
    let p = q.len();
    let qty: Vec<f64> = q.iter().map(|qa| (0..n).map(|i| qa[i] * y[i]).sum()).collect();
    let mut beta = vec![0.0; p];
    for a in (0..p).rev() {
        let tail: f64 = (a + 1..p).map(|b| r[b][a] * beta[b]).sum();
        beta[a] = (qty[a] - tail) / r[a][a];
    }
    let mut coef = vec![None; columns.len()];
    for (a, &k) in kept.iter().enumerate() {
        coef[k] = Some(beta[a]);
    }
    let residuals = (0..n)
        .map(|i| y[i] - kept.iter().enumerate().map(|(a, &k)| columns[k][i] * beta[a]).sum::<f64>())
        .collect();
    LsFit { coef, residuals, df: n.saturating_sub(p) }
}

fn residual_sd(resid: &[f64], df: usize) -> f64 {
    if df == 0 {
        return 0.0;
    }
    (resid.iter().map(|e| e * e).sum::<f64>() / df as f64).sqrt()
}

fn contrast(level: usize) -> f64 {
    if level == 1 {
        1.0
    } else {
        -1.0
    }
}

/// A slope ready for the generator: sign flipped if negative, floored.
fn positive_slope(b: f64) -> f64 {
    b.abs().max(SCALE_FLOOR)
}

fn ln1p_count(v: u64) -> f64 {
    (v as f64 + 1.0).ln()
}

/// Assigns generating values for the comprehensive model from a final-model
/// fit, by a cascade of least-squares regressions on the posterior-median
/// `log phi`.
pub fn assign_sim_parameters(final_draws: &PosteriorDraws, trips: &[TripRecord]) -> Result<TrueParams> {
    if trips.is_empty() {
        return Err(Error::NoTrips);
    }
    if trips.iter().all(|t| t.markrecapture.is_none()) {
        return Err(Error::Model(
            "no mark-recapture estimates: the comprehensive generator needs the h = 2 count level".into(),
        ));
    }
    let mut lphi = Vec::with_capacity(trips.len());
    for t in trips {
        let name = format!("log_phi[{}]", t.trip_id);
        let col = final_draws
            .column(&name)
            .map_err(|_| Error::Validation(format!("final-model draws lack `{name}`")))?;
        lphi.push(stats::median(&col));
    }
    let n = trips.len();
    let ci: Vec<f64> = trips.iter().map(|t| contrast(t.boat)).collect();
    let cj: Vec<f64> = trips.iter().map(|t| contrast(t.reef_size)).collect();
    let ones = vec![1.0; n];
    let mut tp = TrueParams::new(Population::default());

    // Level 3
    let fit = least_squares(&[ones.clone(), ci.clone(), cj.clone()], &lphi);
    let pop = &mut tp.population;
    pop.beta0 = fit.coef[0].unwrap_or(0.0);
    pop.nu_x1 = fit.coef[1].unwrap_or(0.0);
    pop.gamma_x1 = fit.coef[2].unwrap_or(0.0);
    for j in 0..2 {
        let res: Vec<f64> = (0..n).filter(|&s| trips[s].reef_size == j + 1).map(|s| fit.residuals[s]).collect();
        let sd = if res.len() > 1 { stats::variance(&res).sqrt() } else { 0.0 };
        pop.sigma_phi[j] = sd.max(SCALE_FLOOR);
    }
    for name in ["beta0", "nu_x[1]", "gamma_x[1]"] {
        tp.note(name, "LS of median log phi on boat and reef-size contrasts");
    }
    for name in ["sigma_phi[1]", "sigma_phi[2]"] {
        tp.note(name, "within-reef-size SD of the Level-3 residuals, floored at 0.05");
    }

    // Level 2.2: count-type offsets
    let d_ac: Vec<(usize, f64)> =
        (0..n).map(|s| (s, (trips[s].adjusted_acoustic() + 1.0).ln() - lphi[s])).collect();
    let d_mr: Vec<(usize, f64)> =
        (0..n).filter_map(|s| trips[s].markrecapture.map(|m| (s, ln1p_count(m) - lphi[s]))).collect();
    let mean_of = |v: &[(usize, f64)]| v.iter().map(|p| p.1).sum::<f64>() / v.len() as f64;
    let pop = &mut tp.population;
    pop.xi1 = (mean_of(&d_ac) - mean_of(&d_mr)) / 2.0;
    let large_ac: Vec<f64> = d_ac.iter().filter(|(s, _)| trips[*s].reef_size == 1).map(|p| p.1).collect();
    let mr: Vec<f64> = d_mr.iter().map(|p| p.1).collect();
    let sd = |v: &[f64]| if v.len() > 1 { stats::variance(v).sqrt() } else { 0.0 };
    pop.sigma_x = [sd(&large_ac).max(SCALE_FLOOR), sd(&mr).max(SCALE_FLOOR)];
    tp.note("xi[1]", "half the contrast of mean log(rN+1) - log phi and mean log(N_mr+1) - log phi");
    tp.note("sigma_x[1]", "SD of log(rN+1) - log phi over large reefs, floored at 0.05");
    tp.note("sigma_x[2]", "SD of log(N_mr+1) - log phi, floored at 0.05");

    // Level 2.1, D/S/T
    let mean_phi = lphi.iter().sum::<f64>() / n as f64;
    let phi_t: Vec<f64> = lphi.iter().map(|v| v - mean_phi).collect();
    let mut pooled_resid: Vec<f64> = Vec::new();
    let mut pooled_df = 0;
    let mut cam_resid: Vec<Vec<Option<f64>>> = vec![vec![None; n]; 3];
    for c in 0..3 {
        let cam = Camera::from_index(c);
        let rows: Vec<usize> = (0..n).filter(|&s| trips[s].maxn[c].is_some()).collect();
        let y: Vec<f64> = rows.iter().map(|&s| ln1p_count(trips[s].maxn[c].unwrap())).collect();
        let col = |f: &dyn Fn(usize) -> f64| rows.iter().map(|&s| f(s)).collect::<Vec<f64>>();
        let slope_cols = [
            col(&|s| if trips[s].reef_size == 1 { phi_t[s] } else { 0.0 }),
            col(&|s| if trips[s].reef_size == 2 { phi_t[s] } else { 0.0 }),
        ];
        let first = least_squares(
            &[col(&|_| 1.0), col(&|s| ci[s]), col(&|s| cj[s]), slope_cols[0].clone(), slope_cols[1].clone()],
            &y,
        );
        let b_large = first.coef[3].map(positive_slope).unwrap_or(1.0);
        let b_small = first.coef[4].map(positive_slope).unwrap_or(b_large);
        let pop = &mut tp.population;
        pop.beta1[0][c] = b_large;
        pop.beta1[1][c] = b_small;
        let u: Vec<f64> = rows
            .iter()
            .zip(&y)
            .map(|(&s, yv)| yv - pop.beta1[trips[s].reef_size - 1][c] * phi_t[s])
            .collect();
        let second = least_squares(&[col(&|_| 1.0), col(&|s| ci[s]), col(&|s| cj[s])], &u);
        pop.beta_y0[c] = second.coef[0].unwrap_or(0.0);
        pop.nu_y1[c] = second.coef[1].unwrap_or(0.0);
        pop.gamma_y1[c] = second.coef[2].unwrap_or(0.0);
        for (&s, e) in rows.iter().zip(&second.residuals) {
            cam_resid[c][s] = Some(*e);
        }
        pooled_resid.extend(&second.residuals);
        pooled_df += second.df;
        let code = cam.code();
        tp.note(format!("beta1[1,{code}]"), "LS slope of log(y+1) on centered log phi at large reefs, sign-flipped if negative");
        tp.note(format!("beta1[2,{code}]"), "LS slope of log(y+1) on centered log phi at small reefs, sign-flipped if negative");
        for name in [format!("beta_y0[{code}]"), format!("nu_y[1,{code}]"), format!("gamma_y[1,{code}]")] {
            tp.note(name, "LS of log(y+1) minus the slope term on boat and reef-size contrasts");
        }
    }
    let pop = &mut tp.population;
    pop.sigma_y = residual_sd(&pooled_resid, pooled_df).max(SCALE_FLOOR);
    let mut pair_corr = Vec::new();
    for a in 0..3 {
        for b in a + 1..3 {
            let (xa, xb): (Vec<f64>, Vec<f64>) =
                (0..n).filter_map(|s| Some((cam_resid[a][s]?, cam_resid[b][s]?))).unzip();
            if xa.len() > 2 {
                let r = stats::correlation(&xa, &xb);
                if r.is_finite() {
                    pair_corr.push(r);
                }
            }
        }
    }
    let rho = if pair_corr.is_empty() { 0.5 } else { pair_corr.iter().sum::<f64>() / pair_corr.len() as f64 };
    pop.rho = rho.clamp(RHO_RANGE.0, RHO_RANGE.1);
    tp.note("sigma_y", "pooled residual SD of the D/S/T effect regressions, floored at 0.05");
    tp.note("rho", "mean pairwise correlation of D/S/T residuals, clamped to [0.05, 0.95]");

    // Level 2.1, ROV
    let mut ly_t = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for c in 0..3 {
        let obs: Vec<f64> = trips.iter().filter_map(|t| t.maxn[c].map(ln1p_count)).collect();
        let m = if obs.is_empty() { 0.0 } else { obs.iter().sum::<f64>() / obs.len() as f64 };
        for s in 0..n {
            ly_t[c][s] = trips[s].maxn[c].map(|v| ln1p_count(v) - m).unwrap_or(0.0);
        }
    }
    let r = Camera::Rov.index();
    let rows: Vec<usize> = (0..n).filter(|&s| trips[s].maxn[r].is_some()).collect();
    if rows.is_empty() {
        return Err(Error::Model("no ROV MaxN observed: the ROV sub-regression cannot be assigned".into()));
    }
    let y: Vec<f64> = rows.iter().map(|&s| ln1p_count(trips[s].maxn[r].unwrap())).collect();
    let col = |f: &dyn Fn(usize) -> f64| rows.iter().map(|&s| f(s)).collect::<Vec<f64>>();
    let first = least_squares(
        &[
            col(&|_| 1.0),
            col(&|s| cj[s]),
            col(&|s| if trips[s].reef_size == 1 { phi_t[s] } else { 0.0 }),
            col(&|s| if trips[s].reef_size == 2 { phi_t[s] } else { 0.0 }),
            col(&|s| ly_t[1][s]),
            col(&|s| ly_t[2][s]),
        ],
        &y,
    );
    let pop = &mut tp.population;
    pop.beta1[0][r] = first.coef[2].map(positive_slope).unwrap_or(1.0);
    pop.beta1[1][r] = first.coef[3].map(positive_slope).unwrap_or(pop.beta1[0][r]);
    pop.beta1_rov[1] = first.coef[4].map(positive_slope).unwrap_or(1.0);
    pop.beta1_rov[2] = first.coef[5].map(positive_slope).unwrap_or(1.0);

    let large: Vec<usize> =
        rows.iter().copied().filter(|&s| trips[s].reef_size == 1 && trips[s].maxn[0].is_some()).collect();
    let v: Vec<f64> = large
        .iter()
        .map(|&s| {
            ln1p_count(trips[s].maxn[r].unwrap())
                - pop.beta1[0][r] * phi_t[s]
                - pop.beta1_rov[1] * ly_t[1][s]
                - pop.beta1_rov[2] * ly_t[2][s]
        })
        .collect();
    let d_fit = least_squares(&[vec![1.0; large.len()], large.iter().map(|&s| ly_t[0][s]).collect()], &v);
    pop.beta1_rov[0] = d_fit.coef[1].map(positive_slope).unwrap_or(1.0);

    let w: Vec<f64> = rows
        .iter()
        .zip(&y)
        .map(|(&s, yv)| {
            yv - pop.beta1[trips[s].reef_size - 1][r] * phi_t[s] - (0..3).map(|k| pop.beta1_rov[k] * ly_t[k][s]).sum::<f64>()
        })
        .collect();
    let last = least_squares(&[col(&|_| 1.0), col(&|s| cj[s])], &w);
    pop.beta_y0[r] = last.coef[0].unwrap_or(0.0);
    pop.gamma_y1[r] = last.coef[1].unwrap_or(0.0);
    pop.sigma_yr = residual_sd(&last.residuals, last.df).max(SCALE_FLOOR);

    tp.note("beta1[1,R]", "LS slope of log(y_R+1) on centered log phi at large reefs, with S/T regressors");
    tp.note("beta1[2,R]", "LS slope of log(y_R+1) on centered log phi at small reefs, with S/T regressors");
    tp.note("beta1[S]", "LS slope of log(y_R+1) on centered log(y_S+1)");
    tp.note("beta1[T]", "LS slope of log(y_R+1) on centered log(y_T+1)");
    tp.note("beta1[D]", "large-reef LS slope of the ROV remainder on centered log(y_D+1)");
    tp.note("beta_y0[R]", "intercept of the ROV remainder on the reef-size contrast");
    tp.note("gamma_y[1,R]", "reef-size effect of the ROV remainder");
    tp.note("sigma_yR", "residual SD of the ROV remainder regression, floored at 0.05");

    let graph = ModelGraph::build(&ModelConfig::comprehensive(), trips)?;
    tp.validate(&graph)?;
    Ok(tp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_columns_are_dropped() {
        let x1 = vec![1.0, 2.0, 3.0, 4.0];
        let fit = least_squares(&[vec![1.0; 4], x1.clone(), x1.iter().map(|v| 2.0 * v).collect()], &[3.0, 5.0, 7.0, 9.0]);
        assert!((fit.coef[0].unwrap() - 1.0).abs() < 1e-12);
        assert!((fit.coef[1].unwrap() - 2.0).abs() < 1e-12);
        assert!(fit.coef[2].is_none());
        assert_eq!(fit.df, 2);
    }

    #[test]
    fn slopes_are_made_positive_and_floored() {
        assert_eq!(positive_slope(-0.7), 0.7);
        assert_eq!(positive_slope(0.01), SCALE_FLOOR);
    }
}
