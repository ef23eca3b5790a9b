use std::collections::BTreeMap;

use gearcalib::calibration::{apply_entry, constrained_ls, derive_calibration};
use gearcalib::dataset::{
    compute_camera_ratio, compute_pooled_ratio, parse_trips, trips_to_csv, SpeciesFlags, SpeciesRow, RATIO_SHIFT,
};
use gearcalib::inference::initialize_state;
use gearcalib::model::{exchangeable_mvn_logdensity, LatentValues};
use gearcalib::ratio::{fit_ratio_regression, predict_pooled_ratio};
use gearcalib::simulation::fixture::default_fixture;
use gearcalib::{Camera, ModelConfig, ModelGraph, ParameterState, PosteriorDraws, SpeciesMaxNTable, TripRecord};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn dense_mvn_logpdf(e: &[f64], sigma: f64, rho: f64) -> f64 {
    let d = e.len();
    let cov = DMatrix::from_fn(d, d, |a, b| sigma * sigma * if a == b { 1.0 } else { rho });
    let chol = cov.cholesky().expect("positive definite");
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let v = DVector::from_column_slice(e);
    let quad = v.dot(&chol.solve(&v));
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

/// `(intercept, slope)` from the 2x2 normal equations.
fn normal_equations_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len();
    let xm = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
    let yv = DVector::from_column_slice(y);
    let beta = (xm.transpose() * &xm).lu().solve(&(xm.transpose() * yv)).unwrap();
    (beta[0], beta[1])
}

fn ratio_trip(s: usize, maxn: u64, r: f64) -> TripRecord {
    TripRecord {
        trip_id: format!("t{s}"),
        boat: 1,
        reef_size: 1,
        replicate: s + 1,
        maxn: [None, Some(maxn), None, None],
        acoustic_total: 10,
        acoustic_focal: 10,
        markrecapture: None,
        pooled_ratio: r,
        reef_type: "pyramid".into(),
    }
}

fn mvn_case() -> impl Strategy<Value = (Vec<f64>, f64, f64)> {
    (2usize..=4).prop_flat_map(|d| {
        let lower = -1.0 / (d as f64 - 1.0) + 0.02;
        (prop::collection::vec(-3.0..3.0f64, d), 0.2..3.0f64, lower..0.95f64)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn exchangeable_mvn_matches_dense_covariance((e, sigma, rho) in mvn_case()) {
        let closed = exchangeable_mvn_logdensity(&e, sigma, rho).unwrap();
        let dense = dense_mvn_logpdf(&e, sigma, rho);
        prop_assert!((closed - dense).abs() < 1e-10, "{closed} vs {dense}");
    }

    #[test]
    fn constrained_ls_agrees_with_normal_equations(
        pts in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 3..40)
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let mx = x.iter().sum::<f64>() / x.len() as f64;
        prop_assume!(x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() > 1e-3);
        let (a, b) = normal_equations_line(&x, &y);
        prop_assume!(b.abs() > 1e-9);
        let fit = constrained_ls(&x, &y).unwrap();
        prop_assert!(fit.slope >= 0.0);
        prop_assert_eq!(fit.clamped, b < 0.0);
        if b >= 0.0 {
            prop_assert!((fit.intercept - a).abs() < 1e-10, "{} vs {a}", fit.intercept);
            prop_assert!((fit.slope - b).abs() < 1e-10, "{} vs {b}", fit.slope);
        } else {
            let my = y.iter().sum::<f64>() / y.len() as f64;
            prop_assert_eq!(fit.slope, 0.0);
            prop_assert!((fit.intercept - my).abs() < 1e-12);
        }
        prop_assert!((0.0..=1.0).contains(&fit.r2));
    }

    #[test]
    fn ratio_regression_agrees_with_normal_equations(
        obs in prop::collection::vec((0u64..60, 0.0..1.0f64, 0.0..1.0f64), 6..40),
        x0 in (0u64..80, 0.0..1.0f64),
    ) {
        let trips: Vec<TripRecord> = obs.iter().enumerate().map(|(s, &(m, _, r))| ratio_trip(s, m, r)).collect();
        let ratios: Vec<Option<f64>> = obs.iter().map(|o| Some(o.1)).collect();
        let n = obs.len();
        let xm = DMatrix::from_fn(n, 3, |i, j| match j { 0 => 1.0, 1 => (obs[i].0 as f64 + 1.0).ln(), _ => obs[i].1 });
        let yv = DVector::from_iterator(n, obs.iter().map(|o| o.2));
        let xtx = xm.transpose() * &xm;
        let eig = xtx.clone().symmetric_eigen().eigenvalues;
        prop_assume!(eig.min() / eig.max() > 1e-6);
        let beta = xtx.clone().cholesky().unwrap().solve(&(xm.transpose() * &yv));
        let resid = &yv - &xm * &beta;
        let s2 = resid.dot(&resid) / (n - 3) as f64;

        let model = fit_ratio_regression(&trips, &ratios, Camera::Sbruv).unwrap();
        for k in 0..3 {
            prop_assert!((model.coefficients[k] - beta[k]).abs() < 1e-10, "coef {k}: {} vs {}", model.coefficients[k], beta[k]);
        }
        prop_assert!((model.residual_variance - s2).abs() < 1e-10);
        let ours = DVector::from_row_slice(&model.coefficients);
        let e = &yv - &xm * &ours;
        for j in 0..3 {
            prop_assert!(xm.column(j).dot(&e).abs() < 1e-8);
        }
        for a in 0..3 {
            prop_assert!(model.covariance[a][a] >= 0.0);
            for b in 0..3 {
                prop_assert_eq!(model.covariance[a][b], model.covariance[b][a]);
            }
        }
        let p = predict_pooled_ratio(&model, x0.0, x0.1).unwrap();
        prop_assert!(p.pred_se >= model.residual_variance.sqrt());
        if model.coefficients[2] > 0.0 && x0.1 < 0.99 {
            let q = predict_pooled_ratio(&model, x0.0, x0.1 + 0.01).unwrap();
            prop_assert!(q.r_hat > p.r_hat);
        }
    }
}

fn registry() -> BTreeMap<String, SpeciesFlags> {
    let mut r = BTreeMap::new();
    r.insert("gaj".to_string(), SpeciesFlags { is_gaj: true, is_gaj_plus: true });
    r.insert("almaco".to_string(), SpeciesFlags { is_gaj: false, is_gaj_plus: true });
    r.insert("snapper".to_string(), SpeciesFlags { is_gaj: false, is_gaj_plus: false });
    r
}

proptest! {
    #[test]
    fn pooled_ratio_stays_in_range_and_pools_single_cameras(
        counts in prop::collection::vec((0u64..20, 0u64..20, 0u64..20), 4),
        present in prop::array::uniform4(any::<bool>()),
    ) {
        let mut rows = Vec::new();
        for (cam, &(g, a, s)) in Camera::ALL.iter().zip(&counts) {
            if present[cam.index()] {
                for (id, n) in [("gaj", g), ("almaco", a + 1), ("snapper", s)] {
                    rows.push(SpeciesRow { trip_id: "x".into(), camera: *cam, species_id: id.into(), maxn: n });
                }
            }
        }
        let table = SpeciesMaxNTable::new(rows, registry()).unwrap();
        let cams: Vec<Camera> = Camera::ALL.into_iter().filter(|c| present[c.index()]).collect();
        prop_assume!(!cams.is_empty());
        let r = compute_pooled_ratio(&table, "x", &cams).unwrap();
        prop_assert!((RATIO_SHIFT..=1.0 + RATIO_SHIFT).contains(&r));
        if cams.len() == 1 {
            prop_assert_eq!(Some(r), compute_camera_ratio(&table, "x", cams[0]).unwrap());
        }
    }

    #[test]
    fn trip_csv_round_trips_integer_fields(
        rows in prop::collection::vec(
            (prop::array::uniform4(prop::option::of(0u64..500)), 0u64..2000, prop::option::of(0u64..900), 0.0..1.0f64),
            1..15,
        )
    ) {
        let trips: Vec<TripRecord> = rows
            .iter()
            .enumerate()
            .map(|(s, (maxn, n, mr, r))| TripRecord {
                trip_id: format!("trip{s}"),
                boat: 1 + s % 2,
                reef_size: 1,
                replicate: 1 + s / 2,
                maxn: *maxn,
                acoustic_total: *n,
                acoustic_focal: n / 2,
                markrecapture: *mr,
                pooled_ratio: *r,
                reef_type: "tank".into(),
            })
            .collect();
        let back = parse_trips(&trips_to_csv(&trips).unwrap(), None).unwrap();
        prop_assert_eq!(back, trips);
    }
}

fn latent_values(graph: &ModelGraph, x: &[f64]) -> LatentValues {
    let mut lv = LatentValues::default();
    for lat in graph.latents() {
        lv.log_phi.push(x[lat.log_phi]);
        lv.log_mu.push(lat.log_mu.map(|i| x[i]));
        lv.log_tau_acoustic.push(lat.log_tau_acoustic.map(|i| x[i]));
        lv.log_tau_mr.push(lat.log_tau_mr.map(|i| x[i]));
    }
    lv
}

fn permuted(lv: &LatentValues, order: &[usize]) -> LatentValues {
    LatentValues {
        log_phi: order.iter().map(|&s| lv.log_phi[s]).collect(),
        log_mu: order.iter().map(|&s| lv.log_mu[s]).collect(),
        log_tau_acoustic: order.iter().map(|&s| lv.log_tau_acoustic[s]).collect(),
        log_tau_mr: order.iter().map(|&s| lv.log_tau_mr[s]).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn log_posterior_ignores_trip_order(
        order in Just((0..21).collect::<Vec<usize>>()).prop_shuffle(),
        seed in 0u64..1000,
        comprehensive in any::<bool>(),
    ) {
        let trips = default_fixture().unwrap().trips;
        let config = if comprehensive { ModelConfig::comprehensive() } else { ModelConfig::final_model() };
        let graph = ModelGraph::build(&config, &trips).unwrap();
        let state = initialize_state(&graph, seed).unwrap();
        let pop = graph.decode(&state.values);
        let lv = latent_values(&graph, &state.values);

        let shuffled: Vec<TripRecord> = order.iter().map(|&s| trips[s].clone()).collect();
        let other = ModelGraph::build(&config, &shuffled).unwrap();
        let moved = other.encode(&pop, &permuted(&lv, &order)).unwrap();
        let a = graph.log_posterior(&state).unwrap();
        let b = other.log_posterior(&moved).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} vs {b}");
    }
}

fn synthetic_draws(trips: &[TripRecord], rows: &[Vec<f64>]) -> PosteriorDraws {
    let names = trips.iter().map(|t| format!("log_phi[{}]", t.trip_id)).collect();
    PosteriorDraws::from_chains(names, vec![rows.to_vec()]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn calibration_summaries_ignore_draw_order_and_duplication(
        noise in prop::collection::vec(prop::collection::vec(-0.5..0.5f64, 21), 5..40),
        order_seed in any::<u64>(),
        maxn in 0i64..200,
    ) {
        let trips = default_fixture().unwrap().trips;
        let rows: Vec<Vec<f64>> = noise
            .iter()
            .map(|z| trips.iter().zip(z).map(|(t, e)| (t.maxn[1].unwrap_or(0) as f64 + 2.0).ln() + e).collect())
            .collect();
        let base = derive_calibration(&synthetic_draws(&trips, &rows), &trips, Camera::Sbruv).unwrap();

        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut state = order_seed;
        for i in (1..order.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let shuffled: Vec<Vec<f64>> = order.iter().map(|&m| rows[m].clone()).collect();
        let s = derive_calibration(&synthetic_draws(&trips, &shuffled), &trips, Camera::Sbruv).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        for (a, b) in [
            (base.b0_summary.mean, s.b0_summary.mean),
            (base.b1_summary.mean, s.b1_summary.mean),
            (base.b0_summary.variance, s.b0_summary.variance),
            (base.b1_summary.variance, s.b1_summary.variance),
            (base.b0_summary.q10, s.b0_summary.q10),
            (base.b1_summary.q90, s.b1_summary.q90),
            (base.cov_b0_b1, s.cov_b0_b1),
            (base.median_r2, s.median_r2),
        ] {
            prop_assert!(close(a, b), "{a} vs {b}");
        }
        prop_assert_eq!(&base.median_line, &s.median_line);

        let doubled: Vec<Vec<f64>> = rows.iter().chain(&rows).cloned().collect();
        let d = derive_calibration(&synthetic_draws(&trips, &doubled), &trips, Camera::Sbruv).unwrap();
        prop_assert_eq!(&base.median_line, &d.median_line);

        let e0 = apply_entry(&base, 0).unwrap().estimate;
        let em = apply_entry(&base, maxn).unwrap().estimate;
        prop_assert_eq!(e0, base.median_line.b0);
        prop_assert_eq!(em, base.median_line.b0 + base.median_line.b1 * maxn as f64);
    }
}

#[test]
fn stored_state_satisfies_constraints() {
    let trips = default_fixture().unwrap().trips;
    let graph = ModelGraph::build(&ModelConfig::comprehensive(), &trips).unwrap();
    let state: ParameterState = initialize_state(&graph, 3).unwrap();
    let pop = graph.decode(&state.values);
    assert_eq!(pop.nu_x(1) + pop.nu_x(2), 0.0);
    assert_eq!(pop.gamma_x(1) + pop.gamma_x(2), 0.0);
    assert_eq!(pop.xi(0) + pop.xi(1), 0.0);
    assert!(pop.rho > 0.0 && pop.rho < 1.0);
    assert!(pop.sigma_phi.iter().chain(&pop.sigma_x).all(|&s| s > 0.0));
}
