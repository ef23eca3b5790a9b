use gearcalib::inference::{ess, sample, FnPosterior, SamplerConfig};

fn config(seed: u64) -> SamplerConfig {
    SamplerConfig { n_chains: 2, n_iterations: 12_000, burn_in: 2_000, thin: 1, seed, ..Default::default() }
}

fn mc_se(values: &[f64], ess: f64) -> f64 {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (var / ess).sqrt()
}

#[test]
fn normal_normal_posterior_mean() {
    // theta ~ N(0, 1), x | theta ~ N(theta, 1), x = 2  =>  theta | x ~ N(1, 1/2)
    let model = FnPosterior {
        names: vec!["theta".into()],
        init: vec![0.0],
        log_density: |x: &[f64]| -0.5 * x[0] * x[0] - 0.5 * (2.0 - x[0]).powi(2),
    };
    let draws = sample(&model, &config(11)).unwrap();
    let theta = draws.column("theta").unwrap();
    let e = ess(&draws, "theta").unwrap().ess;
    let mean = theta.iter().sum::<f64>() / theta.len() as f64;
    let se = mc_se(&theta, e);
    assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean} se {se}");
}

#[test]
fn poisson_lognormal_matches_quadrature() {
    // log phi ~ N(0, 1), N | phi ~ Pois(phi), N = 3
    let log_post = |u: f64| -0.5 * u * u + 3.0 * u - u.exp();
    let (lo, hi, n) = (-10.0, 10.0, 100_000);
    let h = (hi - lo) / (n - 1) as f64;
    let (mut z, mut m1) = (0.0, 0.0);
    for k in 0..n {
        let u = lo + k as f64 * h;
        let w = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        let d = log_post(u).exp();
        z += w * d;
        m1 += w * d * u;
    }
    let oracle = m1 / z;

    let model = FnPosterior { names: vec!["log_phi".into()], init: vec![0.0], log_density: |x: &[f64]| log_post(x[0]) };
    let draws = sample(&model, &config(12)).unwrap();
    let v = draws.column("log_phi").unwrap();
    let e = ess(&draws, "log_phi").unwrap().ess;
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    assert!((mean - oracle).abs() < 2.0 * mc_se(&v, e), "mean {mean} oracle {oracle}");
}

#[test]
fn same_seed_same_draws() {
    let model = FnPosterior {
        names: vec!["a".into(), "b".into()],
        init: vec![0.0, 0.0],
        log_density: |x: &[f64]| -0.5 * (x[0] * x[0] + (x[1] - x[0]).powi(2)),
    };
    let cfg = SamplerConfig { n_iterations: 1000, burn_in: 200, ..config(5) };
    let a = sample(&model, &cfg).unwrap();
    let b = sample(&model, &cfg).unwrap();
    assert_eq!(a, b);
    let c = sample(&model, &SamplerConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn scalar_acceptance_lands_near_target() {
    let model = FnPosterior {
        names: vec!["x".into()],
        init: vec![5.0],
        log_density: |x: &[f64]| -0.5 * (x[0] / 0.01).powi(2),
    };
    let draws = sample(&model, &config(3)).unwrap();
    let rate = draws.acceptance.mean_rate("x").unwrap();
    assert!((0.2..=0.6).contains(&rate), "{rate}");
}
