//! Adaptive random-walk Metropolis within a fixed-scan Gibbs schedule.
//!
//! Each chain draws from its own `ChaCha8Rng` stream: the generator is seeded
//! with `seed_from_u64(config.seed)` and switched to stream `chain`. Proposal
//! scales adapt on the log scale in batches during burn-in only and are frozen
//! afterwards.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::draws::{AcceptanceLedger, PosteriorDraws};
use super::{BlockSpec, SamplerConfig};
use crate::error::{Error, Result};
use crate::model::graph::{EvalContext, LatentValues, ModelGraph, ParameterState, Target};

/// A target density the sampler can update one coordinate at a time.
pub trait Posterior: Sync {
    type Context: Clone + Send;

    fn dim(&self) -> usize;
    fn coordinate_names(&self) -> Vec<String>;
    fn log_density(&self, x: &[f64]) -> f64;
    fn context(&self, x: &[f64]) -> Self::Context;
    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;

    /// `log p(x with x[i] = value) - log p(x)`. `x` is restored on return.
    fn delta(&self, x: &mut [f64], _ctx: &Self::Context, i: usize, value: f64) -> f64 {
        let before = self.log_density(x);
        let old = x[i];
        x[i] = value;
        let after = self.log_density(x);
        x[i] = old;
        after - before
    }

    /// Brings `ctx` up to date after coordinate `i` moved from `old` to `x[i]`.
    fn accept(&self, x: &[f64], ctx: &mut Self::Context, _i: usize, _old: f64) {
        *ctx = self.context(x);
    }

    fn initial_scale(&self, _i: usize) -> f64 {
        0.5
    }

    fn blocks(&self, _spec: &[BlockSpec]) -> Vec<Vec<usize>> {
        Vec::new()
    }

    /// Number of joint moves made after each scan.
    fn n_joint_moves(&self) -> usize {
        0
    }

    /// Applies joint move `k` with step `a ~ N(0, s^2)` to `x` in place and
    /// returns its log Jacobian. Move `k` with `-a` must invert it with `a`.
    fn joint_move(&self, _x: &mut [f64], _k: usize, _a: f64) -> f64 {
        0.0
    }

    fn column_names(&self) -> Vec<String> {
        self.coordinate_names()
    }

    fn record(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend_from_slice(x);
    }
}

/// A posterior given by a closure over the full state.
pub struct FnPosterior<F> {
    pub names: Vec<String>,
    pub init: Vec<f64>,
    pub log_density: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Posterior for FnPosterior<F> {
    type Context = ();

    fn dim(&self) -> usize {
        self.names.len()
    }
    fn coordinate_names(&self) -> Vec<String> {
        self.names.clone()
    }
    fn log_density(&self, x: &[f64]) -> f64 {
        (self.log_density)(x)
    }
    fn context(&self, _x: &[f64]) {}
    fn initial_state(&self, _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(self.init.clone())
    }
    fn accept(&self, _x: &[f64], _ctx: &mut (), _i: usize, _old: f64) {}
}

struct ChainOutput {
    rows: Vec<Vec<f64>>,
    acceptance: Vec<f64>,
}

fn adapt_step(batch: usize) -> f64 {
    (2.0 / (batch as f64).sqrt()).min(1.0)
}

fn run_chain<P: Posterior>(p: &P, cfg: &SamplerConfig, chain: usize) -> Result<ChainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);
    let mut x = p.initial_state(&mut rng)?;
    let dim = p.dim();
    if x.len() != dim {
        return Err(Error::Initialization(format!("initial state has {} coordinates, expected {dim}", x.len())));
    }
    let mut ctx = p.context(&x);

    let blocks = p.blocks(&cfg.blocks);
    let mut in_block = vec![false; dim];
    for b in &blocks {
        for &i in b {
            in_block[i] = true;
        }
    }
    let scalars: Vec<usize> = (0..dim).filter(|&i| !in_block[i]).collect();
    let mut log_scale: Vec<f64> = (0..dim).map(|i| p.initial_scale(i).ln()).collect();
    let mut block_log_scale: Vec<f64> = blocks.iter().map(|b| (0.3 * 2.38 / (b.len() as f64).sqrt()).ln()).collect();

    let mut batch_acc = vec![0u32; dim];
    let mut block_batch_acc = vec![0u32; blocks.len()];
    let mut total_acc = vec![0u64; dim];
    let mut block_total_acc = vec![0u64; blocks.len()];
    let mut batch = 0usize;
    let n_moves = p.n_joint_moves();
    let mut move_log_scale = vec![0.1f64.ln(); n_moves];
    let mut move_batch_acc = vec![0u32; n_moves];

    let mut rows = Vec::with_capacity(cfg.draws_per_chain());
    let mut saved = Vec::new();
    for it in 0..cfg.n_iterations {
        let sampling = it >= cfg.burn_in;
        for &i in &scalars {
            let z: f64 = rng.sample(StandardNormal);
            let proposal = x[i] + log_scale[i].exp() * z;
            let d = p.delta(&mut x, &ctx, i, proposal);
            let u: f64 = rng.gen();
            if u.ln() < d {
                let old = x[i];
                x[i] = proposal;
                p.accept(&x, &mut ctx, i, old);
                batch_acc[i] += 1;
                if sampling {
                    total_acc[i] += 1;
                }
            }
        }
        for (b, idx) in blocks.iter().enumerate() {
            let before = p.log_density(&x);
            saved.clear();
            saved.extend(idx.iter().map(|&i| x[i]));
            let s = block_log_scale[b].exp();
            for &i in idx {
                let z: f64 = rng.sample(StandardNormal);
                x[i] += s * log_scale[i].exp() * z;
            }
            let after = p.log_density(&x);
            let u: f64 = rng.gen();
            if u.ln() < after - before {
                ctx = p.context(&x);
                block_batch_acc[b] += 1;
                if sampling {
                    block_total_acc[b] += 1;
                }
            } else {
                for (k, &i) in idx.iter().enumerate() {
                    x[i] = saved[k];
                }
            }
        }
        if n_moves > 0 {
            let mut current = p.log_density(&x);
            for k in 0..n_moves {
                let a: f64 = move_log_scale[k].exp() * rng.sample::<f64, _>(StandardNormal);
                saved.clear();
                saved.extend_from_slice(&x);
                let log_jac = p.joint_move(&mut x, k, a);
                let after = p.log_density(&x);
                let u: f64 = rng.gen();
                if u.ln() < after - current + log_jac {
                    current = after;
                    move_batch_acc[k] += 1;
                } else {
                    x.copy_from_slice(&saved);
                }
            }
            ctx = p.context(&x);
        }
        if !sampling && (it + 1) % cfg.adapt_window == 0 {
            batch += 1;
            let step = adapt_step(batch);
            let w = cfg.adapt_window as f64;
            for &i in &scalars {
                log_scale[i] += step * (batch_acc[i] as f64 / w - cfg.target_accept_scalar);
                batch_acc[i] = 0;
            }
            for k in 0..n_moves {
                move_log_scale[k] += step * (move_batch_acc[k] as f64 / w - cfg.target_accept_scalar);
                move_batch_acc[k] = 0;
            }
            for b in 0..blocks.len() {
                block_log_scale[b] += step * (block_batch_acc[b] as f64 / w - cfg.target_accept_block);
                block_batch_acc[b] = 0;
            }
        }
        if sampling && (it + 1 - cfg.burn_in).is_multiple_of(cfg.thin) {
            let mut row = Vec::new();
            p.record(&x, &mut row);
            row.push(p.log_density(&x));
            rows.push(row);
        }
    }

    let kept = (cfg.n_iterations - cfg.burn_in) as f64;
    let mut acceptance: Vec<f64> = total_acc.iter().map(|&a| a as f64 / kept).collect();
    for (b, idx) in blocks.iter().enumerate() {
        for &i in idx {
            acceptance[i] = block_total_acc[b] as f64 / kept;
        }
    }
    Ok(ChainOutput { rows, acceptance })
}

/// Runs `config.n_chains` independent chains (concurrently) and gathers the
/// stored draws in chain order. A trailing `log_posterior` column holds the
/// log density of each stored state.
pub fn sample<P: Posterior>(p: &P, config: &SamplerConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let outputs: Vec<Result<ChainOutput>> =
        (0..config.n_chains).into_par_iter().map(|c| run_chain(p, config, c)).collect();
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut columns = p.column_names();
    columns.push("log_posterior".into());
    let mut acceptance = AcceptanceLedger { coordinates: p.coordinate_names(), rates: Vec::new() };
    let mut chains = Vec::with_capacity(outputs.len());
    for out in outputs {
        acceptance.rates.push(out.acceptance);
        chains.push(out.rows);
    }
    let mut draws = PosteriorDraws::from_chains(columns, chains)?;
    draws.acceptance = acceptance;
    Ok(draws)
}

/// Samples the joint posterior of a model graph.
pub fn run_mcmc(graph: &ModelGraph, config: &SamplerConfig) -> Result<PosteriorDraws> {
    sample(graph, config)
}

/// Deterministic starting state for `seed` (the first chain's start).
pub fn initialize_state(graph: &ModelGraph, seed: u64) -> Result<ParameterState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    Ok(ParameterState { values: graph_initial_state(graph, &mut rng)? })
}

const INIT_RETRIES: usize = 100;

fn data_latents(graph: &ModelGraph) -> LatentValues {
    let offset = graph.config().include_ratio_offset;
    let mut lv = LatentValues::default();
    for t in graph.trips() {
        let lphi = if offset { (t.ratio * t.n + 1.0).ln() } else { (t.n + 1.0).ln() };
        let mut lmu = [0.0; 4];
        for (c, m) in lmu.iter_mut().enumerate() {
            *m = t.y[c].map_or(lphi, |y| (y + 1.0).ln());
        }
        lv.log_phi.push(lphi);
        lv.log_mu.push(lmu);
        lv.log_tau_acoustic.push(Some((t.n + 1.0).ln()));
        lv.log_tau_mr.push(t.n_mr.map(|n| (n + 1.0).ln()));
    }
    lv
}

fn graph_initial_state(graph: &ModelGraph, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let lv = data_latents(graph);
    let mut x = vec![0.0; graph.dim()];
    for (s, lat) in graph.latents().iter().enumerate() {
        x[lat.log_phi] = lv.log_phi[s];
        for c in 0..4 {
            x[lat.log_mu[c]] = lv.log_mu[s][c];
        }
        if let Some(i) = lat.log_tau_acoustic {
            x[i] = lv.log_tau_acoustic[s].unwrap_or(0.0);
        }
        if let Some(i) = lat.log_tau_mr {
            x[i] = lv.log_tau_mr[s].unwrap_or(0.0);
        }
    }
    for _ in 0..INIT_RETRIES {
        for (i, spec) in graph.params().iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            x[i] = 0.1 * spec.prior_sd * z;
        }
        if graph.log_density_unchecked(&x).is_finite() {
            return Ok(x);
        }
    }
    let state = ParameterState { values: x };
    let offending = graph
        .node_values(&state)
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(k, _)| graph.describe_node(&k))
        .unwrap_or_else(|| "unknown".into());
    Err(Error::Initialization(format!(
        "log posterior not finite after {INIT_RETRIES} attempts; offending node {offending}"
    )))
}

impl Posterior for ModelGraph {
    type Context = EvalContext;

    fn dim(&self) -> usize {
        ModelGraph::dim(self)
    }

    fn coordinate_names(&self) -> Vec<String> {
        (0..ModelGraph::dim(self)).map(|i| self.coordinate_name(i)).collect()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let v = self.log_density_unchecked(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    fn context(&self, x: &[f64]) -> EvalContext {
        ModelGraph::context(self, x)
    }

    fn initial_state(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        graph_initial_state(self, rng)
    }

    fn delta(&self, x: &mut [f64], ctx: &EvalContext, i: usize, value: f64) -> f64 {
        ModelGraph::delta(self, x, ctx, i, value)
    }

    fn accept(&self, x: &[f64], ctx: &mut EvalContext, i: usize, old: f64) {
        ModelGraph::accept(self, x, ctx, i, old)
    }

    fn initial_scale(&self, i: usize) -> f64 {
        if i < self.n_population() {
            0.2
        } else {
            0.3
        }
    }

    fn blocks(&self, spec: &[BlockSpec]) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for b in spec {
            match b {
                BlockSpec::LevelThreeEffects => {
                    let idx: Vec<usize> = [Target::NuX1, Target::GammaX1]
                        .iter()
                        .filter_map(|t| self.param_index(t))
                        .collect();
                    if idx.len() == 2 {
                        out.push(idx);
                    }
                }
                BlockSpec::TripLatents => {
                    for lat in self.latents() {
                        let mut idx = vec![lat.log_phi];
                        idx.extend(lat.log_mu);
                        out.push(idx);
                    }
                }
            }
        }
        out
    }

    fn n_joint_moves(&self) -> usize {
        self.moves.len()
    }

    fn joint_move(&self, x: &mut [f64], k: usize, a: f64) -> f64 {
        self.apply_joint_move(x, k, a)
    }

    fn column_names(&self) -> Vec<String> {
        let mut cols: Vec<String> = self.params().iter().map(|p| p.name.clone()).collect();
        for t in self.trips() {
            cols.push(format!("log_phi[{}]", t.trip_id));
        }
        for t in self.trips() {
            for c in 0..4 {
                if t.y[c].is_none() {
                    cols.push(format!("log_mu[{},{}]", t.trip_id, crate::dataset::Camera::from_index(c).code()));
                }
            }
        }
        cols
    }

    fn record(&self, x: &[f64], out: &mut Vec<f64>) {
        for (spec, &u) in self.params().iter().zip(x) {
            out.push(spec.transform.to_constrained(u));
        }
        for lat in self.latents() {
            out.push(x[lat.log_phi]);
        }
        for (t, lat) in self.trips().iter().zip(self.latents()) {
            for c in 0..4 {
                if t.y[c].is_none() {
                    out.push(x[lat.log_mu[c]]);
                }
            }
        }
    }
}
