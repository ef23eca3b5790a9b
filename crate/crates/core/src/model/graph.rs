//! Joint log-posterior over a trip list for any member of the model family.
//!
//! The sampling state is a flat vector on unconstrained scales: `log` for
//! standard deviations and slopes, `logit` for the exchangeable correlation,
//! identity otherwise. Priors are stated on those same scales, so no Jacobian
//! terms are needed. Sum-to-zero effects store only the level-1 value; the
//! level-2 value is its negation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::config::{Correlation, ModelConfig, MuIntercepts};
use super::moves::JointMove;
use super::density::{
    correlation_from_partials, ln_factorial, logistic, logit,
    mvn3_logdensity, normal_logpdf, poisson_logpmf_log_rate,
};
use crate::dataset::{Camera, TripRecord};
use crate::error::{Error, Result};

/// Scale on which a population parameter is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    Log,
    Logit,
    /// `2 * logistic(u) - 1`, for partial correlations in (-1, 1).
    SignedLogit,
}

impl Transform {
    pub fn to_constrained(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Logit => logistic(u),
            Transform::SignedLogit => 2.0 * logistic(u) - 1.0,
        }
    }

    pub fn to_unconstrained(self, v: f64) -> Result<f64> {
        let u = match self {
            Transform::Identity => v,
            Transform::Log if v > 0.0 => v.ln(),
            Transform::Logit if v > 0.0 && v < 1.0 => logit(v),
            Transform::SignedLogit if v > -1.0 && v < 1.0 => logit((v + 1.0) / 2.0),
            _ => return Err(Error::Domain(format!("value {v} outside the support of a {self:?} parameter"))),
        };
        if u.is_finite() {
            Ok(u)
        } else {
            Err(Error::Domain(format!("value {v} maps to a non-finite sampling coordinate")))
        }
    }
}

/// Which slot of [`Population`] a parameter fills.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Beta0,
    NuX1,
    GammaX1,
    /// `None` when a single `sigma_phi` serves both reef sizes.
    SigmaPhi(Option<usize>),
    BetaY0(usize),
    NuY1(usize),
    GammaY1(usize),
    /// One shared slope for a group of `(j, camera)` cells.
    Beta1(Vec<(usize, usize)>),
    /// Slope of `log mu_R` on `log mu_D`, `log mu_S`, `log mu_T`.
    Beta1Rov(usize),
    Xi1,
    Rho,
    Partial(usize),
    SigmaY,
    SigmaYR,
    /// Count type h (0 = acoustic, 1 = mark-recapture).
    SigmaX(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub transform: Transform,
    pub prior_sd: f64,
    pub target: Target,
}

/// Population-level parameters on their natural scales. Slots unused by a
/// configuration keep neutral values (0 for effects, 1 for scales).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub beta0: f64,
    pub nu_x1: f64,
    pub gamma_x1: f64,
    pub sigma_phi: [f64; 2],
    pub beta_y0: [f64; 4],
    pub nu_y1: [f64; 4],
    pub gamma_y1: [f64; 4],
    /// `beta1[j-1][camera]`
    pub beta1: [[f64; 4]; 2],
    pub beta1_rov: [f64; 3],
    pub xi1: f64,
    pub rho: f64,
    /// Partial correlations `(DS, DT, ST|D)` for the free trivariate residual.
    pub partials: [f64; 3],
    pub sigma_y: f64,
    pub sigma_yr: f64,
    pub sigma_x: [f64; 2],
}

impl Default for Population {
    fn default() -> Self {
        Population {
            beta0: 0.0,
            nu_x1: 0.0,
            gamma_x1: 0.0,
            sigma_phi: [1.0; 2],
            beta_y0: [0.0; 4],
            nu_y1: [0.0; 4],
            gamma_y1: [0.0; 4],
            beta1: [[1.0; 4]; 2],
            beta1_rov: [1.0; 3],
            xi1: 0.0,
            rho: 0.5,
            partials: [0.0; 3],
            sigma_y: 1.0,
            sigma_yr: 1.0,
            sigma_x: [1.0; 2],
        }
    }
}

#[inline]
pub(crate) fn contrast(level: usize) -> f64 {
    if level == 1 {
        1.0
    } else {
        -1.0
    }
}

impl Population {
    pub fn nu_x(&self, boat: usize) -> f64 {
        contrast(boat) * self.nu_x1
    }
    pub fn gamma_x(&self, reef: usize) -> f64 {
        contrast(reef) * self.gamma_x1
    }
    pub fn nu_y(&self, boat: usize, cam: usize) -> f64 {
        contrast(boat) * self.nu_y1[cam]
    }
    pub fn gamma_y(&self, reef: usize, cam: usize) -> f64 {
        contrast(reef) * self.gamma_y1[cam]
    }
    pub fn xi(&self, h: usize) -> f64 {
        if h == 0 {
            self.xi1
        } else {
            -self.xi1
        }
    }
    /// `E(log phi)` for the `(boat, reef)` cell.
    pub fn cell_mean_log_phi(&self, boat: usize, reef: usize) -> f64 {
        self.beta0 + self.nu_x(boat) + self.gamma_x(reef)
    }
}

/// Sampling-state indices of one trip's latent quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripLatents {
    pub log_phi: usize,
    pub log_mu: [usize; 4],
    pub log_tau_acoustic: Option<usize>,
    pub log_tau_mr: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripDesign {
    pub trip_id: String,
    pub boat: usize,
    pub reef: usize,
    pub reef_type: String,
    pub y: [Option<f64>; 4],
    y_ln_fact: [f64; 4],
    pub n: f64,
    n_ln_fact: f64,
    pub n_mr: Option<f64>,
    n_mr_ln_fact: f64,
    pub log_r: f64,
    pub ratio: f64,
}

/// One density term of the joint posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    /// Poisson likelihood of an observed MaxN.
    ObsMaxN { trip: usize, camera: usize },
    /// Poisson likelihood of the acoustic count.
    ObsAcoustic { trip: usize },
    /// Poisson likelihood of the mark-recapture estimate.
    ObsMarkRecapture { trip: usize },
    /// Conditional density of one trip's latent block (log-MaxN regressions,
    /// count-type offsets and the Level-3 abundance regression).
    TripLatent { trip: usize },
    /// Prior on one population parameter.
    Prior { param: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub kind: NodeKind,
    /// Sampling-state indices this term reads.
    pub parents: Vec<usize>,
}

/// Unconstrained sampling state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    pub values: Vec<f64>,
}

/// Latent values on the log scale, per trip.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LatentValues {
    pub log_phi: Vec<f64>,
    pub log_mu: Vec<[f64; 4]>,
    pub log_tau_acoustic: Vec<Option<f64>>,
    pub log_tau_mr: Vec<Option<f64>>,
}

/// Per-evaluation constants derived from the population block.
#[derive(Debug, Clone)]
pub struct EvalContext {
    pub pop: Population,
    ln_sigma_phi: [f64; 2],
    mvn_lead_ratio: f64,
    mvn_norm: f64,
    mvn_inv_scale: f64,
    corr: [[f64; 3]; 3],
    ln_sigma_yr: f64,
    ln_sigma_x: [f64; 2],
    pub mean_log_phi: f64,
    pub mean_log_mu: [f64; 4],
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[inline]
fn normal_fast(x: f64, mean: f64, sd: f64, ln_sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - ln_sd - 0.5 * LN_2PI
}

/// Immutable model over a trip list.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    config: ModelConfig,
    trips: Vec<TripDesign>,
    params: Vec<ParamSpec>,
    latents: Vec<TripLatents>,
    dim: usize,
    nodes: Vec<Node>,
    pub(crate) moves: Vec<JointMove>,
}

fn cam_code(c: usize) -> char {
    Camera::from_index(c).code()
}

impl ModelGraph {
    pub fn build(config: &ModelConfig, trips: &[TripRecord]) -> Result<ModelGraph> {
        config.validate()?;
        if trips.is_empty() {
            return Err(Error::NoTrips);
        }
        if config.include_markrecapture {
            if trips.iter().all(|t| t.markrecapture.is_none()) {
                return Err(Error::Model(
                    "include_markrecapture requires at least one mark-recapture estimate".into(),
                ));
            }
            if let Some(t) = trips.iter().find(|t| t.markrecapture.is_some() && t.reef_size != 1) {
                return Err(Error::Model(format!(
                    "trip `{}` has a mark-recapture estimate at a small reef; only large reefs are supported",
                    t.trip_id
                )));
            }
        }
        for t in trips {
            if !(t.pooled_ratio > 0.0 && t.pooled_ratio.is_finite()) {
                return Err(Error::Model(format!("trip `{}` has a non-positive ratio", t.trip_id)));
            }
        }

        let mut params = Vec::new();
        let mut push = |name: String, transform, prior_sd, target| {
            params.push(ParamSpec { name, transform, prior_sd, target });
        };
        const EFFECT_SD: f64 = 3.0;
        const SCALE_SD: f64 = 2.0;
        if config.phi_intercept_beta0 {
            push("beta0".into(), Transform::Identity, EFFECT_SD, Target::Beta0);
        }
        push("nu_x[1]".into(), Transform::Identity, EFFECT_SD, Target::NuX1);
        push("gamma_x[1]".into(), Transform::Identity, EFFECT_SD, Target::GammaX1);
        if config.reef_specific_sigma_phi {
            push("sigma_phi[1]".into(), Transform::Log, SCALE_SD, Target::SigmaPhi(Some(0)));
            push("sigma_phi[2]".into(), Transform::Log, SCALE_SD, Target::SigmaPhi(Some(1)));
        } else {
            push("sigma_phi".into(), Transform::Log, SCALE_SD, Target::SigmaPhi(None));
        }
        if config.mu_intercepts != MuIntercepts::None {
            for c in 0..4 {
                push(format!("beta_y0[{}]", cam_code(c)), Transform::Identity, EFFECT_SD, Target::BetaY0(c));
            }
        }
        if config.mu_intercepts == MuIntercepts::BetaPlusBoatPlusReef {
            for c in 0..4 {
                if config.rov_separate && c == Camera::Rov.index() {
                    continue;
                }
                push(format!("nu_y[1,{}]", cam_code(c)), Transform::Identity, EFFECT_SD, Target::NuY1(c));
            }
            for c in 0..4 {
                push(format!("gamma_y[1,{}]", cam_code(c)), Transform::Identity, EFFECT_SD, Target::GammaY1(c));
            }
        }
        for group in config.slope_groups() {
            let cells: Vec<(usize, usize)> = group.iter().map(|&(j, c)| (j - 1, c.index())).collect();
            let name = group.iter().map(|(j, c)| format!("{j},{c}")).collect::<Vec<_>>().join("|");
            push(format!("beta1[{name}]"), Transform::Log, config.beta1_prior_sd, Target::Beta1(cells));
        }
        if config.rov_separate {
            for (k, c) in ["D", "S", "T"].iter().enumerate() {
                push(format!("beta1[{c}]"), Transform::Log, config.beta1_prior_sd, Target::Beta1Rov(k));
            }
        }
        match config.correlation {
            Correlation::Exchangeable => push("rho".into(), Transform::Logit, SCALE_SD, Target::Rho),
            Correlation::Free => {
                for (k, name) in ["rho[D,S]", "rho[D,T]", "rho[S,T|D]"].iter().enumerate() {
                    push(name.to_string(), Transform::SignedLogit, SCALE_SD, Target::Partial(k));
                }
            }
        }
        push("sigma_y".into(), Transform::Log, SCALE_SD, Target::SigmaY);
        if config.rov_separate {
            push("sigma_yR".into(), Transform::Log, SCALE_SD, Target::SigmaYR);
        }
        if config.include_markrecapture {
            push("xi[1]".into(), Transform::Identity, EFFECT_SD, Target::Xi1);
            push("sigma_x[1]".into(), Transform::Log, SCALE_SD, Target::SigmaX(0));
            push("sigma_x[2]".into(), Transform::Log, SCALE_SD, Target::SigmaX(1));
        }

        let n_pop = params.len();
        let mut next = n_pop;
        let mut alloc = || {
            next += 1;
            next - 1
        };
        let mut designs = Vec::with_capacity(trips.len());
        let mut latents = Vec::with_capacity(trips.len());
        for t in trips {
            let log_phi = alloc();
            let log_mu = [alloc(), alloc(), alloc(), alloc()];
            let zeta_active = t.reef_size == 1 || !config.reef_specific_sigma_x;
            let log_tau_acoustic = (config.include_markrecapture && zeta_active).then(&mut alloc);
            let log_tau_mr = (config.include_markrecapture && t.markrecapture.is_some()).then(&mut alloc);
            latents.push(TripLatents { log_phi, log_mu, log_tau_acoustic, log_tau_mr });
            let y = t.maxn.map(|v| v.map(|c| c as f64));
            designs.push(TripDesign {
                trip_id: t.trip_id.clone(),
                boat: t.boat,
                reef: t.reef_size,
                reef_type: t.reef_type.clone(),
                y,
                y_ln_fact: t.maxn.map(|v| v.map(ln_factorial).unwrap_or(0.0)),
                n: t.acoustic_total as f64,
                n_ln_fact: ln_factorial(t.acoustic_total),
                n_mr: t.markrecapture.map(|v| v as f64),
                n_mr_ln_fact: t.markrecapture.map(ln_factorial).unwrap_or(0.0),
                log_r: t.pooled_ratio.ln(),
                ratio: t.pooled_ratio,
            });
        }
        let dim = next;

        let mut graph = ModelGraph {
            config: config.clone(),
            trips: designs,
            params,
            latents,
            dim,
            nodes: Vec::new(),
            moves: Vec::new(),
        };
        graph.build_nodes();
        graph.moves = graph.build_joint_moves();
        Ok(graph)
    }

    fn build_nodes(&mut self) {
        let n_pop = self.params.len();
        let pop: Vec<usize> = (0..n_pop).collect();
        let all_phi: Vec<usize> = self.latents.iter().map(|l| l.log_phi).collect();
        let mut nodes = Vec::new();
        for (s, (t, lat)) in self.trips.iter().zip(&self.latents).enumerate() {
            for c in 0..4 {
                if t.y[c].is_some() {
                    nodes.push(Node { kind: NodeKind::ObsMaxN { trip: s, camera: c }, parents: vec![lat.log_mu[c]] });
                }
            }
            let acoustic_parents = match lat.log_tau_acoustic {
                Some(i) => vec![i],
                None => {
                    let mut p = vec![lat.log_phi];
                    if let Some(x) = self.param_index(&Target::Xi1) {
                        p.push(x);
                    }
                    p
                }
            };
            nodes.push(Node { kind: NodeKind::ObsAcoustic { trip: s }, parents: acoustic_parents });
            if let Some(i) = lat.log_tau_mr {
                nodes.push(Node { kind: NodeKind::ObsMarkRecapture { trip: s }, parents: vec![i] });
            }
        }
        for (s, lat) in self.latents.iter().enumerate() {
            let mut parents: BTreeSet<usize> = pop.iter().copied().collect();
            parents.insert(lat.log_phi);
            parents.extend(lat.log_mu);
            parents.extend(lat.log_tau_acoustic);
            parents.extend(lat.log_tau_mr);
            if self.config.center_logphi {
                parents.extend(all_phi.iter().copied());
            }
            if self.config.rov_separate && self.config.center_logmu {
                parents.extend(self.latents.iter().flat_map(|l| l.log_mu[..3].iter().copied()));
            }
            nodes.push(Node { kind: NodeKind::TripLatent { trip: s }, parents: parents.into_iter().collect() });
        }
        for p in 0..n_pop {
            nodes.push(Node { kind: NodeKind::Prior { param: p }, parents: vec![p] });
        }

        self.nodes = nodes;
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }
    pub fn trips(&self) -> &[TripDesign] {
        &self.trips
    }
    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }
    pub fn latents(&self) -> &[TripLatents] {
        &self.latents
    }
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_population(&self) -> usize {
        self.params.len()
    }

    pub fn param_index(&self, target: &Target) -> Option<usize> {
        self.params.iter().position(|p| &p.target == target)
    }

    pub fn param_by_name(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Decodes the population block of an unconstrained state.
    pub fn decode(&self, x: &[f64]) -> Population {
        let mut pop = Population::default();
        for (spec, &u) in self.params.iter().zip(x) {
            let v = spec.transform.to_constrained(u);
            match &spec.target {
                Target::Beta0 => pop.beta0 = v,
                Target::NuX1 => pop.nu_x1 = v,
                Target::GammaX1 => pop.gamma_x1 = v,
                Target::SigmaPhi(Some(j)) => pop.sigma_phi[*j] = v,
                Target::SigmaPhi(None) => pop.sigma_phi = [v; 2],
                Target::BetaY0(c) => pop.beta_y0[*c] = v,
                Target::NuY1(c) => pop.nu_y1[*c] = v,
                Target::GammaY1(c) => pop.gamma_y1[*c] = v,
                Target::Beta1(cells) => {
                    for &(j, c) in cells {
                        pop.beta1[j][c] = v;
                    }
                }
                Target::Beta1Rov(k) => pop.beta1_rov[*k] = v,
                Target::Xi1 => pop.xi1 = v,
                Target::Rho => pop.rho = v,
                Target::Partial(k) => pop.partials[*k] = v,
                Target::SigmaY => pop.sigma_y = v,
                Target::SigmaYR => pop.sigma_yr = v,
                Target::SigmaX(h) => pop.sigma_x[*h] = v,
            }
        }
        pop
    }

    fn pop_value(&self, pop: &Population, target: &Target) -> f64 {
        match target {
            Target::Beta0 => pop.beta0,
            Target::NuX1 => pop.nu_x1,
            Target::GammaX1 => pop.gamma_x1,
            Target::SigmaPhi(j) => pop.sigma_phi[j.unwrap_or(0)],
            Target::BetaY0(c) => pop.beta_y0[*c],
            Target::NuY1(c) => pop.nu_y1[*c],
            Target::GammaY1(c) => pop.gamma_y1[*c],
            Target::Beta1(cells) => pop.beta1[cells[0].0][cells[0].1],
            Target::Beta1Rov(k) => pop.beta1_rov[*k],
            Target::Xi1 => pop.xi1,
            Target::Rho => pop.rho,
            Target::Partial(k) => pop.partials[*k],
            Target::SigmaY => pop.sigma_y,
            Target::SigmaYR => pop.sigma_yr,
            Target::SigmaX(h) => pop.sigma_x[*h],
        }
    }

    /// Constrained value of every population parameter, in layout order.
    pub fn population_values(&self, pop: &Population) -> Vec<f64> {
        self.params.iter().map(|p| self.pop_value(pop, &p.target)).collect()
    }

    /// Builds a state from constrained population values and latent logs.
    /// Fails with a domain error when a constraint is violated (e.g. `rho = 1`).
    pub fn encode(&self, pop: &Population, latent: &LatentValues) -> Result<ParameterState> {
        let n = self.trips.len();
        if latent.log_phi.len() != n || latent.log_mu.len() != n {
            return Err(Error::Domain(format!("latent vectors must have one entry per trip ({n})")));
        }
        let mut x = vec![0.0; self.dim];
        for (i, spec) in self.params.iter().enumerate() {
            let v = self.pop_value(pop, &spec.target);
            if let Target::Beta1(cells) = &spec.target {
                if cells.iter().any(|&(j, c)| pop.beta1[j][c] != v) {
                    return Err(Error::Domain(format!("tied slopes in {} differ", spec.name)));
                }
            }
            x[i] = spec
                .transform
                .to_unconstrained(v)
                .map_err(|e| Error::Domain(format!("{}: {e}", spec.name)))?;
        }
        for (s, lat) in self.latents.iter().enumerate() {
            x[lat.log_phi] = latent.log_phi[s];
            for c in 0..4 {
                x[lat.log_mu[c]] = latent.log_mu[s][c];
            }
            if let Some(i) = lat.log_tau_acoustic {
                x[i] = latent
                    .log_tau_acoustic
                    .get(s)
                    .copied()
                    .flatten()
                    .ok_or_else(|| Error::Domain(format!("trip {s}: missing acoustic log tau")))?;
            }
            if let Some(i) = lat.log_tau_mr {
                x[i] = latent
                    .log_tau_mr
                    .get(s)
                    .copied()
                    .flatten()
                    .ok_or_else(|| Error::Domain(format!("trip {s}: missing mark-recapture log tau")))?;
            }
        }
        let state = ParameterState { values: x };
        self.check_state(&state)?;
        Ok(state)
    }

    pub fn check_state(&self, state: &ParameterState) -> Result<()> {
        if state.values.len() != self.dim {
            return Err(Error::Domain(format!(
                "state has {} coordinates, model expects {}",
                state.values.len(),
                self.dim
            )));
        }
        if let Some(i) = state.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("coordinate `{}` is not finite", self.coordinate_name(i))));
        }
        Ok(())
    }

    pub fn coordinate_name(&self, i: usize) -> String {
        if i < self.params.len() {
            return self.params[i].name.clone();
        }
        for (t, lat) in self.trips.iter().zip(&self.latents) {
            if lat.log_phi == i {
                return format!("log_phi[{}]", t.trip_id);
            }
            if let Some(c) = lat.log_mu.iter().position(|&m| m == i) {
                return format!("log_mu[{},{}]", t.trip_id, cam_code(c));
            }
            if lat.log_tau_acoustic == Some(i) {
                return format!("log_tau[1,{}]", t.trip_id);
            }
            if lat.log_tau_mr == Some(i) {
                return format!("log_tau[2,{}]", t.trip_id);
            }
        }
        format!("#{i}")
    }

    pub fn context(&self, x: &[f64]) -> EvalContext {
        let pop = self.decode(x);
        let n = self.trips.len() as f64;
        let mut mean_log_phi = 0.0;
        let mut mean_log_mu = [0.0; 4];
        for lat in &self.latents {
            mean_log_phi += x[lat.log_phi];
            for c in 0..4 {
                mean_log_mu[c] += x[lat.log_mu[c]];
            }
        }
        mean_log_phi /= n;
        for m in &mut mean_log_mu {
            *m /= n;
        }
        self.context_with(pop, mean_log_phi, mean_log_mu)
    }

    fn context_with(&self, pop: Population, mean_log_phi: f64, mean_log_mu: [f64; 4]) -> EvalContext {
        let d = if self.config.rov_separate { 3.0 } else { 4.0 };
        let s2 = pop.sigma_y * pop.sigma_y;
        let lead = 1.0 + (d - 1.0) * pop.rho;
        let tail = 1.0 - pop.rho;
        let logdet = d * s2.ln() + lead.ln() + (d - 1.0) * tail.ln();
        EvalContext {
            ln_sigma_phi: [pop.sigma_phi[0].ln(), pop.sigma_phi[1].ln()],
            mvn_lead_ratio: pop.rho / lead,
            mvn_norm: -0.5 * (d * LN_2PI + logdet),
            mvn_inv_scale: 1.0 / (s2 * tail),
            corr: correlation_from_partials(pop.partials),
            ln_sigma_yr: pop.sigma_yr.ln(),
            ln_sigma_x: [pop.sigma_x[0].ln(), pop.sigma_x[1].ln()],
            pop,
            mean_log_phi,
            mean_log_mu,
        }
    }

    /// Log-rate of the acoustic Poisson likelihood when it has no latent tau.
    #[inline]
    pub(crate) fn acoustic_log_rate(&self, t: &TripDesign, log_phi: f64, pop: &Population) -> f64 {
        let offset = if self.config.include_ratio_offset { t.log_r } else { 0.0 };
        let xi = if self.config.include_markrecapture { pop.xi1 } else { 0.0 };
        log_phi - offset + xi
    }

    /// Level-2 log-MaxN regression density for trip `s`.
    fn trip_level2(&self, s: usize, x: &[f64], ctx: &EvalContext) -> f64 {
        let t = &self.trips[s];
        let lat = &self.latents[s];
        let pop = &ctx.pop;
        let j = t.reef - 1;
        let lphi = x[lat.log_phi];
        let lphi_t = if self.config.center_logphi { lphi - ctx.mean_log_phi } else { lphi };
        let mut resid = [0.0; 4];
        for c in 0..4 {
            let pred = pop.beta_y0[c] + pop.nu_y(t.boat, c) + pop.gamma_y(t.reef, c) + pop.beta1[j][c] * lphi_t;
            resid[c] = x[lat.log_mu[c]] - pred;
        }
        if !self.config.rov_separate {
            let (sum, sumsq) = resid.iter().fold((0.0, 0.0), |(a, b), &e| (a + e, b + e * e));
            return ctx.mvn_norm - 0.5 * (sumsq - ctx.mvn_lead_ratio * sum * sum) * ctx.mvn_inv_scale;
        }
        let dst = [resid[0], resid[1], resid[2]];
        let out = match self.config.correlation {
            Correlation::Exchangeable => {
                let (sum, sumsq) = dst.iter().fold((0.0, 0.0), |(a, b), &e| (a + e, b + e * e));
                ctx.mvn_norm - 0.5 * (sumsq - ctx.mvn_lead_ratio * sum * sum) * ctx.mvn_inv_scale
            }
            Correlation::Free => mvn3_logdensity(&dst, pop.sigma_y, &ctx.corr),
        };
        out + self.trip_rov(s, x, ctx, lphi_t)
    }

    /// ROV sub-regression density for trip `s`, given its centered `log phi`.
    fn trip_rov(&self, s: usize, x: &[f64], ctx: &EvalContext, lphi_t: f64) -> f64 {
        let pred_r = self.rov_mean_given(s, x, ctx, lphi_t);
        normal_fast(x[self.latents[s].log_mu[Camera::Rov.index()]], pred_r, ctx.pop.sigma_yr, ctx.ln_sigma_yr)
    }

    fn rov_mean_given(&self, s: usize, x: &[f64], ctx: &EvalContext, lphi_t: f64) -> f64 {
        let t = &self.trips[s];
        let lat = &self.latents[s];
        let pop = &ctx.pop;
        let r = Camera::Rov.index();
        let mut pred_r = pop.beta_y0[r] + pop.gamma_y(t.reef, r) + pop.beta1[t.reef - 1][r] * lphi_t;
        for k in 0..3 {
            let lmu = x[lat.log_mu[k]];
            let lmu_t = if self.config.center_logmu { lmu - ctx.mean_log_mu[k] } else { lmu };
            pred_r += pop.beta1_rov[k] * lmu_t;
        }
        pred_r
    }

    /// Regression mean of trip `s`'s `log mu` for camera `c` (D, S, T, or R
    /// when the ROV is not modeled separately).
    pub(crate) fn mu_mean(&self, s: usize, c: usize, x: &[f64], ctx: &EvalContext) -> f64 {
        let t = &self.trips[s];
        let pop = &ctx.pop;
        let lphi = x[self.latents[s].log_phi];
        let lphi_t = if self.config.center_logphi { lphi - ctx.mean_log_phi } else { lphi };
        pop.beta_y0[c] + pop.nu_y(t.boat, c) + pop.gamma_y(t.reef, c) + pop.beta1[t.reef - 1][c] * lphi_t
    }

    /// Conditional mean of trip `s`'s ROV `log mu`.
    pub(crate) fn rov_mean(&self, s: usize, x: &[f64], ctx: &EvalContext) -> f64 {
        let lphi = x[self.latents[s].log_phi];
        let lphi_t = if self.config.center_logphi { lphi - ctx.mean_log_phi } else { lphi };
        self.rov_mean_given(s, x, ctx, lphi_t)
    }

    /// Level-3 and count-offset densities for trip `s`.
    fn trip_upper(&self, s: usize, x: &[f64], ctx: &EvalContext) -> f64 {
        self.trip_level3(s, x, ctx) + self.trip_offsets(s, x, ctx)
    }

    fn trip_level3(&self, s: usize, x: &[f64], ctx: &EvalContext) -> f64 {
        let t = &self.trips[s];
        let pop = &ctx.pop;
        let j = t.reef - 1;
        let lphi = x[self.latents[s].log_phi];
        normal_fast(lphi, pop.cell_mean_log_phi(t.boat, t.reef), pop.sigma_phi[j], ctx.ln_sigma_phi[j])
    }

    fn trip_offsets(&self, s: usize, x: &[f64], ctx: &EvalContext) -> f64 {
        let t = &self.trips[s];
        let lat = &self.latents[s];
        let pop = &ctx.pop;
        let lphi = x[lat.log_phi];
        let mut out = 0.0;
        if let Some(i) = lat.log_tau_acoustic {
            let mean = self.acoustic_log_rate(t, lphi, pop);
            out += normal_fast(x[i], mean, pop.sigma_x[0], ctx.ln_sigma_x[0]);
        }
        if let Some(i) = lat.log_tau_mr {
            out += normal_fast(x[i], lphi + pop.xi(1), pop.sigma_x[1], ctx.ln_sigma_x[1]);
        }
        out
    }

    fn obs_acoustic(&self, s: usize, x: &[f64], pop: &Population) -> f64 {
        let t = &self.trips[s];
        let lat = &self.latents[s];
        let log_rate = match lat.log_tau_acoustic {
            Some(i) => x[i],
            None => self.acoustic_log_rate(t, x[lat.log_phi], pop),
        };
        poisson_logpmf_log_rate(t.n, log_rate, t.n_ln_fact)
    }

    fn obs_maxn(&self, s: usize, c: usize, x: &[f64]) -> f64 {
        let t = &self.trips[s];
        match t.y[c] {
            Some(y) => poisson_logpmf_log_rate(y, x[self.latents[s].log_mu[c]], t.y_ln_fact[c]),
            None => 0.0,
        }
    }

    fn obs_mr(&self, s: usize, x: &[f64]) -> f64 {
        let t = &self.trips[s];
        match (self.latents[s].log_tau_mr, t.n_mr) {
            (Some(i), Some(n)) => poisson_logpmf_log_rate(n, x[i], t.n_mr_ln_fact),
            _ => 0.0,
        }
    }

    fn prior(&self, p: usize, x: &[f64]) -> f64 {
        normal_logpdf(x[p], 0.0, self.params[p].prior_sd)
    }

    fn node_value(&self, node: &NodeKind, x: &[f64], ctx: &EvalContext) -> f64 {
        match *node {
            NodeKind::ObsMaxN { trip, camera } => self.obs_maxn(trip, camera, x),
            NodeKind::ObsAcoustic { trip } => self.obs_acoustic(trip, x, &ctx.pop),
            NodeKind::ObsMarkRecapture { trip } => self.obs_mr(trip, x),
            NodeKind::TripLatent { trip } => self.trip_level2(trip, x, ctx) + self.trip_upper(trip, x, ctx),
            NodeKind::Prior { param } => self.prior(param, x),
        }
    }

    /// Full joint log-posterior density on the sampling scale.
    pub fn log_posterior(&self, state: &ParameterState) -> Result<f64> {
        self.check_state(state)?;
        Ok(self.log_density_unchecked(&state.values))
    }

    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let ctx = self.context(x);
        self.log_density_with(x, &ctx)
    }

    fn log_density_with(&self, x: &[f64], ctx: &EvalContext) -> f64 {
        self.nodes.iter().map(|n| self.node_value(&n.kind, x, ctx)).sum()
    }

    /// Sum of the selected node terms (indices into [`ModelGraph::nodes`]).
    pub fn sub_log_likelihood(&self, state: &ParameterState, node_set: &[usize]) -> Result<f64> {
        self.check_state(state)?;
        if let Some(&bad) = node_set.iter().find(|&&i| i >= self.nodes.len()) {
            return Err(Error::UnknownNode(bad));
        }
        let ctx = self.context(&state.values);
        Ok(node_set.iter().map(|&i| self.node_value(&self.nodes[i].kind, &state.values, &ctx)).sum())
    }

    /// Per-node values, for diagnosing non-finite densities.
    pub fn node_values(&self, state: &ParameterState) -> Vec<(NodeKind, f64)> {
        let ctx = self.context(&state.values);
        self.nodes.iter().map(|n| (n.kind, self.node_value(&n.kind, &state.values, &ctx))).collect()
    }

    pub fn describe_node(&self, kind: &NodeKind) -> String {
        match *kind {
            NodeKind::ObsMaxN { trip, camera } => format!("y[{},{}]", self.trips[trip].trip_id, cam_code(camera)),
            NodeKind::ObsAcoustic { trip } => format!("N[{}]", self.trips[trip].trip_id),
            NodeKind::ObsMarkRecapture { trip } => format!("N_mr[{}]", self.trips[trip].trip_id),
            NodeKind::TripLatent { trip } => format!("latent[{}]", self.trips[trip].trip_id),
            NodeKind::Prior { param } => format!("prior[{}]", self.params[param].name),
        }
    }

    // ----- local updates used by the sampler -----

    /// Which trip-level pieces read a latent coordinate.
    fn latent_owner(&self, i: usize) -> Option<(usize, LatentKind)> {
        let first = self.params.len();
        if i < first {
            return None;
        }
        // latents are allocated contiguously per trip
        let s = self.latents.partition_point(|l| l.log_phi <= i) - 1;
        let lat = &self.latents[s];
        let kind = if i == lat.log_phi {
            LatentKind::Phi
        } else if let Some(c) = lat.log_mu.iter().position(|&m| m == i) {
            LatentKind::Mu(c)
        } else if lat.log_tau_acoustic == Some(i) {
            LatentKind::TauAcoustic
        } else {
            LatentKind::TauMr
        };
        Some((s, kind))
    }

    /// Terms that change with latent coordinate `i` of trip `s`.
    fn latent_local(&self, s: usize, kind: LatentKind, x: &[f64], ctx: &EvalContext) -> f64 {
        match kind {
            LatentKind::Phi => {
                let own = self.trip_upper(s, x, ctx) + self.obs_acoustic(s, x, &ctx.pop);
                if self.config.center_logphi {
                    own + (0..self.trips.len()).map(|t| self.trip_level2(t, x, ctx)).sum::<f64>()
                } else {
                    own + self.trip_level2(s, x, ctx)
                }
            }
            LatentKind::Mu(c) => {
                let mut out = self.obs_maxn(s, c, x) + self.trip_level2(s, x, ctx);
                if self.rov_centered(c) {
                    for t in (0..self.trips.len()).filter(|&t| t != s) {
                        let lphi = x[self.latents[t].log_phi];
                        let lphi_t = if self.config.center_logphi { lphi - ctx.mean_log_phi } else { lphi };
                        out += self.trip_rov(t, x, ctx, lphi_t);
                    }
                }
                out
            }
            LatentKind::TauAcoustic => self.trip_upper(s, x, ctx) + self.obs_acoustic(s, x, &ctx.pop),
            LatentKind::TauMr => self.trip_upper(s, x, ctx) + self.obs_mr(s, x),
        }
    }

    fn rov_centered(&self, camera: usize) -> bool {
        self.config.rov_separate && self.config.center_logmu && camera < 3
    }

    /// Terms that change with population coordinate `i`.
    fn population_local(&self, i: usize, x: &[f64], ctx: &EvalContext) -> f64 {
        let mut out = self.prior(i, x);
        let n = self.trips.len();
        match self.params[i].target {
            Target::Beta0 | Target::NuX1 | Target::GammaX1 | Target::SigmaPhi(_) => {
                out += (0..n).map(|s| self.trip_level3(s, x, ctx)).sum::<f64>();
            }
            Target::Xi1 => {
                out += (0..n).map(|s| self.trip_offsets(s, x, ctx) + self.obs_acoustic(s, x, &ctx.pop)).sum::<f64>();
            }
            Target::SigmaX(_) => {
                out += (0..n).map(|s| self.trip_offsets(s, x, ctx)).sum::<f64>();
            }
            _ => {
                out += (0..n).map(|s| self.trip_level2(s, x, ctx)).sum::<f64>();
            }
        }
        out
    }

    /// `log p(x with x[i] = value) - log p(x)` given a context consistent with `x`.
    pub fn delta(&self, x: &mut [f64], ctx: &EvalContext, i: usize, value: f64) -> f64 {
        let old = x[i];
        match self.latent_owner(i) {
            None => {
                let before = self.population_local(i, x, ctx);
                x[i] = value;
                let new_ctx = self.context_with(self.decode(x), ctx.mean_log_phi, ctx.mean_log_mu);
                let after = self.population_local(i, x, &new_ctx);
                x[i] = old;
                after - before
            }
            Some((s, kind)) => {
                let before = self.latent_local(s, kind, x, ctx);
                x[i] = value;
                let shifted = self.shifted_context(ctx, kind, value - old);
                let after = self.latent_local(s, kind, x, shifted.as_ref().unwrap_or(ctx));
                x[i] = old;
                after - before
            }
        }
    }

    fn shifted_context(&self, ctx: &EvalContext, kind: LatentKind, change: f64) -> Option<EvalContext> {
        let n = self.trips.len() as f64;
        match kind {
            LatentKind::Phi if self.config.center_logphi => {
                let mut c = ctx.clone();
                c.mean_log_phi += change / n;
                Some(c)
            }
            LatentKind::Mu(k) if self.rov_centered(k) => {
                let mut c = ctx.clone();
                c.mean_log_mu[k] += change / n;
                Some(c)
            }
            _ => None,
        }
    }

    /// Updates `ctx` after coordinate `i` moved from `old` to `x[i]`.
    pub fn accept(&self, x: &[f64], ctx: &mut EvalContext, i: usize, old: f64) {
        let n = self.trips.len() as f64;
        match self.latent_owner(i) {
            None => *ctx = self.context_with(self.decode(x), ctx.mean_log_phi, ctx.mean_log_mu),
            Some((_, LatentKind::Phi)) => ctx.mean_log_phi += (x[i] - old) / n,
            Some((_, LatentKind::Mu(k))) => ctx.mean_log_mu[k] += (x[i] - old) / n,
            Some(_) => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LatentKind {
    Phi,
    Mu(usize),
    TauAcoustic,
    TauMr,
}
