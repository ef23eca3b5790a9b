//! Joint Metropolis moves that update a population parameter together with
//! the latents it governs. Each move `T(a)` satisfies `T(-a) = T(a)^-1`, so a
//! symmetric step `a` only needs the log Jacobian in the acceptance ratio.

use super::config::Correlation;
use super::density::logistic;
use super::graph::{contrast, ModelGraph, Target};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum JointMove {
    /// `x += a v` for a sparse direction `v`.
    Shift(Vec<(usize, f64)>),
    /// `log sigma_x[h] += a`; each count-type latent keeps its standardized
    /// deviation from its conditional mean.
    ScaleTau { sigma: usize, h: usize, trips: Vec<usize> },
    /// `log sigma_phi += a` over `trips`, with each trip's count-type
    /// latents carried along by the change in `log phi`.
    ScalePhi { sigma: usize, trips: Vec<usize> },
    /// `log sigma_y += a` with every trip's MaxN regression residuals rescaled.
    ScaleY { sigma: usize, cameras: usize },
    /// `logit rho += a`; each trip's residual vector keeps its standardized
    /// mean and contrast components under the exchangeable covariance.
    Rho { rho: usize, cameras: usize },
    /// The inner move followed by moving every `log mu` by the change in its
    /// regression mean, so MaxN regression residuals are unchanged.
    Carried(Box<JointMove>),
    /// As [`JointMove::Carried`], moving only latents of unobserved MaxN cells.
    CarriedMissing(Box<JointMove>),
    /// `log sigma_yR += a` with the ROV residuals rescaled.
    ScaleRov { sigma: usize },
    /// `log beta1 += a` for a slope on `log phi`; each affected `log mu`
    /// moves by the change in its slope term.
    Slope { param: usize, cells: Vec<(usize, usize)> },
    /// As [`JointMove::Slope`] for one `(j, camera)` cell, with the reef-`j`
    /// intercept moved so the cell's mean predictor is unchanged.
    CenteredSlope { param: usize, j: usize, c: usize, beta_y0: usize, gamma_y: Option<usize> },
    /// As [`JointMove::Slope`] for the ROV slope on `log mu` of camera `k`.
    RovSlope { param: usize, k: usize },
}

impl ModelGraph {
    pub(crate) fn build_joint_moves(&self) -> Vec<JointMove> {
        let mut out = Vec::new();
        let upper = [Target::Beta0, Target::NuX1, Target::GammaX1];
        for target in &upper {
            let Some(p) = self.param_index(target) else { continue };
            let mut dir = vec![(p, 1.0)];
            for (t, lat) in self.trips().iter().zip(self.latents()) {
                let w = match target {
                    Target::NuX1 => contrast(t.boat),
                    Target::GammaX1 => contrast(t.reef),
                    _ => 1.0,
                };
                dir.push((lat.log_phi, w));
                dir.extend(lat.log_tau_acoustic.map(|i| (i, w)));
                dir.extend(lat.log_tau_mr.map(|i| (i, w)));
            }
            if *target != Target::Beta0 {
                out.push(JointMove::Carried(Box::new(JointMove::Shift(dir.clone()))));
            }
            out.push(JointMove::Shift(dir));
        }
        if let Some(p) = self.param_index(&Target::Xi1) {
            let mut dir = vec![(p, 1.0)];
            for lat in self.latents() {
                dir.extend(lat.log_tau_acoustic.map(|i| (i, 1.0)));
                dir.extend(lat.log_tau_mr.map(|i| (i, -1.0)));
            }
            if dir.len() > 1 {
                out.push(JointMove::Shift(dir));
            }
        }
        // Level-3 location against the acoustic offset: keeps every
        // acoustic log-rate fixed and moves only the mark-recapture means.
        if let (Some(b0), Some(xi)) = (self.param_index(&Target::Beta0), self.param_index(&Target::Xi1)) {
            let mut dir = vec![(b0, 1.0), (xi, -1.0)];
            dir.extend(self.latents().iter().map(|lat| (lat.log_phi, 1.0)));
            out.push(JointMove::Shift(dir));
        }
        for c in 0..4 {
            for target in [Target::BetaY0(c), Target::NuY1(c), Target::GammaY1(c)] {
                let Some(p) = self.param_index(&target) else { continue };
                let mut dir = vec![(p, 1.0)];
                for (t, lat) in self.trips().iter().zip(self.latents()) {
                    let w = match target {
                        Target::NuY1(_) => contrast(t.boat),
                        Target::GammaY1(_) => contrast(t.reef),
                        _ => 1.0,
                    };
                    dir.push((lat.log_mu[c], w));
                }
                out.push(JointMove::Shift(dir));
            }
            // intercept of one reef size alone: beta_y0 + contrast(j) gamma_y
            let (Some(b), Some(g)) = (self.param_index(&Target::BetaY0(c)), self.param_index(&Target::GammaY1(c))) else {
                continue;
            };
            for reef in 1..=2 {
                let params = vec![(b, 0.5), (g, 0.5 * contrast(reef))];
                let mut dir = params.clone();
                for (t, lat) in self.trips().iter().zip(self.latents()) {
                    if t.reef == reef {
                        dir.push((lat.log_mu[c], 1.0));
                    }
                }
                out.push(JointMove::Shift(dir));
                out.push(JointMove::CarriedMissing(Box::new(JointMove::Shift(params))));
            }
        }
        for h in 0..2 {
            let Some(sigma) = self.param_index(&Target::SigmaX(h)) else { continue };
            let trips: Vec<usize> = self
                .latents()
                .iter()
                .enumerate()
                .filter(|(_, lat)| if h == 0 { lat.log_tau_acoustic.is_some() } else { lat.log_tau_mr.is_some() })
                .map(|(s, _)| s)
                .collect();
            if !trips.is_empty() {
                out.push(JointMove::ScaleTau { sigma, h, trips });
            }
        }
        for (target, reef) in [(Target::SigmaPhi(Some(0)), Some(1)), (Target::SigmaPhi(Some(1)), Some(2)), (Target::SigmaPhi(None), None)] {
            let Some(sigma) = self.param_index(&target) else { continue };
            let trips: Vec<usize> =
                (0..self.trips().len()).filter(|&s| reef.is_none_or(|j| self.trips()[s].reef == j)).collect();
            if !trips.is_empty() {
                out.push(JointMove::Carried(Box::new(JointMove::ScalePhi { sigma, trips: trips.clone() })));
                out.push(JointMove::ScalePhi { sigma, trips });
            }
        }
        let cameras = if self.config().rov_separate { 3 } else { 4 };
        if let Some(sigma) = self.param_index(&Target::SigmaY) {
            out.push(JointMove::ScaleY { sigma, cameras });
        }
        if let (Some(rho), Correlation::Exchangeable) = (self.param_index(&Target::Rho), self.config().correlation) {
            out.push(JointMove::Rho { rho, cameras });
        }
        if let Some(sigma) = self.param_index(&Target::SigmaYR) {
            out.push(JointMove::ScaleRov { sigma });
        }
        let any_missing = self.trips().iter().any(|t| t.y.iter().any(Option::is_none));
        for (param, spec) in self.params().iter().enumerate() {
            let level2 = matches!(
                spec.target,
                Target::BetaY0(_) | Target::NuY1(_) | Target::GammaY1(_) | Target::Beta1(_) | Target::Beta1Rov(_)
            );
            if level2 && any_missing {
                out.push(JointMove::CarriedMissing(Box::new(JointMove::Shift(vec![(param, 1.0)]))));
            }
            match &spec.target {
                Target::Beta1(cells) => {
                    out.push(JointMove::Slope { param, cells: cells.clone() });
                    if let ([(j, c)], Some(beta_y0)) = (cells.as_slice(), self.param_index(&Target::BetaY0(cells[0].1))) {
                        let gamma_y = self.param_index(&Target::GammaY1(*c));
                        out.push(JointMove::CenteredSlope { param, j: *j, c: *c, beta_y0, gamma_y });
                    }
                }
                Target::Beta1Rov(k) => out.push(JointMove::RovSlope { param, k: *k }),
                _ => {}
            }
        }
        out
    }

    /// Applies joint move `k` with step `a` in place; returns the log Jacobian.
    pub(crate) fn apply_joint_move(&self, x: &mut [f64], k: usize, a: f64) -> f64 {
        self.apply_move(&self.moves[k], x, a)
    }

    /// Moves each `log mu` by the change in its regression mean between
    /// `before` and the current state; a unit-triangular map.
    fn carry_mu(&self, before: &[f64], x: &mut [f64], missing_only: bool) {
        let old = self.context(before);
        let new = self.context(x);
        let d = if self.config().rov_separate { 3 } else { 4 };
        let n = self.trips().len();
        let mut mu_change = vec![[0.0; 4]; n];
        for s in 0..n {
            for c in 0..d {
                mu_change[s][c] = self.mu_mean(s, c, x, &new) - self.mu_mean(s, c, before, &old);
            }
        }
        let moves = |s: usize, c: usize| !missing_only || self.trips()[s].y[c].is_none();
        for (s, lat) in self.latents().iter().enumerate() {
            for c in 0..d {
                if moves(s, c) {
                    x[lat.log_mu[c]] += mu_change[s][c];
                }
            }
        }
        if self.config().rov_separate {
            let after = self.context(x);
            for s in (0..n).filter(|&s| moves(s, 3)) {
                let i = self.latents()[s].log_mu[3];
                x[i] += self.rov_mean(s, x, &after) - self.rov_mean(s, before, &old);
            }
        }
    }

    fn apply_move(&self, mv: &JointMove, x: &mut [f64], a: f64) -> f64 {
        match mv {
            JointMove::Carried(inner) => {
                let before = x.to_vec();
                let jac = self.apply_move(inner, x, a);
                self.carry_mu(&before, x, false);
                jac
            }
            JointMove::CarriedMissing(inner) => {
                let before = x.to_vec();
                let jac = self.apply_move(inner, x, a);
                self.carry_mu(&before, x, true);
                jac
            }
            JointMove::Shift(dir) => {
                for &(i, v) in dir {
                    x[i] += a * v;
                }
                0.0
            }
            JointMove::ScaleTau { sigma, h, trips } => {
                let pop = self.decode(x);
                let f = a.exp();
                x[*sigma] += a;
                for &s in trips {
                    let lat = &self.latents()[s];
                    let lphi = x[lat.log_phi];
                    let (i, mean) = if *h == 0 {
                        (lat.log_tau_acoustic.unwrap(), self.acoustic_log_rate(&self.trips()[s], lphi, &pop))
                    } else {
                        (lat.log_tau_mr.unwrap(), lphi + pop.xi(1))
                    };
                    x[i] = mean + (x[i] - mean) * f;
                }
                a * trips.len() as f64
            }
            JointMove::ScalePhi { sigma, trips } => {
                let pop = self.decode(x);
                let f = a.exp();
                x[*sigma] += a;
                for &s in trips {
                    let t = &self.trips()[s];
                    let lat = &self.latents()[s];
                    let mean = pop.cell_mean_log_phi(t.boat, t.reef);
                    let old = x[lat.log_phi];
                    let new = mean + (old - mean) * f;
                    x[lat.log_phi] = new;
                    for i in [lat.log_tau_acoustic, lat.log_tau_mr].into_iter().flatten() {
                        x[i] += new - old;
                    }
                }
                a * trips.len() as f64
            }
            JointMove::ScaleY { sigma, cameras } => {
                let ctx = self.context(x);
                let f = a.exp();
                x[*sigma] += a;
                for s in 0..self.trips().len() {
                    for c in 0..*cameras {
                        let i = self.latents()[s].log_mu[c];
                        let pred = self.mu_mean(s, c, x, &ctx);
                        x[i] = pred + (x[i] - pred) * f;
                    }
                }
                a * (self.trips().len() * cameras) as f64
            }
            JointMove::Rho { rho, cameras } => {
                let ctx = self.context(x);
                let d = *cameras as f64;
                let old = logistic(x[*rho]);
                let new = logistic(x[*rho] + a);
                // variances of the residual mean and of deviations from it
                let lead = |r: f64| r + (1.0 - r) / d;
                let f_mean = (lead(new) / lead(old)).sqrt();
                let f_dev = ((1.0 - new) / (1.0 - old)).sqrt();
                x[*rho] += a;
                let mut e = [0.0; 4];
                for s in 0..self.trips().len() {
                    let lat = &self.latents()[s];
                    let preds: Vec<f64> = (0..*cameras).map(|c| self.mu_mean(s, c, x, &ctx)).collect();
                    for c in 0..*cameras {
                        e[c] = x[lat.log_mu[c]] - preds[c];
                    }
                    let m = e[..*cameras].iter().sum::<f64>() / d;
                    for c in 0..*cameras {
                        x[lat.log_mu[c]] = preds[c] + m * f_mean + (e[c] - m) * f_dev;
                    }
                }
                self.trips().len() as f64 * (f_mean.ln() + (d - 1.0) * f_dev.ln())
            }
            JointMove::ScaleRov { sigma } => {
                let ctx = self.context(x);
                let f = a.exp();
                x[*sigma] += a;
                let r = 3;
                for s in 0..self.trips().len() {
                    let i = self.latents()[s].log_mu[r];
                    let pred = self.rov_mean(s, x, &ctx);
                    x[i] = pred + (x[i] - pred) * f;
                }
                a * self.trips().len() as f64
            }
            JointMove::Slope { param, cells } => {
                let n = self.trips().len() as f64;
                let mean = if self.config().center_logphi {
                    self.latents().iter().map(|lat| x[lat.log_phi]).sum::<f64>() / n
                } else {
                    0.0
                };
                let change = x[*param].exp() * (a.exp() - 1.0);
                x[*param] += a;
                for (t, lat) in self.trips().iter().zip(self.latents()) {
                    for &(j, c) in cells {
                        if t.reef == j + 1 {
                            x[lat.log_mu[c]] += change * (x[lat.log_phi] - mean);
                        }
                    }
                }
                0.0
            }
            JointMove::CenteredSlope { param, j, c, beta_y0, gamma_y } => {
                let n = self.trips().len() as f64;
                let mean = if self.config().center_logphi {
                    self.latents().iter().map(|lat| x[lat.log_phi]).sum::<f64>() / n
                } else {
                    0.0
                };
                let (mut sum, mut count) = (0.0, 0.0);
                for (t, lat) in self.trips().iter().zip(self.latents()) {
                    if t.reef == j + 1 {
                        sum += x[lat.log_phi] - mean;
                        count += 1.0;
                    }
                }
                if count == 0.0 {
                    x[*param] += a;
                    return 0.0;
                }
                let cell_mean = sum / count;
                let change = x[*param].exp() * (a.exp() - 1.0);
                x[*param] += a;
                match gamma_y {
                    Some(g) => {
                        x[*beta_y0] -= change * cell_mean / 2.0;
                        x[*g] -= contrast(j + 1) * change * cell_mean / 2.0;
                    }
                    None => x[*beta_y0] -= change * cell_mean,
                }
                for (t, lat) in self.trips().iter().zip(self.latents()) {
                    if t.reef == j + 1 {
                        x[lat.log_mu[*c]] += change * (x[lat.log_phi] - mean - cell_mean);
                    }
                }
                0.0
            }
            JointMove::RovSlope { param, k } => {
                let n = self.trips().len() as f64;
                let mean = if self.config().center_logmu {
                    self.latents().iter().map(|lat| x[lat.log_mu[*k]]).sum::<f64>() / n
                } else {
                    0.0
                };
                let change = x[*param].exp() * (a.exp() - 1.0);
                x[*param] += a;
                for lat in self.latents() {
                    x[lat.log_mu[3]] += change * (x[lat.log_mu[*k]] - mean);
                }
                0.0
            }
        }
    }
}
