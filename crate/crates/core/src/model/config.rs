//! Model-family configuration and its `key = value` file format.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Camera;
use crate::error::{Error, Result};

/// Intercept structure of the log-MaxN regressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuIntercepts {
    None,
    BetaOnly,
    BetaPlusBoatPlusReef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correlation {
    Exchangeable,
    Free,
}

/// A slope cell `(reef size j, camera)`.
pub type SlopeCell = (usize, Camera);

/// Selects one member of the calibration model family.
///
/// The default is the adopted final model: acoustic counts offset by the
/// pooled ratio, per-camera intercepts only, a quadvariate exchangeable
/// residual, centered `log phi`, no Level-3 intercept and reef-specific
/// `sigma_phi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub include_markrecapture: bool,
    pub include_ratio_offset: bool,
    pub mu_intercepts: MuIntercepts,
    pub phi_intercept_beta0: bool,
    pub rov_separate: bool,
    pub correlation: Correlation,
    /// Groups of slope cells sharing one slope; cells not listed get their own.
    pub slope_ties: Vec<Vec<SlopeCell>>,
    pub center_logphi: bool,
    pub center_logmu: bool,
    pub beta1_prior_sd: f64,
    pub reef_specific_sigma_phi: bool,
    /// When true, `zeta = 0` at small reefs (the small-reef variance is fixed at zero).
    pub reef_specific_sigma_x: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::final_model()
    }
}

impl ModelConfig {
    pub fn final_model() -> Self {
        ModelConfig {
            include_markrecapture: false,
            include_ratio_offset: true,
            mu_intercepts: MuIntercepts::BetaOnly,
            phi_intercept_beta0: false,
            rov_separate: false,
            correlation: Correlation::Exchangeable,
            slope_ties: Vec::new(),
            center_logphi: true,
            center_logmu: false,
            beta1_prior_sd: 2.0,
            reef_specific_sigma_phi: true,
            reef_specific_sigma_x: true,
        }
    }

    /// The most comprehensive member, as used to generate and refit simulated data.
    pub fn comprehensive() -> Self {
        ModelConfig {
            include_markrecapture: true,
            include_ratio_offset: true,
            mu_intercepts: MuIntercepts::BetaPlusBoatPlusReef,
            phi_intercept_beta0: true,
            rov_separate: true,
            correlation: Correlation::Exchangeable,
            slope_ties: Vec::new(),
            center_logphi: true,
            center_logmu: true,
            beta1_prior_sd: 2.0,
            reef_specific_sigma_phi: true,
            reef_specific_sigma_x: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.correlation == Correlation::Free && !self.rov_separate {
            return Err(Error::Model(
                "free correlation is only estimable for the trivariate D/S/T residual (rov_separate = true)".into(),
            ));
        }
        if !(self.beta1_prior_sd == 2.0 || self.beta1_prior_sd == 3.0) {
            return Err(Error::Config(format!(
                "beta1_prior_sd must be 2 or 3, got {}",
                self.beta1_prior_sd
            )));
        }
        let mut seen = BTreeSet::new();
        for group in &self.slope_ties {
            if group.is_empty() {
                return Err(Error::Config("empty slope tie group".into()));
            }
            for &(j, cam) in group {
                if !(1..=2).contains(&j) {
                    return Err(Error::Config(format!("slope tie reef index {j} not in 1..=2")));
                }
                if !seen.insert((j, cam)) {
                    return Err(Error::Config(format!("slope cell {j}{cam} tied twice")));
                }
            }
        }
        Ok(())
    }

    /// Partition of the eight `(j, camera)` slope cells into shared-slope groups.
    pub fn slope_groups(&self) -> Vec<Vec<SlopeCell>> {
        let mut groups: Vec<Vec<SlopeCell>> = self.slope_ties.clone();
        let tied: BTreeSet<SlopeCell> = groups.iter().flatten().copied().collect();
        for j in 1..=2 {
            for cam in Camera::ALL {
                if !tied.contains(&(j, cam)) {
                    groups.push(vec![(j, cam)]);
                }
            }
        }
        groups.sort();
        groups
    }

    /// Renders the config as `key = value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let ties = self
            .slope_ties
            .iter()
            .map(|g| g.iter().map(|(j, c)| format!("{j}{c}")).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join("|");
        let mu = match self.mu_intercepts {
            MuIntercepts::None => "none",
            MuIntercepts::BetaOnly => "beta_only",
            MuIntercepts::BetaPlusBoatPlusReef => "beta_plus_boat_plus_reef",
        };
        let corr = match self.correlation {
            Correlation::Exchangeable => "exchangeable",
            Correlation::Free => "free",
        };
        let _ = writeln!(s, "include_markrecapture = {}", self.include_markrecapture);
        let _ = writeln!(s, "include_ratio_offset = {}", self.include_ratio_offset);
        let _ = writeln!(s, "mu_intercepts = {mu}");
        let _ = writeln!(s, "phi_intercept_beta0 = {}", self.phi_intercept_beta0);
        let _ = writeln!(s, "rov_separate = {}", self.rov_separate);
        let _ = writeln!(s, "correlation = {corr}");
        let _ = writeln!(s, "slope_ties = {ties}");
        let _ = writeln!(s, "center_logphi = {}", self.center_logphi);
        let _ = writeln!(s, "center_logmu = {}", self.center_logmu);
        let _ = writeln!(s, "beta1_prior_sd = {}", self.beta1_prior_sd);
        let _ = writeln!(s, "reef_specific_sigma_phi = {}", self.reef_specific_sigma_phi);
        let _ = writeln!(s, "reef_specific_sigma_x = {}", self.reef_specific_sigma_x);
        s
    }
}

/// Iterates `key = value` pairs, skipping blank lines and `#` comments.
pub(crate) fn kv_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: n + 1, message: format!("expected key = value, got `{line}`") })?;
        out.push((n + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_bool(v: &str, line: usize) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Parse { line, message: format!("expected boolean, got `{v}`") }),
    }
}

fn parse_cell(s: &str, line: usize) -> Result<SlopeCell> {
    let s = s.trim();
    let mut chars = s.chars();
    let j = chars.next().and_then(|c| c.to_digit(10)).map(|d| d as usize);
    let cam: Option<Camera> = chars.as_str().parse().ok();
    match (j, cam) {
        (Some(j), Some(cam)) => Ok((j, cam)),
        _ => Err(Error::Parse { line, message: format!("invalid slope cell `{s}` (expected e.g. 1D)") }),
    }
}

impl FromStr for ModelConfig {
    type Err = Error;

    /// Parses `key = value` lines; unspecified keys keep final-model defaults.
    fn from_str(text: &str) -> Result<Self> {
        let mut c = ModelConfig::final_model();
        for (line, k, v) in kv_pairs(text)? {
            match k.as_str() {
                "include_markrecapture" => c.include_markrecapture = parse_bool(&v, line)?,
                "include_ratio_offset" => c.include_ratio_offset = parse_bool(&v, line)?,
                "mu_intercepts" => {
                    c.mu_intercepts = match v.as_str() {
                        "none" => MuIntercepts::None,
                        "beta_only" => MuIntercepts::BetaOnly,
                        "beta_plus_boat_plus_reef" => MuIntercepts::BetaPlusBoatPlusReef,
                        _ => return Err(Error::Parse { line, message: format!("invalid mu_intercepts `{v}`") }),
                    }
                }
                "phi_intercept_beta0" => c.phi_intercept_beta0 = parse_bool(&v, line)?,
                "rov_separate" => c.rov_separate = parse_bool(&v, line)?,
                "correlation" => {
                    c.correlation = match v.as_str() {
                        "exchangeable" => Correlation::Exchangeable,
                        "free" => Correlation::Free,
                        _ => return Err(Error::Parse { line, message: format!("invalid correlation `{v}`") }),
                    }
                }
                "slope_ties" => {
                    c.slope_ties = v
                        .split('|')
                        .filter(|g| !g.trim().is_empty())
                        .map(|g| g.split(',').map(|cell| parse_cell(cell, line)).collect::<Result<Vec<_>>>())
                        .collect::<Result<Vec<_>>>()?;
                }
                "center_logphi" => c.center_logphi = parse_bool(&v, line)?,
                "center_logmu" => c.center_logmu = parse_bool(&v, line)?,
                "beta1_prior_sd" => {
                    c.beta1_prior_sd = v
                        .parse()
                        .map_err(|_| Error::Parse { line, message: format!("invalid number `{v}`") })?
                }
                "reef_specific_sigma_phi" => c.reef_specific_sigma_phi = parse_bool(&v, line)?,
                "reef_specific_sigma_x" => c.reef_specific_sigma_x = parse_bool(&v, line)?,
                _ => return Err(Error::Parse { line, message: format!("unknown key `{k}`") }),
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_final_model() {
        assert_eq!("".parse::<ModelConfig>().unwrap(), ModelConfig::final_model());
    }

    #[test]
    fn kv_round_trip() {
        let mut c = ModelConfig::comprehensive();
        c.slope_ties = vec![vec![(1, Camera::Drop), (1, Camera::Sbruv)], vec![(2, Camera::Trap), (2, Camera::Rov)]];
        c.beta1_prior_sd = 3.0;
        let back: ModelConfig = c.to_kv().parse().unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn slope_groups_cover_all_cells() {
        let mut c = ModelConfig::final_model();
        assert_eq!(c.slope_groups().len(), 8);
        c.slope_ties = vec![vec![(2, Camera::Drop), (2, Camera::Rov)]];
        let groups = c.slope_groups();
        assert_eq!(groups.len(), 7);
        assert_eq!(groups.iter().map(Vec::len).sum::<usize>(), 8);
    }

    #[test]
    fn free_correlation_needs_trivariate() {
        let text = "correlation = free\nrov_separate = false\n";
        assert!(text.parse::<ModelConfig>().is_err());
        let ok = "correlation = free\nrov_separate = true\n";
        assert!(ok.parse::<ModelConfig>().is_ok());
    }

    #[test]
    fn rejects_unknown_key_and_bad_prior_sd() {
        assert!("foo = 1".parse::<ModelConfig>().is_err());
        assert!("beta1_prior_sd = 2.5".parse::<ModelConfig>().is_err());
    }
}
