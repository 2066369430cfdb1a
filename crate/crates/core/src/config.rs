//! JSON run configuration.

use serde::{Deserialize, Serialize};

use crate::conjugate::ScoreRule;
use crate::covariance::CovFamily;
use crate::geo::{OrderStrategy, SearchKind};
use crate::io::ColumnSpec;
use crate::posterior::ModelKind;
use crate::samplers::{BetaPrior, InverseGamma, PriorSpec, Starting, Tuning, UniformPrior};
use crate::samples::SubSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaNormal {
    pub mean: Vec<f64>,
    /// `p x p` covariance as nested rows.
    pub cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(rename = "beta.Norm", default, skip_serializing_if = "Option::is_none")]
    pub beta_norm: Option<BetaNormal>,
    #[serde(rename = "sigma.sq.IG", default, skip_serializing_if = "Option::is_none")]
    pub sigma_sq_ig: Option<[f64; 2]>,
    #[serde(rename = "tau.sq.IG", default, skip_serializing_if = "Option::is_none")]
    pub tau_sq_ig: Option<[f64; 2]>,
    #[serde(rename = "phi.Unif", default, skip_serializing_if = "Option::is_none")]
    pub phi_unif: Option<[f64; 2]>,
    #[serde(rename = "nu.Unif", default, skip_serializing_if = "Option::is_none")]
    pub nu_unif: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartingConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(rename = "sigma.sq", default, skip_serializing_if = "Option::is_none")]
    pub sigma_sq: Option<f64>,
    #[serde(rename = "tau.sq", default, skip_serializing_if = "Option::is_none")]
    pub tau_sq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(rename = "sigma.sq", default, skip_serializing_if = "Option::is_none")]
    pub sigma_sq: Option<f64>,
    #[serde(rename = "tau.sq", default, skip_serializing_if = "Option::is_none")]
    pub tau_sq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaAlpha {
    pub phi: f64,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubSampleConfig {
    #[serde(default = "one")]
    pub start: usize,
    #[serde(default)]
    pub end: Option<usize>,
    #[serde(default = "one")]
    pub thin: usize,
}

fn one() -> usize {
    1
}

impl From<&SubSampleConfig> for SubSample {
    fn from(s: &SubSampleConfig) -> Self {
        SubSample::new(s.start, s.end, s.thin)
    }
}

fn default_coords() -> [String; 2] {
    ["x".into(), "y".into()]
}
fn default_response() -> String {
    "response".into()
}
fn default_true() -> bool {
    true
}
fn default_neighbors() -> usize {
    15
}
fn default_samples() -> usize {
    1000
}
fn default_ordering() -> OrderStrategy {
    OrderStrategy::FirstCoord
}
fn default_conj_samples() -> usize {
    1000
}

/// Whole-run configuration. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<ModelKind>,
    #[serde(default)]
    pub cov_model: CovFamily,
    #[serde(default = "default_neighbors")]
    pub n_neighbors: usize,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_ordering")]
    pub ordering: OrderStrategy,
    #[serde(default)]
    pub search: SearchKind,
    #[serde(default = "default_coords")]
    pub coords: [String; 2],
    #[serde(default = "default_response")]
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<String>>,
    #[serde(default = "default_true")]
    pub intercept: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<String>,
    #[serde(default)]
    pub priors: PriorConfig,
    #[serde(default)]
    pub starting: StartingConfig,
    #[serde(default)]
    pub tuning: TuningConfig,
    #[serde(default)]
    pub n_report: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(rename = "sub.sample", default, skip_serializing_if = "Option::is_none")]
    pub sub_sample: Option<SubSampleConfig>,
    #[serde(rename = "fit.rep", default)]
    pub fit_rep: bool,
    #[serde(default = "default_true")]
    pub store_w: bool,
    #[serde(default)]
    pub verbose: bool,
    #[serde(rename = "theta.alpha", default, skip_serializing_if = "Option::is_none")]
    pub theta_alpha: Option<ThetaAlpha>,
    #[serde(rename = "k.fold", default, skip_serializing_if = "Option::is_none")]
    pub k_fold: Option<usize>,
    #[serde(rename = "score.rule", default)]
    pub score_rule: ScoreRule,
    /// Exact posterior draws written for a conjugate fit.
    #[serde(default = "default_conj_samples")]
    pub conjugate_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields default")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config: missing `{0}`")]
    Missing(&'static str),
    #[error("config: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn columns(&self) -> ColumnSpec {
        ColumnSpec {
            coords: self.coords.clone(),
            response: Some(self.response.clone()),
            covariates: self.covariates.clone(),
            intercept: self.intercept,
            trials: self.trials.clone(),
        }
    }

    pub fn sub_sample(&self) -> SubSample {
        self.sub_sample.as_ref().map(SubSample::from).unwrap_or_default()
    }

    pub fn beta_prior(&self) -> Result<BetaPrior, ConfigError> {
        Ok(match &self.priors.beta_norm {
            None => BetaPrior::Flat,
            Some(b) => {
                let p = b.mean.len();
                if b.cov.len() != p || b.cov.iter().any(|r| r.len() != p) {
                    return Err(ConfigError::Invalid("beta.Norm cov must be p x p with p = len(mean)".into()));
                }
                BetaPrior::Normal { mean: b.mean.clone(), cov: b.cov.concat() }
            }
        })
    }

    pub fn sigma_sq_ig(&self) -> Result<InverseGamma, ConfigError> {
        let [a, b] = self.priors.sigma_sq_ig.ok_or(ConfigError::Missing("priors.sigma.sq.IG"))?;
        Ok(InverseGamma::new(a, b))
    }

    /// Priors for an MCMC method; `tau.sq.IG` is only required when the model has a nugget.
    pub fn prior_spec(&self, needs_tau: bool) -> Result<PriorSpec, ConfigError> {
        let tau = match self.priors.tau_sq_ig {
            Some([a, b]) => InverseGamma::new(a, b),
            None if needs_tau => return Err(ConfigError::Missing("priors.tau.sq.IG")),
            None => InverseGamma::new(1.0, 1.0),
        };
        let [lo, hi] = self.priors.phi_unif.ok_or(ConfigError::Missing("priors.phi.Unif"))?;
        Ok(PriorSpec {
            beta: self.beta_prior()?,
            sigma_sq: self.sigma_sq_ig()?,
            tau_sq: tau,
            phi: UniformPrior::new(lo, hi),
            nu: self.priors.nu_unif.map(|[a, b]| UniformPrior::new(a, b)),
        })
    }

    pub fn starting(&self, needs_tau: bool) -> Result<Starting, ConfigError> {
        let s = &self.starting;
        Ok(Starting {
            phi: s.phi.ok_or(ConfigError::Missing("starting.phi"))?,
            sigma_sq: s.sigma_sq.ok_or(ConfigError::Missing("starting.sigma.sq"))?,
            tau_sq: match s.tau_sq {
                Some(t) => t,
                None if needs_tau => return Err(ConfigError::Missing("starting.tau.sq")),
                None => 0.0,
            },
            nu: s.nu,
            beta: s.beta.clone(),
            w: s.w.clone(),
        })
    }

    /// Proposal scales; every MH-updated parameter of `method` must be tuned.
    pub fn tuning(&self, method: ModelKind) -> Result<Tuning, ConfigError> {
        let t = &self.tuning;
        let need = |v: Option<f64>, name: &'static str| match v {
            Some(x) if x > 0.0 => Ok(x),
            Some(_) => Err(ConfigError::Invalid(format!("{name} must be positive"))),
            None => Err(ConfigError::Missing(name)),
        };
        let uses_nu = self.cov_model.uses_nu();
        let response = method == ModelKind::Response;
        Ok(Tuning {
            phi: need(t.phi, "tuning.phi")?,
            sigma_sq: if response { need(t.sigma_sq, "tuning.sigma.sq")? } else { t.sigma_sq.unwrap_or(0.0) },
            tau_sq: if response { need(t.tau_sq, "tuning.tau.sq")? } else { t.tau_sq.unwrap_or(0.0) },
            nu: if uses_nu { need(t.nu, "tuning.nu")? } else { t.nu.unwrap_or(0.0) },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_paper_style_keys() {
        let c = RunConfig::from_json(
            r#"{"method":"latent","cov_model":"exponential","n_neighbors":10,"n_samples":2000,
                "priors":{"phi.Unif":[3,30],"sigma.sq.IG":[2,1],"tau.sq.IG":[2,1]},
                "starting":{"phi":6,"sigma.sq":1,"tau.sq":0.5},
                "tuning":{"phi":0.2},"n_report":500,"sub.sample":{"start":1000}}"#,
        )
        .unwrap();
        let p = c.prior_spec(true).unwrap();
        assert_eq!(p.phi, UniformPrior::new(3.0, 30.0));
        assert_eq!(c.tuning(ModelKind::Latent).unwrap().phi, 0.2);
        assert!(c.tuning(ModelKind::Response).is_err());
        assert_eq!(c.sub_sample().start, 1000);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::from_json(r#"{"n_sample": 5}"#).unwrap_err().to_string();
        assert!(e.contains("n_sample"), "{e}");
        assert!(RunConfig::from_json(r#"{"priors":{"phi.unif":[3,30]}}"#).is_err());
    }

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.coords, ["x".to_string(), "y".to_string()]);
        assert_eq!(c.n_neighbors, 15);
        assert!(c.intercept);
    }
}
