//! Model comparison criteria and predictive scores.

pub mod scores;
pub mod variogram;

pub use scores::{coverage_width, crps_gaussian, crps_t, rmspe};
pub use variogram::{empirical_semivariogram, fit_exponential_variogram, VariogramBin, VariogramFit};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::linalg::dot;
use crate::posterior::{replicate_data, FittedModel, McmcModel, ModelKind, PosteriorError};
use crate::samples::{DrawMatrix, SubSample};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(
        "{measure} is not available for the {model} model: it requires observations that are conditionally \
         independent given the parameters, and the {model} model's observations are jointly dependent, so it is \
         not appropriate to compute {measure} for it"
    )]
    NotApplicable { model: ModelKind, measure: &'static str },
    #[error("replicate variance is zero at location {location}")]
    ZeroVariance { location: usize },
    #[error("replicates have {got} columns but there are {expected} observations")]
    Length { expected: usize, got: usize },
    #[error("at least one replicate draw is required")]
    NoDraws,
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicBlock {
    #[serde(rename = "DIC")]
    pub dic: f64,
    #[serde(rename = "D")]
    pub d_bar: f64,
    #[serde(rename = "pD")]
    pub p_d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaicBlock {
    #[serde(rename = "LPPD")]
    pub lppd: f64,
    #[serde(rename = "P.1")]
    pub p1: f64,
    #[serde(rename = "P.2")]
    pub p2: f64,
    #[serde(rename = "WAIC.1")]
    pub waic1: f64,
    #[serde(rename = "WAIC.2")]
    pub waic2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpdBlock {
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "P")]
    pub p: f64,
    #[serde(rename = "D")]
    pub d: f64,
}

fn ln_choose(n: u32, k: f64) -> f64 {
    let n = n as f64;
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Conditional log-likelihood of observation `i` under linear predictor `eta` (and nugget `tau_sq`).
fn log_lik(kind: ModelKind, y: f64, trials: u32, eta: f64, tau_sq: f64) -> f64 {
    if kind.is_binomial() {
        ln_choose(trials, y) + y * eta - trials as f64 * softplus(eta)
    } else {
        -0.5 * ((2.0 * std::f64::consts::PI * tau_sq).ln() + (y - eta).powi(2) / tau_sq)
    }
}

fn require_independent<'a>(model: &'a FittedModel, measure: &'static str) -> Result<&'a McmcModel, DiagnosticsError> {
    match model {
        FittedModel::Mcmc(m) if m.kind.conditionally_independent() => Ok(m),
        other => Err(DiagnosticsError::NotApplicable { model: other.kind(), measure }),
    }
}

struct DrawParams<'a> {
    m: &'a McmcModel,
    tau_col: Option<usize>,
}

impl DrawParams<'_> {
    fn eta(&self, beta: &[f64], w: Option<f64>, i: usize) -> f64 {
        dot(self.m.data.row(i), beta) + w.unwrap_or(0.0)
    }

    fn trials(&self, i: usize) -> u32 {
        self.m.data.trials.as_ref().map_or(1, |t| t[i])
    }

    fn w_matrix(&self) -> Result<Option<&DrawMatrix>, DiagnosticsError> {
        match self.m.kind {
            ModelKind::Latent | ModelKind::Binomial => {
                Ok(Some(self.m.samples.w.as_ref().ok_or(PosteriorError::MissingLatent(self.m.kind.name()))?))
            }
            _ => Ok(None),
        }
    }
}

/// Pointwise log-likelihood, rows = selected draws.
fn pointwise_loglik(m: &McmcModel, idx: &[usize]) -> Result<DrawMatrix, DiagnosticsError> {
    let dp = DrawParams { m, tau_col: m.samples.theta_index("tau.sq") };
    let w = dp.w_matrix()?;
    let n = m.data.len();
    let rows: Vec<Vec<f64>> = idx
        .par_iter()
        .map(|&l| {
            let beta = m.samples.beta.row(l);
            let tau = dp.tau_col.map_or(0.0, |c| m.samples.theta.get(l, c));
            (0..n)
                .map(|i| log_lik(m.kind, m.data.y[i], dp.trials(i), dp.eta(beta, w.map(|w| w.get(l, i)), i), tau))
                .collect()
        })
        .collect();
    let mut out = DrawMatrix::with_cols(n);
    rows.iter().for_each(|r| out.push(r));
    Ok(out)
}

/// Conditional DIC with the plug-in at the posterior means of `beta`, `w` and `tau^2`.
pub fn dic(model: &FittedModel, sub: &SubSample) -> Result<DicBlock, DiagnosticsError> {
    let m = require_independent(model, "DIC")?;
    let idx = sub.indices(m.samples.n_samples()).map_err(PosteriorError::from)?;
    let ll = pointwise_loglik(m, &idx)?;
    let k = idx.len() as f64;
    let d_bar = -2.0 * ll.data.iter().sum::<f64>() / k;

    let dp = DrawParams { m, tau_col: m.samples.theta_index("tau.sq") };
    let sel_beta = m.samples.beta.select_rows(&idx).column_means();
    let w_bar = dp.w_matrix()?.map(|w| w.select_rows(&idx).column_means());
    let tau_bar = dp.tau_col.map_or(0.0, |c| idx.iter().map(|&l| m.samples.theta.get(l, c)).sum::<f64>() / k);
    let d_hat: f64 = -2.0
        * (0..m.data.len())
            .map(|i| {
                let eta = dp.eta(&sel_beta, w_bar.as_ref().map(|w| w[i]), i);
                log_lik(m.kind, m.data.y[i], dp.trials(i), eta, tau_bar)
            })
            .sum::<f64>();
    let p_d = d_bar - d_hat;
    Ok(DicBlock { dic: d_bar + p_d, d_bar, p_d })
}

/// WAIC from the pointwise log-likelihood matrix (rows = draws).
pub fn waic_from_loglik(ll: &DrawMatrix) -> WaicBlock {
    let k = ll.rows as f64;
    let (mut lppd, mut p1, mut p2) = (0.0, 0.0, 0.0);
    for i in 0..ll.cols {
        let col = ll.column(i);
        let mx = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_mean = mx + (col.iter().map(|v| (v - mx).exp()).sum::<f64>() / k).ln();
        let mean_log = col.iter().sum::<f64>() / k;
        lppd += log_mean;
        p1 += 2.0 * (log_mean - mean_log);
        if ll.rows > 1 {
            p2 += col.iter().map(|v| (v - mean_log).powi(2)).sum::<f64>() / (k - 1.0);
        }
    }
    WaicBlock { lppd, p1, p2, waic1: -2.0 * (lppd - p1), waic2: -2.0 * (lppd - p2) }
}

pub fn waic(model: &FittedModel, sub: &SubSample) -> Result<WaicBlock, DiagnosticsError> {
    let m = require_independent(model, "WAIC")?;
    let idx = sub.indices(m.samples.n_samples()).map_err(PosteriorError::from)?;
    Ok(waic_from_loglik(&pointwise_loglik(m, &idx)?))
}

fn replicate_moments(replicates: &DrawMatrix, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>), DiagnosticsError> {
    if replicates.cols != y.len() {
        return Err(DiagnosticsError::Length { expected: y.len(), got: replicates.cols });
    }
    if replicates.rows == 0 {
        return Err(DiagnosticsError::NoDraws);
    }
    let mean = replicates.column_means();
    let k = replicates.rows as f64;
    let var = (0..replicates.cols)
        .map(|c| {
            if replicates.rows < 2 {
                0.0
            } else {
                (0..replicates.rows).map(|r| (replicates.get(r, c) - mean[c]).powi(2)).sum::<f64>() / (k - 1.0)
            }
        })
        .collect();
    Ok((mean, var))
}

/// Gelfand-Ghosh criterion `D = G + P` from replicate draws (rows = draws).
pub fn gpd(replicates: &DrawMatrix, y: &[f64]) -> Result<GpdBlock, DiagnosticsError> {
    let (mean, var) = replicate_moments(replicates, y)?;
    let g: f64 = y.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum();
    let p: f64 = var.iter().sum();
    Ok(GpdBlock { g, p, d: g + p })
}

/// Dawid-Sebastiani score from replicate moments; larger is better.
pub fn grs(replicates: &DrawMatrix, y: &[f64]) -> Result<f64, DiagnosticsError> {
    let (mean, var) = replicate_moments(replicates, y)?;
    let mut s = 0.0;
    for (i, (&v, (&m, &obs))) in var.iter().zip(mean.iter().zip(y)).enumerate() {
        if v <= 0.0 {
            return Err(DiagnosticsError::ZeroVariance { location: i });
        }
        s -= v.ln() + (obs - m).powi(2) / v;
    }
    Ok(s)
}

/// Holdout scores of a set of predictive distributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveScores {
    #[serde(rename = "CRPS")]
    pub crps: f64,
    #[serde(rename = "RMSPE")]
    pub rmspe: f64,
    #[serde(rename = "CI Cover")]
    pub coverage: f64,
    #[serde(rename = "CI Width")]
    pub width: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub model: Option<ModelKind>,
    pub dic: Option<DicBlock>,
    pub waic: Option<WaicBlock>,
    pub gpd: Option<GpdBlock>,
    #[serde(rename = "GRS")]
    pub grs: Option<f64>,
    pub scores: Option<PredictiveScores>,
    /// One line per block explaining why it was computed or refused.
    pub applicability: Vec<String>,
}

/// Every applicable criterion for a fitted model.
pub fn diagnose(
    model: &FittedModel,
    sub: &SubSample,
    n_conjugate_draws: usize,
    seed: u64,
) -> Result<DiagnosticsReport, DiagnosticsError> {
    let mut report = DiagnosticsReport { model: Some(model.kind()), ..Default::default() };
    match dic(model, sub) {
        Ok(b) => {
            report.dic = Some(b);
            report.applicability.push("DIC: computed".into());
        }
        Err(e @ DiagnosticsError::NotApplicable { .. }) => report.applicability.push(format!("DIC: refused: {e}")),
        Err(e) => return Err(e),
    }
    match waic(model, sub) {
        Ok(b) => {
            report.waic = Some(b);
            report.applicability.push("WAIC: computed".into());
        }
        Err(e @ DiagnosticsError::NotApplicable { .. }) => report.applicability.push(format!("WAIC: refused: {e}")),
        Err(e) => return Err(e),
    }
    let reps = replicate_data(model, sub, n_conjugate_draws, seed)?;
    let y = &model.data().y;
    report.gpd = Some(gpd(&reps, y)?);
    report.applicability.push("GPD: computed".into());
    match grs(&reps, y) {
        Ok(v) => {
            report.grs = Some(v);
            report.applicability.push("GRS: computed".into());
        }
        Err(e) => report.applicability.push(format!("GRS: refused: {e}")),
    }
    Ok(report)
}

fn fmt_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.2}")
    } else {
        v.to_string()
    }
}

impl DiagnosticsReport {
    /// Labelled rows in display order; refused blocks are omitted.
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        let mut rows = Vec::new();
        if let Some(w) = &self.waic {
            rows.extend([("WAIC.1", w.waic1), ("WAIC.2", w.waic2), ("P.1", w.p1), ("P.2", w.p2), ("LPPD", w.lppd)]);
        }
        if let Some(d) = &self.dic {
            rows.extend([("DIC", d.dic), ("pD", d.p_d)]);
        }
        if let Some(g) = &self.gpd {
            rows.extend([("G", g.g), ("P", g.p), ("D", g.d)]);
        }
        if let Some(v) = self.grs {
            rows.push(("GRS", v));
        }
        if let Some(s) = &self.scores {
            rows.extend([("CRPS", s.crps), ("RMSPE", s.rmspe), ("CI Cover", s.coverage), ("CI Width", s.width)]);
        }
        rows
    }

    /// Aligned two-column text table.
    pub fn to_table(&self) -> String {
        let rows = self.rows();
        let values: Vec<String> = rows.iter().map(|(_, v)| fmt_value(*v)).collect();
        let width = values.iter().map(|s| s.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        if let Some(m) = self.model {
            out.push_str(&format!("{:<10}{:>width$}\n", "", m.name()));
        }
        for ((label, _), v) in rows.iter().zip(&values) {
            out.push_str(&format!("{label:<10}{v:>width$}\n"));
        }
        for note in self.applicability.iter().filter(|n| n.contains("refused")) {
            out.push_str(&format!("# {note}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waic_identities_and_single_draw() {
        let mut ll = DrawMatrix::with_cols(3);
        ll.push(&[-1.0, -2.0, -0.5]);
        let w = waic_from_loglik(&ll);
        assert_eq!(w.p2, 0.0);
        assert!(w.p1.abs() < 1e-15);
        assert!((w.waic2 + 2.0 * w.lppd).abs() < 1e-15);
        ll.push(&[-1.5, -1.0, -0.7]);
        let w = waic_from_loglik(&ll);
        assert_eq!(w.waic1, -2.0 * (w.lppd - w.p1));
        assert_eq!(w.waic2, -2.0 * (w.lppd - w.p2));
    }

    #[test]
    fn gpd_of_exact_replicates_is_zero() {
        let mut r = DrawMatrix::with_cols(2);
        r.push(&[1.0, 2.0]);
        r.push(&[1.0, 2.0]);
        let g = gpd(&r, &[1.0, 2.0]).unwrap();
        assert_eq!((g.g, g.p, g.d), (0.0, 0.0, 0.0));
        assert!(matches!(grs(&r, &[1.0, 2.0]), Err(DiagnosticsError::ZeroVariance { location: 0 })));
    }

    #[test]
    fn grs_prefers_centered_replicates() {
        let mut r = DrawMatrix::with_cols(2);
        for k in 0..50 {
            let e = (k as f64 - 24.5) / 14.4;
            r.push(&[e, 3.0 + e]);
        }
        let base = grs(&r, &[0.0, 3.0]).unwrap();
        let mut shifted = r.clone();
        shifted.data.iter_mut().for_each(|v| *v += 0.5);
        assert!(grs(&shifted, &[0.0, 3.0]).unwrap() < base);
    }

    #[test]
    fn binomial_loglik_is_normalized() {
        let total: f64 = (0..=5).map(|y| log_lik(ModelKind::Binomial, y as f64, 5, 0.3, 0.0).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
