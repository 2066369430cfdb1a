//! Fitted values, replicated data and prediction at new locations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conjugate::{sample_conjugate_posterior, ConjugateError, ConjugateModel, TPredictive};
use crate::covariance::{CovFamily, CovarianceSpec};
use crate::data::{OrderedData, SpatialDataset};
use crate::factors::{compute_factors, solve_kriging_row, FactorError, Kernel, KernelKind};
use crate::geo::{Coordinates, NeighborGraph, Ordering, ReferenceIndex};
use crate::linalg::dot;
use crate::samplers::binomial::inv_logit;
use crate::samplers::standard_normal;
use crate::samples::{DrawMatrix, PosteriorSamples, SubSample, SubSampleError};

#[derive(Debug, Error)]
pub enum PosteriorError {
    #[error(transparent)]
    SubSample(#[from] SubSampleError),
    #[error("prediction design has {got} columns, expected {expected}")]
    DesignShape { expected: usize, got: usize },
    #[error("{0} prediction rows but {1} coordinates")]
    Length(usize, usize),
    #[error("the {0} model stores no latent draws; refit with store_w enabled")]
    MissingLatent(&'static str),
    #[error("model has no neighbor graph")]
    MissingGraph,
    #[error("the {0} model does not support {1}")]
    Unsupported(&'static str, &'static str),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Conjugate(#[from] ConjugateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Latent,
    Response,
    Conjugate,
    Binomial,
    Logit,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Latent => "latent",
            ModelKind::Response => "response",
            ModelKind::Conjugate => "conjugate",
            ModelKind::Binomial => "binomial",
            ModelKind::Logit => "logit",
        }
    }

    /// Whether observations are conditionally independent given the stored parameters.
    pub fn conditionally_independent(&self) -> bool {
        matches!(self, ModelKind::Latent | ModelKind::Binomial | ModelKind::Logit)
    }

    pub fn is_binomial(&self) -> bool {
        matches!(self, ModelKind::Binomial | ModelKind::Logit)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "latent" => Ok(ModelKind::Latent),
            "response" => Ok(ModelKind::Response),
            "conjugate" => Ok(ModelKind::Conjugate),
            "binomial" => Ok(ModelKind::Binomial),
            "logit" => Ok(ModelKind::Logit),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// An MCMC fit with the data it was fitted to.
#[derive(Debug, Clone)]
pub struct McmcModel {
    pub kind: ModelKind,
    pub family: CovFamily,
    pub data: SpatialDataset,
    /// Absent for the non-spatial logit model.
    pub graph: Option<NeighborGraph>,
    pub samples: PosteriorSamples,
}

/// A conjugate fit with its training graph.
#[derive(Debug, Clone)]
pub struct ConjugateFit {
    pub model: ConjugateModel,
    pub graph: NeighborGraph,
    pub data: SpatialDataset,
    pub beta_names: Vec<String>,
}

#[derive(Debug, Clone)]
pub enum FittedModel {
    Mcmc(McmcModel),
    Conjugate(ConjugateFit),
}

impl FittedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            FittedModel::Mcmc(m) => m.kind,
            FittedModel::Conjugate(_) => ModelKind::Conjugate,
        }
    }

    pub fn data(&self) -> &SpatialDataset {
        match self {
            FittedModel::Mcmc(m) => &m.data,
            FittedModel::Conjugate(c) => &c.data,
        }
    }
}

/// Random stream `stream` of the generator seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-location summaries: draws (rows = posterior draws) or closed-form t parameters.
#[derive(Debug, Clone)]
pub struct LocationSummary {
    pub draws: Option<DrawMatrix>,
    pub t: Option<Vec<TPredictive>>,
    /// 2.5%, 50%, 97.5% per location.
    pub quantiles: Vec<[f64; 3]>,
    pub mean: Vec<f64>,
}

impl LocationSummary {
    fn from_draws(draws: DrawMatrix) -> Self {
        let quantiles = draws.column_quantiles();
        let mean = draws.column_means();
        Self { draws: Some(draws), t: None, quantiles, mean }
    }

    fn from_t(t: Vec<TPredictive>) -> Self {
        let quantiles = t.iter().map(|d| [d.quantile(0.025), d.quantile(0.5), d.quantile(0.975)]).collect();
        let mean = t.iter().map(|d| d.location).collect();
        Self { draws: None, t: Some(t), quantiles, mean }
    }

    /// Per-location predictive variance.
    pub fn variance(&self) -> Vec<f64> {
        if let Some(t) = &self.t {
            return t.iter().map(|d| d.variance()).collect();
        }
        let d = self.draws.as_ref().expect("draws or t present");
        let means = d.column_means();
        let k = d.rows as f64;
        (0..d.cols)
            .map(|c| (0..d.rows).map(|r| (d.get(r, c) - means[c]).powi(2)).sum::<f64>() / (k - 1.0).max(1.0))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct FittedValues {
    pub values: LocationSummary,
    /// Success probabilities for binomial models.
    pub probability: Option<LocationSummary>,
}

fn linear_predictor(data: &SpatialDataset, beta: &[f64], i: usize) -> f64 {
    dot(data.row(i), beta)
}

/// Fitted values `x_i^T beta (+ w_i)` per selected draw; closed-form t for the conjugate model.
pub fn fitted_values(model: &FittedModel, sub: &SubSample) -> Result<FittedValues, PosteriorError> {
    match model {
        FittedModel::Conjugate(c) => {
            let post = &c.model.posterior;
            let t = (0..c.data.len())
                .map(|i| {
                    let x = c.data.row(i);
                    TPredictive {
                        location: dot(x, &post.beta_mean),
                        scale: (post.ig_scale / post.ig_shape * post.beta_form(x)).sqrt(),
                        df: 2.0 * post.ig_shape,
                    }
                })
                .collect();
            Ok(FittedValues { values: LocationSummary::from_t(t), probability: None })
        }
        FittedModel::Mcmc(m) => {
            let idx = sub.indices(m.samples.n_samples())?;
            let n = m.data.len();
            let w = match m.kind {
                ModelKind::Latent | ModelKind::Binomial => {
                    Some(m.samples.w.as_ref().ok_or(PosteriorError::MissingLatent(m.kind.name()))?)
                }
                _ => None,
            };
            let mut draws = DrawMatrix::with_cols(n);
            for &l in &idx {
                let beta = m.samples.beta.row(l);
                let row: Vec<f64> =
                    (0..n).map(|i| linear_predictor(&m.data, beta, i) + w.map_or(0.0, |w| w.get(l, i))).collect();
                draws.push(&row);
            }
            let probability = m.kind.is_binomial().then(|| {
                let mut p = draws.clone();
                p.data.iter_mut().for_each(|v| *v = inv_logit(*v));
                LocationSummary::from_draws(p)
            });
            Ok(FittedValues { values: LocationSummary::from_draws(draws), probability })
        }
    }
}

/// Posterior predictive replicates at the observed locations (rows = draws, original order).
///
/// Latent and binomial replicates are conditionally independent given `w`;
/// response and conjugate replicates are joint NNGP draws.
pub fn replicate_data(
    model: &FittedModel,
    sub: &SubSample,
    n_conjugate_draws: usize,
    seed: u64,
) -> Result<DrawMatrix, PosteriorError> {
    match model {
        FittedModel::Conjugate(c) => {
            let post = &c.model.posterior;
            let mut rng = stream_rng(seed, u64::MAX);
            let samples = sample_conjugate_posterior(post, n_conjugate_draws, c.beta_names.clone(), &mut rng);
            let fac = compute_factors(&c.graph, &c.model.data.coords, &post.fixed.kernel(post.family))?;
            let od = &c.model.data;
            let ord = c.graph.ordering();
            let rows: Vec<Vec<f64>> = (0..n_conjugate_draws)
                .into_par_iter()
                .map(|l| {
                    let mut rng = stream_rng(seed, l as u64);
                    let beta = samples.beta.row(l);
                    let sd = samples.theta.get(l, 0).sqrt();
                    let z = fac.sample_joint(&mut rng);
                    let ordered: Vec<f64> = (0..od.len()).map(|i| dot(od.row(i), beta) + sd * z[i]).collect();
                    ord.to_original(&ordered)
                })
                .collect();
            Ok(stack(rows, od.len()))
        }
        FittedModel::Mcmc(m) => {
            let idx = sub.indices(m.samples.n_samples())?;
            let n = m.data.len();
            let rows: Result<Vec<Vec<f64>>, PosteriorError> = idx
                .par_iter()
                .map(|&l| {
                    let mut rng = stream_rng(seed, l as u64);
                    replicate_one(m, l, &mut rng)
                })
                .collect();
            Ok(stack(rows?, n))
        }
    }
}

fn stack(rows: Vec<Vec<f64>>, cols: usize) -> DrawMatrix {
    let mut out = DrawMatrix::with_cols(cols);
    rows.iter().for_each(|r| out.push(r));
    out
}

fn theta_spec(m: &McmcModel, l: usize) -> CovarianceSpec<f64> {
    let s = &m.samples;
    let get = |name: &str, default: f64| s.theta_index(name).map_or(default, |c| s.theta.get(l, c));
    CovarianceSpec {
        family: m.family,
        sigma_sq: get("sigma.sq", 0.0),
        tau_sq: get("tau.sq", 0.0),
        phi: get("phi", 1.0),
        nu: get("nu", 0.5),
    }
}

fn trials(data: &SpatialDataset, i: usize) -> u32 {
    data.trials.as_ref().map_or(1, |t| t[i])
}

fn binomial_draw<R: Rng + ?Sized>(n: u32, eta: f64, rng: &mut R) -> f64 {
    Binomial::new(n as u64, inv_logit(eta)).expect("probability in [0, 1]").sample(rng) as f64
}

fn replicate_one<R: Rng + ?Sized>(m: &McmcModel, l: usize, rng: &mut R) -> Result<Vec<f64>, PosteriorError> {
    let n = m.data.len();
    let beta = m.samples.beta.row(l);
    match m.kind {
        ModelKind::Latent => {
            let w = m.samples.w.as_ref().ok_or(PosteriorError::MissingLatent("latent"))?;
            let tau = theta_spec(m, l).tau_sq.sqrt();
            Ok((0..n).map(|i| linear_predictor(&m.data, beta, i) + w.get(l, i) + tau * standard_normal(rng)).collect())
        }
        ModelKind::Binomial => {
            let w = m.samples.w.as_ref().ok_or(PosteriorError::MissingLatent("binomial"))?;
            Ok((0..n)
                .map(|i| binomial_draw(trials(&m.data, i), linear_predictor(&m.data, beta, i) + w.get(l, i), rng))
                .collect())
        }
        ModelKind::Logit => {
            Ok((0..n).map(|i| binomial_draw(trials(&m.data, i), linear_predictor(&m.data, beta, i), rng)).collect())
        }
        ModelKind::Response => {
            let graph = m.graph.as_ref().ok_or(PosteriorError::MissingGraph)?;
            let od = OrderedData::new(&m.data, graph.ordering());
            let fac = compute_factors(graph, &od.coords, &Kernel::new(&theta_spec(m, l), KernelKind::Response))?;
            let z = fac.sample_joint(rng);
            let ordered: Vec<f64> = (0..n).map(|i| dot(od.row(i), beta) + z[i]).collect();
            Ok(graph.ordering().to_original(&ordered))
        }
        ModelKind::Conjugate => Err(PosteriorError::Unsupported("conjugate", "draw-wise replicates")),
    }
}

/// New locations with covariates (row-major `n0 x p`) and optional binomial trials.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    pub coords: Coordinates<f64>,
    pub x: Vec<f64>,
    pub p: usize,
    pub trials: Option<Vec<u32>>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn from_dataset(d: &SpatialDataset) -> Self {
        Self { coords: d.coords.clone(), x: d.x.clone(), p: d.p, trials: d.trials.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct PredictiveOutput {
    pub y: LocationSummary,
    /// Latent process at the new locations (latent and binomial models).
    pub w: Option<LocationSummary>,
}

/// Posterior predictive distribution at new locations. Locations are
/// independent given the draws; location `i` uses random stream `i` of `seed`.
pub fn predict(
    model: &FittedModel,
    new: &PredictionSet,
    sub: &SubSample,
    seed: u64,
) -> Result<PredictiveOutput, PosteriorError> {
    let expected = model.data().p;
    if new.p != expected {
        return Err(PosteriorError::DesignShape { expected, got: new.p });
    }
    if new.x.len() != new.len() * new.p {
        return Err(PosteriorError::Length(new.x.len() / new.p.max(1), new.len()));
    }
    match model {
        FittedModel::Conjugate(c) => {
            let t: Vec<TPredictive> = (0..new.len())
                .into_par_iter()
                .map(|i| c.model.predict(new.row(i), new.coords.point(i)))
                .collect::<Result<_, _>>()?;
            Ok(PredictiveOutput { y: LocationSummary::from_t(t), w: None })
        }
        FittedModel::Mcmc(m) => predict_mcmc(m, new, sub, seed),
    }
}

struct Reference {
    data: OrderedData,
    ordering: Ordering,
    index: ReferenceIndex<f64>,
    m: usize,
}

fn predict_mcmc(
    m: &McmcModel,
    new: &PredictionSet,
    sub: &SubSample,
    seed: u64,
) -> Result<PredictiveOutput, PosteriorError> {
    let idx = sub.indices(m.samples.n_samples())?;
    let reference = match &m.graph {
        Some(g) => {
            let od = OrderedData::new(&m.data, g.ordering());
            let index = ReferenceIndex::new(&od.coords);
            Some(Reference { data: od, ordering: g.ordering().clone(), index, m: g.m() })
        }
        None => None,
    };
    let spatial = matches!(m.kind, ModelKind::Latent | ModelKind::Binomial | ModelKind::Response);
    if spatial && reference.is_none() {
        return Err(PosteriorError::MissingGraph);
    }
    if matches!(m.kind, ModelKind::Latent | ModelKind::Binomial) && m.samples.w.is_none() {
        return Err(PosteriorError::MissingLatent(m.kind.name()));
    }
    let columns: Vec<(Vec<f64>, Option<Vec<f64>>)> = (0..new.len())
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            predict_location(m, reference.as_ref(), new, i, &idx, &mut rng)
        })
        .collect::<Result<_, _>>()?;
    let k = idx.len();
    let n0 = new.len();
    let mut y = DrawMatrix::zeros(k, n0);
    let mut w = columns[0].1.as_ref().map(|_| DrawMatrix::zeros(k, n0));
    for (i, (yc, wc)) in columns.iter().enumerate() {
        for r in 0..k {
            y.row_mut(r)[i] = yc[r];
            if let (Some(wm), Some(wc)) = (w.as_mut(), wc) {
                wm.row_mut(r)[i] = wc[r];
            }
        }
    }
    Ok(PredictiveOutput { y: LocationSummary::from_draws(y), w: w.map(LocationSummary::from_draws) })
}

#[allow(clippy::type_complexity)]
fn predict_location<R: Rng + ?Sized>(
    m: &McmcModel,
    reference: Option<&Reference>,
    new: &PredictionSet,
    i: usize,
    idx: &[usize],
    rng: &mut R,
) -> Result<(Vec<f64>, Option<Vec<f64>>), PosteriorError> {
    let x0 = new.row(i);
    let s0 = new.coords.point(i);
    let n_trials = new.trials.as_ref().map_or(1, |t| t[i]);
    let mut ys = Vec::with_capacity(idx.len());
    if m.kind == ModelKind::Logit {
        for &l in idx {
            ys.push(binomial_draw(n_trials, dot(x0, m.samples.beta.row(l)), rng));
        }
        return Ok((ys, None));
    }
    let r = reference.expect("checked by caller");
    let nb = r.index.nearest(s0, r.m).indices;
    let pts: Vec<[f64; 2]> = nb.iter().map(|&j| r.data.coords.point(j)).collect();
    let original: Vec<usize> = nb.iter().map(|&j| r.ordering.perm()[j]).collect();
    let mut b = vec![0.0; nb.len()];
    let mut work = Vec::new();
    let mut ws = Vec::with_capacity(idx.len());
    for &l in idx {
        let beta = m.samples.beta.row(l);
        let spec = theta_spec(m, l);
        match m.kind {
            ModelKind::Latent | ModelKind::Binomial => {
                let kernel = Kernel::new(&spec, KernelKind::Latent);
                let f0 =
                    solve_kriging_row(&kernel, s0, &pts, &mut b, &mut work).ok_or(FactorError::Singular { row: i })?;
                let w = m.samples.w.as_ref().expect("checked by caller");
                let mean: f64 = original.iter().zip(&b).map(|(&j, bj)| bj * w.get(l, j)).sum();
                let w0 = mean + f0.sqrt() * standard_normal(rng);
                ws.push(w0);
                let eta = dot(x0, beta) + w0;
                ys.push(if m.kind == ModelKind::Latent {
                    eta + spec.tau_sq.sqrt() * standard_normal(rng)
                } else {
                    binomial_draw(n_trials, eta, rng)
                });
            }
            ModelKind::Response => {
                let kernel = Kernel::new(&spec, KernelKind::Response);
                let f0 =
                    solve_kriging_row(&kernel, s0, &pts, &mut b, &mut work).ok_or(FactorError::Singular { row: i })?;
                let mean: f64 = dot(x0, beta)
                    + nb.iter().zip(&b).map(|(&j, bj)| bj * (r.data.y[j] - dot(r.data.row(j), beta))).sum::<f64>();
                ys.push(mean + f0.sqrt() * standard_normal(rng));
            }
            _ => unreachable!("handled above"),
        }
    }
    let w_out = matches!(m.kind, ModelKind::Latent | ModelKind::Binomial).then_some(ws);
    Ok((ys, w_out))
}
