//! Normal-inverse-gamma inference for the conjugate NNGP model at fixed
//! `(phi, alpha[, nu])`, and cross-validated grid search over those values.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariance::{CovFamily, CovarianceSpec};
use crate::data::{DataError, OrderedData, SpatialDataset};
use crate::diagnostics::crps_t;
use crate::factors::{compute_factors, solve_kriging_row, FactorError, Kernel, KernelKind, NngpFactors};
use crate::geo::{
    build_neighbor_graph, order_locations, GraphError, NeighborGraph, OrderStrategy, ReferenceIndex, SearchKind,
};
use crate::linalg::{dot, Cholesky};
use crate::samplers::{draw_inverse_gamma, standard_normal, BetaPrior, InverseGamma, SamplerError};
use crate::samples::{Acceptance, DrawMatrix, PosteriorSamples};

#[derive(Debug, Error)]
pub enum ConjugateError {
    #[error("design has p = {p} columns but only n = {n} observations")]
    RankDeficient { p: usize, n: usize },
    #[error("X^T M~^{{-1}} X is singular (pivot {pivot})")]
    Singular { pivot: usize },
    #[error("invalid fixed parameters: {0}")]
    InvalidFixed(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("k_fold = {k} is invalid for n = {n}")]
    InvalidFolds { k: usize, n: usize },
    #[error("fold {fold} leaves no training data")]
    EmptyTraining { fold: usize },
    #[error("neighbor graph covers {graph} locations but the data has {data}")]
    GraphMismatch { graph: usize, data: usize },
    #[error("prediction design has {got} columns, expected {expected}")]
    DesignShape { expected: usize, got: usize },
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Prior(#[from] SamplerError),
}

/// Fixed covariance parameters of the conjugate model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConjugateFixed {
    pub phi: f64,
    pub alpha: f64,
    pub nu: Option<f64>,
}

impl ConjugateFixed {
    pub fn new(phi: f64, alpha: f64) -> Self {
        Self { phi, alpha, nu: None }
    }

    pub fn kernel(&self, family: CovFamily) -> Kernel<f64> {
        let spec = CovarianceSpec::from_alpha(family, self.phi, self.alpha).with_nu(self.nu.unwrap_or(0.5));
        Kernel::new(&spec, KernelKind::Conjugate)
    }

    fn validate(&self, family: CovFamily) -> Result<(), ConjugateError> {
        let ok = self.phi > 0.0
            && self.phi.is_finite()
            && self.alpha >= 0.0
            && self.alpha.is_finite()
            && (!family.uses_nu() || self.nu.is_some_and(|v| v > 0.0 && v.is_finite()));
        if ok {
            Ok(())
        } else {
            Err(ConjugateError::InvalidFixed(format!("{self:?}")))
        }
    }
}

/// Posterior `sigma^2 ~ IG(a*, b*)`, `beta | sigma^2 ~ N(beta_mean, sigma^2 P^{-1})`.
#[derive(Debug, Clone)]
pub struct ConjugatePosterior {
    pub family: CovFamily,
    pub fixed: ConjugateFixed,
    pub beta_mean: Vec<f64>,
    /// Row-major `P = X^T M~^{-1} X (+ V^{-1})`.
    pub precision: Vec<f64>,
    pub ig_shape: f64,
    pub ig_scale: f64,
    pub n: usize,
    pub p: usize,
    chol: Cholesky<f64>,
}

impl ConjugatePosterior {
    /// Cholesky factor of the beta precision.
    pub fn precision_factor(&self) -> &Cholesky<f64> {
        &self.chol
    }

    /// `E[sigma^2 | y]`, infinite when `a* <= 1`.
    pub fn sigma_sq_mean(&self) -> f64 {
        if self.ig_shape > 1.0 {
            self.ig_scale / (self.ig_shape - 1.0)
        } else {
            f64::INFINITY
        }
    }

    /// `x^T P^{-1} x`.
    pub fn beta_form(&self, x: &[f64]) -> f64 {
        let s = self.chol.solve(x);
        dot(x, &s)
    }
}

/// Exact conjugate posterior with all `M~^{-1}` products taken through the NNGP factors.
pub fn fit_conjugate(
    data: &SpatialDataset,
    graph: &NeighborGraph,
    family: CovFamily,
    fixed: ConjugateFixed,
    beta_prior: &BetaPrior,
    sigma_ig: InverseGamma,
) -> Result<ConjugatePosterior, ConjugateError> {
    if graph.len() != data.len() {
        return Err(ConjugateError::GraphMismatch { graph: graph.len(), data: data.len() });
    }
    let od = OrderedData::new(data, graph.ordering());
    fit_conjugate_ordered(&od, graph, family, fixed, beta_prior, sigma_ig)
}

pub(crate) fn fit_conjugate_ordered(
    od: &OrderedData,
    graph: &NeighborGraph,
    family: CovFamily,
    fixed: ConjugateFixed,
    beta_prior: &BetaPrior,
    sigma_ig: InverseGamma,
) -> Result<ConjugatePosterior, ConjugateError> {
    fixed.validate(family)?;
    if !(sigma_ig.shape > 0.0 && sigma_ig.scale > 0.0) {
        return Err(ConjugateError::InvalidFixed("sigma.sq IG hyperparameters must be positive".into()));
    }
    let (n, p) = (od.len(), od.p);
    let prior = beta_prior.precision(p)?;
    if prior.is_none() && p >= n {
        return Err(ConjugateError::RankDeficient { p, n });
    }
    let fac = compute_factors(graph, &od.coords, &fixed.kernel(family))?;
    posterior_from_factors(od, &fac, family, fixed, prior.as_ref(), sigma_ig)
}

fn posterior_from_factors(
    od: &OrderedData,
    fac: &NngpFactors<f64>,
    family: CovFamily,
    fixed: ConjugateFixed,
    prior: Option<&(Vec<f64>, Vec<f64>)>,
    sigma_ig: InverseGamma,
) -> Result<ConjugatePosterior, ConjugateError> {
    let (n, p) = (od.len(), od.p);
    let xt: Vec<Vec<f64>> =
        (0..p).map(|k| fac.whiten(&(0..n).map(|i| od.x[i * p + k]).collect::<Vec<_>>())).collect::<Result<_, _>>()?;
    let yt = fac.whiten(&od.y)?;
    let mut prec = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for a in 0..p {
        rhs[a] = dot(&xt[a], &yt);
        for b in 0..=a {
            let v = dot(&xt[a], &xt[b]);
            prec[a * p + b] = v;
            prec[b * p + a] = v;
        }
    }
    let mut scale = dot(&yt, &yt);
    if let Some((vinv, vinv_mu)) = prior {
        prec.iter_mut().zip(vinv).for_each(|(a, b)| *a += b);
        rhs.iter_mut().zip(vinv_mu).for_each(|(a, b)| *a += b);
        // mu^T V^{-1} mu with V^{-1} mu already formed
        let mu = Cholesky::new(vinv.clone(), p).expect("prior precision is SPD").solve(vinv_mu);
        scale += dot(&mu, vinv_mu);
    }
    let chol = Cholesky::new(prec.clone(), p).map_err(|pivot| ConjugateError::Singular { pivot })?;
    let beta_mean = chol.solve(&rhs);
    scale -= dot(&beta_mean, &rhs);
    Ok(ConjugatePosterior {
        family,
        fixed,
        beta_mean,
        precision: prec,
        ig_shape: sigma_ig.shape + 0.5 * n as f64,
        ig_scale: sigma_ig.scale + 0.5 * scale.max(0.0),
        n,
        p,
        chol,
    })
}

/// Exact composition draws of `(beta, sigma^2)`; `tau.sq` is reported as `alpha sigma^2`.
pub fn sample_conjugate_posterior<R: Rng + ?Sized>(
    post: &ConjugatePosterior,
    n_samples: usize,
    beta_names: Vec<String>,
    rng: &mut R,
) -> PosteriorSamples {
    let p = post.p;
    let mut beta = DrawMatrix::with_cols(p);
    let mut theta = DrawMatrix::with_cols(2);
    for _ in 0..n_samples {
        let sigma_sq = draw_inverse_gamma(rng, post.ig_shape, post.ig_scale);
        let z: Vec<f64> = (0..p).map(|_| standard_normal(rng)).collect();
        let dev = post.chol.upper_inv_mul(&z);
        let b: Vec<f64> = post.beta_mean.iter().zip(&dev).map(|(m, d)| m + sigma_sq.sqrt() * d).collect();
        beta.push(&b);
        theta.push(&[sigma_sq, post.fixed.alpha * sigma_sq]);
    }
    PosteriorSamples {
        beta_names,
        beta,
        theta_names: vec!["sigma.sq".into(), "tau.sq".into()],
        theta,
        w: None,
        omega: None,
        acceptance: Acceptance::default(),
    }
}

/// Location-scale Student t predictive distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TPredictive {
    pub location: f64,
    pub scale: f64,
    pub df: f64,
}

impl TPredictive {
    pub fn quantile(&self, q: f64) -> f64 {
        use statrs::distribution::{ContinuousCDF, StudentsT};
        let t = StudentsT::new(0.0, 1.0, self.df).expect("positive df");
        self.location + self.scale * t.inverse_cdf(q)
    }

    pub fn variance(&self) -> f64 {
        if self.df > 2.0 {
            self.scale * self.scale * self.df / (self.df - 2.0)
        } else {
            f64::INFINITY
        }
    }
}

/// Conjugate posterior together with the training data needed for prediction.
#[derive(Debug, Clone)]
pub struct ConjugateModel {
    pub posterior: ConjugatePosterior,
    pub data: OrderedData,
    pub m: usize,
    reference: ReferenceIndex<f64>,
}

impl ConjugateModel {
    pub fn new(posterior: ConjugatePosterior, data: OrderedData, m: usize) -> Self {
        let reference = ReferenceIndex::new(&data.coords);
        Self { posterior, data, m, reference }
    }

    /// Predictive t at a new site with covariates `x0`.
    pub fn predict(&self, x0: &[f64], s0: [f64; 2]) -> Result<TPredictive, ConjugateError> {
        let post = &self.posterior;
        if x0.len() != post.p {
            return Err(ConjugateError::DesignShape { expected: post.p, got: x0.len() });
        }
        let kernel = post.fixed.kernel(post.family);
        let nb = self.reference.nearest(s0, self.m).indices;
        let pts: Vec<[f64; 2]> = nb.iter().map(|&j| self.data.coords.point(j)).collect();
        let mut b = vec![0.0; nb.len()];
        let mut work = Vec::new();
        let f0 =
            solve_kriging_row(&kernel, s0, &pts, &mut b, &mut work).ok_or(FactorError::Singular { row: usize::MAX })?;
        let mut u = x0.to_vec();
        let mut loc = 0.0;
        for (k, &j) in nb.iter().enumerate() {
            let row = self.data.row(j);
            for a in 0..post.p {
                u[a] -= b[k] * row[a];
            }
            loc += b[k] * self.data.y[j];
        }
        loc += dot(&u, &post.beta_mean);
        let scale_sq = post.ig_scale / post.ig_shape * (f0 + post.beta_form(&u));
        Ok(TPredictive { location: loc, scale: scale_sq.sqrt(), df: 2.0 * post.ig_shape })
    }
}

/// One candidate `(alpha, phi[, nu])`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub alpha: f64,
    pub phi: f64,
    pub nu: Option<f64>,
}

impl GridRow {
    pub fn fixed(&self) -> ConjugateFixed {
        ConjugateFixed { phi: self.phi, alpha: self.alpha, nu: self.nu }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreRule {
    #[default]
    Rmspe,
    Crps,
}

impl std::str::FromStr for ScoreRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rmspe" => Ok(ScoreRule::Rmspe),
            "crps" => Ok(ScoreRule::Crps),
            other => Err(format!("unknown score rule {other:?} (expected rmspe or crps)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CvConfig {
    pub k_fold: usize,
    pub score_rule: ScoreRule,
    pub n_neighbors: usize,
    pub ordering: OrderStrategy,
    pub search: SearchKind,
    pub seed: u64,
}

/// Grid with per-row mean holdout scores over the folds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchGrid {
    pub rows: Vec<GridRow>,
    pub k_fold: usize,
    pub score_rule: ScoreRule,
    pub rmspe: Vec<f64>,
    pub crps: Vec<f64>,
    pub best: usize,
}

impl SearchGrid {
    pub fn best_row(&self) -> GridRow {
        self.rows[self.best]
    }
}

/// Random partition of `0..n` into `k` near-equal folds.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..k).map(|f| perm[f * n / k..(f + 1) * n / k].to_vec()).collect()
}

struct FoldSetup {
    train: OrderedData,
    graph: NeighborGraph,
    reference: ReferenceIndex<f64>,
    test: SpatialDataset,
}

/// K-fold cross-validation over `grid`, then a refit on all data at the best row.
pub fn grid_search_cv(
    data: &SpatialDataset,
    family: CovFamily,
    grid: &[GridRow],
    beta_prior: &BetaPrior,
    sigma_ig: InverseGamma,
    cfg: &CvConfig,
) -> Result<(SearchGrid, ConjugateModel), ConjugateError> {
    let n = data.len();
    if grid.is_empty() {
        return Err(ConjugateError::InvalidGrid("grid has no rows".into()));
    }
    for row in grid {
        if !(row.alpha >= 0.0 && row.phi > 0.0) {
            return Err(ConjugateError::InvalidGrid(format!("row {row:?} needs alpha >= 0 and phi > 0")));
        }
        row.fixed().validate(family)?;
    }
    if cfg.k_fold < 2 || cfg.k_fold > n {
        return Err(ConjugateError::InvalidFolds { k: cfg.k_fold, n });
    }
    let folds = assign_folds(n, cfg.k_fold, cfg.seed);
    let setups: Vec<FoldSetup> = folds
        .par_iter()
        .enumerate()
        .map(|(f, hold)| {
            let mut in_test = vec![false; n];
            hold.iter().for_each(|&i| in_test[i] = true);
            let train_idx: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
            if train_idx.is_empty() {
                return Err(ConjugateError::EmptyTraining { fold: f });
            }
            let train = data.subset(&train_idx)?;
            let test = data.subset(hold)?;
            let ord = order_locations(&train.coords, &cfg.ordering)?;
            let graph = build_neighbor_graph(&train.coords, &ord, cfg.n_neighbors, cfg.search)?;
            let od = OrderedData::new(&train, graph.ordering());
            let reference = ReferenceIndex::new(&od.coords);
            Ok(FoldSetup { train: od, graph, reference, test })
        })
        .collect::<Result<_, _>>()?;

    let prior = beta_prior.precision(data.p)?;
    let tasks: Vec<(usize, usize)> = (0..grid.len()).flat_map(|r| (0..folds.len()).map(move |f| (r, f))).collect();
    let scores: Vec<(f64, f64)> = tasks
        .par_iter()
        .map(|&(r, f)| {
            let s = &setups[f];
            let fixed = grid[r].fixed();
            let (tn, tp) = (s.train.len(), s.train.p);
            if prior.is_none() && tp >= tn {
                return Err(ConjugateError::RankDeficient { p: tp, n: tn });
            }
            let fac = compute_factors(&s.graph, &s.train.coords, &fixed.kernel(family))?;
            let post = posterior_from_factors(&s.train, &fac, family, fixed, prior.as_ref(), sigma_ig)?;
            let model = ConjugateModel {
                posterior: post,
                data: s.train.clone(),
                m: cfg.n_neighbors,
                reference: s.reference.clone(),
            };
            let mut sq = 0.0;
            let mut crps = 0.0;
            for i in 0..s.test.len() {
                let t = model.predict(s.test.row(i), s.test.coords.point(i))?;
                let y = s.test.y[i];
                sq += (t.location - y).powi(2);
                crps += crps_t(t.location, t.scale, t.df, y);
            }
            let k = s.test.len().max(1) as f64;
            Ok(((sq / k).sqrt(), crps / k))
        })
        .collect::<Result<_, _>>()?;

    let kf = folds.len() as f64;
    let mut rmspe = vec![0.0; grid.len()];
    let mut crps = vec![0.0; grid.len()];
    for (&(r, _), &(a, b)) in tasks.iter().zip(&scores) {
        rmspe[r] += a / kf;
        crps[r] += b / kf;
    }
    let rule = match cfg.score_rule {
        ScoreRule::Rmspe => &rmspe,
        ScoreRule::Crps => &crps,
    };
    let best = (0..grid.len()).fold(0, |b, r| if rule[r] < rule[b] { r } else { b });

    let ord = order_locations(&data.coords, &cfg.ordering)?;
    let graph = build_neighbor_graph(&data.coords, &ord, cfg.n_neighbors, cfg.search)?;
    let od = OrderedData::new(data, graph.ordering());
    let post = fit_conjugate_ordered(&od, &graph, family, grid[best].fixed(), beta_prior, sigma_ig)?;
    let grid_out =
        SearchGrid { rows: grid.to_vec(), k_fold: cfg.k_fold, score_rule: cfg.score_rule, rmspe, crps, best };
    Ok((grid_out, ConjugateModel::new(post, od, cfg.n_neighbors)))
}
