//! MCMC machinery shared by the Gaussian and binomial samplers: priors,
//! run configuration, parameter transforms and the latent-process Gibbs steps.

pub mod binomial;
pub mod gaussian;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariance::CovFamily;
use crate::data::OrderedData;
use crate::factors::{compute_factors, FactorError, Kernel, NngpFactors};
use crate::geo::NeighborGraph;
use crate::linalg::Cholesky;
use crate::samples::Acceptance;

pub use binomial::{fit_binomial_latent, fit_pg_logit, inv_logit, pg_mean, sample_pg, sample_pg1};
pub use gaussian::{fit_latent, fit_response};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid starting value: {0}")]
    InvalidStart(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("value {value} is not strictly inside the support {support}")]
    OutsideSupport { value: f64, support: String },
    #[error("regression system is singular: {0}")]
    Singular(String),
    #[error("neighbor graph covers {graph} locations but the data has {data}")]
    GraphMismatch { graph: usize, data: usize },
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error("thread pool: {0}")]
    Threads(String),
}

/// Prior on the regression coefficients.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaPrior {
    #[default]
    Flat,
    /// Normal with mean and row-major `p x p` covariance.
    Normal { mean: Vec<f64>, cov: Vec<f64> },
}

/// `(V^{-1}, V^{-1} mu)`.
pub(crate) type PriorPrecision = (Vec<f64>, Vec<f64>);

impl BetaPrior {
    /// Prior precision and precision-weighted mean, if proper.
    pub(crate) fn precision(&self, p: usize) -> Result<Option<PriorPrecision>, SamplerError> {
        match self {
            BetaPrior::Flat => Ok(None),
            BetaPrior::Normal { mean, cov } => {
                if mean.len() != p || cov.len() != p * p {
                    return Err(SamplerError::InvalidConfig(format!("beta prior must have dimension {p}")));
                }
                let chol = Cholesky::new(cov.clone(), p).map_err(|_| {
                    SamplerError::InvalidConfig("beta prior covariance is not positive definite".into())
                })?;
                let prec = chol.inverse();
                let pm = chol.solve(mean);
                Ok(Some((prec, pm)))
            }
        }
    }
}

/// `IG(shape, scale)` with density proportional to `x^{-shape-1} exp(-scale/x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InverseGamma {
    pub fn new(shape: f64, scale: f64) -> Self {
        Self { shape, scale }
    }

    /// Log density up to a constant.
    pub fn ln_kernel(&self, x: f64) -> f64 {
        -(self.shape + 1.0) * x.ln() - self.scale / x
    }

    fn validate(&self, name: &str) -> Result<(), SamplerError> {
        if self.shape > 0.0 && self.scale > 0.0 && self.shape.is_finite() && self.scale.is_finite() {
            Ok(())
        } else {
            Err(SamplerError::InvalidConfig(format!("{name} IG hyperparameters must be positive")))
        }
    }
}

/// Uniform prior bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformPrior {
    pub lo: f64,
    pub hi: f64,
}

impl UniformPrior {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn support(&self) -> Support {
        Support::Interval { lo: self.lo, hi: self.hi }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub beta: BetaPrior,
    pub sigma_sq: InverseGamma,
    pub tau_sq: InverseGamma,
    pub phi: UniformPrior,
    pub nu: Option<UniformPrior>,
}

impl PriorSpec {
    pub(crate) fn validate(&self, family: CovFamily, needs_tau: bool) -> Result<(), SamplerError> {
        self.sigma_sq.validate("sigma.sq")?;
        if needs_tau {
            self.tau_sq.validate("tau.sq")?;
        }
        let bounds = |name: &str, u: &UniformPrior| {
            if u.lo >= 0.0 && u.lo < u.hi && u.hi.is_finite() {
                Ok(())
            } else {
                Err(SamplerError::InvalidConfig(format!("{name} Unif bounds must satisfy 0 <= lo < hi")))
            }
        };
        bounds("phi", &self.phi)?;
        if family.uses_nu() {
            match &self.nu {
                Some(u) => bounds("nu", u)?,
                None => return Err(SamplerError::InvalidConfig("matern model requires a nu prior".into())),
            }
        }
        Ok(())
    }
}

/// Initial state of the chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Starting {
    pub phi: f64,
    pub sigma_sq: f64,
    pub tau_sq: f64,
    pub nu: Option<f64>,
    /// Defaults to least squares (zero for binomial models).
    pub beta: Option<Vec<f64>>,
    /// Defaults to zero. Original data order.
    pub w: Option<Vec<f64>>,
}

/// Proposal standard deviations on the transformed (real-line) scale.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Tuning {
    pub phi: f64,
    pub sigma_sq: f64,
    pub tau_sq: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_samples: usize,
    pub starting: Starting,
    pub tuning: Tuning,
    /// Progress interval in samples; 0 disables interval reporting.
    pub n_report: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the ambient pool.
    pub threads: Option<usize>,
    /// Keep per-draw latent effects (and Polya-Gamma variables).
    pub store_w: bool,
    pub verbose: bool,
}

impl McmcConfig {
    pub fn new(n_samples: usize, starting: Starting, tuning: Tuning, seed: u64) -> Self {
        Self { n_samples, starting, tuning, n_report: 0, seed, threads: None, store_w: true, verbose: false }
    }

    pub(crate) fn validate(&self) -> Result<(), SamplerError> {
        if self.n_samples == 0 {
            return Err(SamplerError::InvalidConfig("n_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// Support of an MH-updated parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Support {
    Positive,
    Interval { lo: f64, hi: f64 },
}

impl std::fmt::Display for Support {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Support::Positive => write!(f, "(0, inf)"),
            Support::Interval { lo, hi } => write!(f, "({lo}, {hi})"),
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl Support {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Support::Positive => x > 0.0 && x.is_finite(),
            Support::Interval { lo, hi } => x > lo && x < hi,
        }
    }

    /// Log for `(0, inf)`, scaled logit for `(lo, hi)`.
    pub fn to_real(&self, x: f64) -> Result<f64, SamplerError> {
        if !self.contains(x) {
            return Err(SamplerError::OutsideSupport { value: x, support: self.to_string() });
        }
        Ok(match *self {
            Support::Positive => x.ln(),
            Support::Interval { lo, hi } => ((x - lo) / (hi - x)).ln(),
        })
    }

    pub fn from_real(&self, z: f64) -> f64 {
        match *self {
            Support::Positive => z.exp(),
            Support::Interval { lo, hi } => {
                if z >= 0.0 {
                    lo + (hi - lo) / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    lo + (hi - lo) * e / (1.0 + e)
                }
            }
        }
    }

    /// `log |dx/dz|` at real-line value `z`.
    pub fn log_jacobian(&self, z: f64) -> f64 {
        match *self {
            Support::Positive => z,
            Support::Interval { lo, hi } => (hi - lo).ln() - softplus(z) - softplus(-z),
        }
    }
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub(crate) fn draw_inverse_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> f64 {
    let g = Gamma::new(shape, 1.0 / scale).expect("positive gamma parameters");
    1.0 / g.sample(rng)
}

/// Runs `f` inside a pool with the requested number of threads.
pub(crate) fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, SamplerError> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t.max(1))
                .build()
                .map_err(|e| SamplerError::Threads(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Ordinary least squares coefficients.
pub fn least_squares(data: &OrderedData) -> Result<Vec<f64>, SamplerError> {
    let p = data.p;
    let mut xtx = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    for i in 0..data.len() {
        let r = data.row(i);
        for a in 0..p {
            xty[a] += r[a] * data.y[i];
            for b in 0..p {
                xtx[a * p + b] += r[a] * r[b];
            }
        }
    }
    let chol = Cholesky::new(xtx, p).map_err(|_| SamplerError::Singular("X^T X is not positive definite".into()))?;
    Ok(chol.solve(&xty))
}

/// Draws beta from `N(P^{-1} r, P^{-1})` where
/// `P = sum_i d_i x_i x_i^T + V^{-1}` and `r = sum_i x_i c_i + V^{-1} mu`.
pub(crate) fn draw_beta<R: Rng + ?Sized>(
    data: &OrderedData,
    precision: impl Fn(usize) -> f64,
    weighted_target: impl Fn(usize) -> f64,
    prior: Option<&(Vec<f64>, Vec<f64>)>,
    rng: &mut R,
) -> Result<Vec<f64>, SamplerError> {
    let p = data.p;
    let mut prec = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for i in 0..data.len() {
        let r = data.row(i);
        let d = precision(i);
        let c = weighted_target(i);
        for a in 0..p {
            rhs[a] += r[a] * c;
            for b in 0..=a {
                prec[a * p + b] += d * r[a] * r[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            prec[b * p + a] = prec[a * p + b];
        }
    }
    if let Some((vinv, vinv_mu)) = prior {
        prec.iter_mut().zip(vinv).for_each(|(a, b)| *a += b);
        rhs.iter_mut().zip(vinv_mu).for_each(|(a, b)| *a += b);
    }
    gaussian_from_precision(prec, &rhs, p, rng)
}

/// Draw from `N(P^{-1} r, P^{-1})`.
pub(crate) fn gaussian_from_precision<R: Rng + ?Sized>(
    prec: Vec<f64>,
    rhs: &[f64],
    p: usize,
    rng: &mut R,
) -> Result<Vec<f64>, SamplerError> {
    let chol = Cholesky::new(prec, p)
        .map_err(|k| SamplerError::Singular(format!("beta full-conditional precision fails at pivot {k}")))?;
    let mean = chol.solve(rhs);
    let z: Vec<f64> = (0..p).map(|_| standard_normal(rng)).collect();
    let dev = chol.upper_inv_mul(&z);
    Ok(mean.iter().zip(&dev).map(|(m, d)| m + d).collect())
}

/// One sequential sweep of `w_i | rest` in ordered index.
///
/// The data contribute precision `d_i` and precision-weighted target `c_i`
/// for location `i`; the prior is the NNGP with correlation factors `corr`
/// scaled by `sigma_sq`.
pub(crate) fn sweep_latent<R: Rng + ?Sized>(
    graph: &NeighborGraph,
    corr: &NngpFactors<f64>,
    sigma_sq: f64,
    w: &mut [f64],
    data_precision: impl Fn(usize) -> f64,
    data_target: impl Fn(usize) -> f64,
    rng: &mut R,
) {
    let f = corr.cond_var();
    for i in 0..w.len() {
        let fi = sigma_sq * f[i];
        let mut prec = data_precision(i) + 1.0 / fi;
        let mut num = data_target(i) + corr.conditional_mean(i, w) / fi;
        for (j, slot) in graph.reverse().dependents(i) {
            let bji = corr.weights(j)[slot];
            let fj = sigma_sq * f[j];
            let rest = w[j] - (corr.conditional_mean(j, w) - bji * w[i]);
            prec += bji * bji / fj;
            num += bji * rest / fj;
        }
        let sd = prec.sqrt().recip();
        w[i] = num / prec + sd * standard_normal(rng);
    }
}

/// Covariance-parameter MH block for the latent process `w ~ N(0, sigma^2 R~(phi, nu))`.
pub(crate) struct LatentCorrelation {
    pub family: CovFamily,
    pub phi: f64,
    pub nu: f64,
    pub factors: NngpFactors<f64>,
    /// `-1/2 log det R~` and the quadratic form `w^T R~^{-1} w` at the current state.
    log_det: f64,
}

impl LatentCorrelation {
    pub fn new(
        graph: &NeighborGraph,
        data: &OrderedData,
        family: CovFamily,
        phi: f64,
        nu: f64,
    ) -> Result<Self, SamplerError> {
        let factors = compute_factors(graph, &data.coords, &Kernel::correlation(family, phi, nu))?;
        let log_det = factors.log_determinant();
        Ok(Self { family, phi, nu, factors, log_det })
    }

    pub fn quad(&self, w: &[f64]) -> f64 {
        self.factors.quadratic_form(w, w).expect("length checked at construction")
    }

    fn ln_target(log_det: f64, quad: f64, sigma_sq: f64) -> f64 {
        -0.5 * (log_det + quad / sigma_sq)
    }

    /// Random-walk MH on the transformed `phi`, then `nu` when Matern.
    #[allow(clippy::too_many_arguments)]
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        graph: &NeighborGraph,
        data: &OrderedData,
        w: &[f64],
        sigma_sq: f64,
        priors: &PriorSpec,
        tuning: &Tuning,
        acceptance: &mut Acceptance,
        rng: &mut R,
    ) {
        let current_quad = self.quad(w);
        let mut current = Self::ln_target(self.log_det, current_quad, sigma_sq);
        let mut params = vec![(priors.phi.support(), tuning.phi, false)];
        if self.family.uses_nu() {
            if let Some(nu_prior) = priors.nu {
                params.push((nu_prior.support(), tuning.nu, true));
            }
        }
        for (support, step, is_nu) in params {
            let value = if is_nu { self.nu } else { self.phi };
            let z = support.to_real(value).expect("chain state inside support");
            let z_new = z + step * standard_normal(rng);
            let proposal = support.from_real(z_new);
            let log_u = rng.random::<f64>().ln();
            let mut accepted = false;
            if support.contains(proposal) {
                let (phi, nu) = if is_nu { (self.phi, proposal) } else { (proposal, self.nu) };
                let kernel = Kernel::correlation(self.family, phi, nu);
                if let Ok(fac) = compute_factors(graph, &data.coords, &kernel) {
                    let ld = fac.log_determinant();
                    let q = fac.quadratic_form(w, w).expect("length checked");
                    let cand = Self::ln_target(ld, q, sigma_sq);
                    let ratio = cand + support.log_jacobian(z_new) - current - support.log_jacobian(z);
                    if log_u < ratio {
                        accepted = true;
                        self.phi = phi;
                        self.nu = nu;
                        self.factors = fac;
                        self.log_det = ld;
                        current = cand;
                    }
                }
            }
            acceptance.record(accepted);
        }
    }
}

/// Console progress lines in the familiar spNNGP layout.
pub(crate) fn report_progress(done: usize, total: usize, acceptance: &mut Acceptance, verbose: bool, has_mh: bool) {
    let rate = acceptance.close_interval();
    if verbose {
        eprintln!("Sampled: {done} of {total}, {:.2}%", 100.0 * done as f64 / total as f64);
        if has_mh {
            eprintln!("Report interval Metrop. Acceptance rate: {:.2}%", 100.0 * rate);
            eprintln!("Overall Metrop. Acceptance rate: {:.2}%", 100.0 * acceptance.overall());
        }
        eprintln!("-------------------------------------------------");
    }
}

pub(crate) fn check_graph(graph: &NeighborGraph, n: usize) -> Result<(), SamplerError> {
    if graph.len() != n {
        return Err(SamplerError::GraphMismatch { graph: graph.len(), data: n });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn transform_examples() {
        assert_eq!(Support::Positive.to_real(1.0).unwrap(), 0.0);
        let s = Support::Interval { lo: 3.0, hi: 30.0 };
        assert!(s.to_real(16.5).unwrap().abs() < 1e-15);
        assert!(s.to_real(3.0).is_err());
        assert!(s.to_real(30.0).is_err());
        assert!(Support::Positive.to_real(0.0).is_err());
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let s = Support::Interval { lo: 3.0, hi: 30.0 };
        for &z in &[-4.0, -0.3, 0.0, 1.7, 5.0] {
            let h = 1e-6;
            let fd = (s.from_real(z + h) - s.from_real(z - h)) / (2.0 * h);
            assert!((fd.ln() - s.log_jacobian(z)).abs() < 1e-6);
            let fd = (Support::Positive.from_real(z + h) - Support::Positive.from_real(z - h)) / (2.0 * h);
            assert!((fd.ln() - Support::Positive.log_jacobian(z)).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn transform_round_trip(u in 0.001f64..0.999, x in 1e-6f64..1e6) {
            let s = Support::Interval { lo: 3.0, hi: 30.0 };
            let v = 3.0 + 27.0 * u;
            prop_assert!((s.from_real(s.to_real(v).unwrap()) - v).abs() <= 1e-12 * v);
            let back = Support::Positive.from_real(Support::Positive.to_real(x).unwrap());
            prop_assert!((back - x).abs() <= 1e-12 * x);
        }
    }
}
