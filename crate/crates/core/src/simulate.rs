//! Synthetic spatial datasets on the unit square.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariance::CovarianceSpec;
use crate::data::{DataError, SpatialDataset};
use crate::factors::{compute_factors, FactorError, Kernel, KernelKind};
use crate::geo::{build_neighbor_graph, order_locations, Coordinates, GraphError, OrderStrategy, SearchKind};
use crate::linalg::Cholesky;
use crate::samplers::binomial::inv_logit;
use crate::samplers::standard_normal;

/// Largest `n + n0` simulated with a dense Cholesky factor.
pub const DENSE_SIMULATION_LIMIT: usize = 20_000;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("dense simulation limited to {limit} locations, got {n}")]
    TooLarge { n: usize, limit: usize },
    #[error("covariance matrix is not positive definite even with jitter (pivot {0})")]
    NotPositiveDefinite(usize),
    #[error("invalid simulation setting: {0}")]
    Invalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Factor(#[from] FactorError),
}

/// How the latent surface is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMethod {
    /// Exact draw from the full Gaussian process.
    #[default]
    Dense,
    /// Draw from the NNGP with `m` neighbors; any `n`.
    Nngp { m: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n: usize,
    pub spec: CovarianceSpec<f64>,
    /// Intercept first; remaining coefficients multiply iid `N(0, 1)` covariates.
    pub beta: Vec<f64>,
    /// Side length `k` of a `k x k` holdout grid of cell centers.
    pub holdout_grid: Option<usize>,
    /// Binomial responses with this many trials per site (no nugget is used).
    pub trials: Option<u32>,
    #[serde(default)]
    pub method: SimulationMethod,
    pub seed: u64,
}

impl SimulationConfig {
    /// Intercept-plus-one-covariate exponential setting with `(beta, sigma^2, phi, tau^2) = (1, -0.1, 1, 6, 0.25)`.
    pub fn standard(n: usize, seed: u64) -> Self {
        Self {
            n,
            spec: CovarianceSpec::new(crate::covariance::CovFamily::Exponential, 1.0, 6.0, 0.25),
            beta: vec![1.0, -0.1],
            holdout_grid: None,
            trials: None,
            method: SimulationMethod::Dense,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub train: SpatialDataset,
    pub w: Vec<f64>,
    pub holdout: Option<SpatialDataset>,
    pub holdout_w: Option<Vec<f64>>,
}

/// Truth record written next to simulated CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Truth {
    pub config: SimulationConfig,
    pub effective_range: f64,
}

fn covariate_names(p: usize) -> Vec<String> {
    std::iter::once("(Intercept)".to_string()).chain((1..p).map(|k| format!("x{k}"))).collect()
}

/// Locations uniform on the unit square, `X = [1, N(0,1)...]`, `w` a GP draw,
/// `y = X beta + w + N(0, tau^2)` (or binomial through the inverse logit).
pub fn simulate_gp_dataset(cfg: &SimulationConfig) -> Result<SimulatedData, SimulationError> {
    if cfg.n == 0 || cfg.beta.is_empty() {
        return Err(SimulationError::Invalid("n and beta must be non-empty".into()));
    }
    cfg.spec.validate().map_err(|e| SimulationError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let p = cfg.beta.len();
    let mut pts: Vec<[f64; 2]> = (0..cfg.n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
    let n0 = cfg.holdout_grid.map(|k| k * k).unwrap_or(0);
    if let Some(k) = cfg.holdout_grid {
        for a in 0..k {
            for b in 0..k {
                pts.push([(b as f64 + 0.5) / k as f64, (a as f64 + 0.5) / k as f64]);
            }
        }
    }
    let total = pts.len();
    let coords = Coordinates::new(pts)?;
    let latent = Kernel::new(&cfg.spec, KernelKind::Latent);
    let w = match cfg.method {
        SimulationMethod::Dense => {
            if total > DENSE_SIMULATION_LIMIT {
                return Err(SimulationError::TooLarge { n: total, limit: DENSE_SIMULATION_LIMIT });
            }
            dense_draw(&coords, &latent, &mut rng)?
        }
        SimulationMethod::Nngp { m } => {
            let ord = order_locations(&coords, &OrderStrategy::FirstCoord)?;
            let graph = build_neighbor_graph(&coords, &ord, m.max(1), SearchKind::Codebook)?;
            let fac = compute_factors(&graph, &coords.permuted(&ord), &latent)?;
            ord.to_original(&fac.sample_joint(&mut rng))
        }
    };
    let mut x = Vec::with_capacity(total * p);
    let mut y = Vec::with_capacity(total);
    let tau = cfg.spec.tau_sq.sqrt();
    for i in 0..total {
        x.push(1.0);
        for _ in 1..p {
            x.push(standard_normal(&mut rng));
        }
        let eta: f64 = x[i * p..(i + 1) * p].iter().zip(&cfg.beta).map(|(a, b)| a * b).sum::<f64>() + w[i];
        y.push(match cfg.trials {
            Some(t) => Binomial::new(t as u64, inv_logit(eta)).expect("valid probability").sample(&mut rng) as f64,
            None => eta + tau * standard_normal(&mut rng),
        });
    }
    let names = covariate_names(p);
    let split = |lo: usize, hi: usize| -> Result<SpatialDataset, SimulationError> {
        let c = Coordinates::new(coords.points()[lo..hi].to_vec())?;
        let mut d =
            SpatialDataset::new(c, x[lo * p..hi * p].to_vec(), p, y[lo..hi].to_vec())?.with_names(names.clone());
        if let Some(t) = cfg.trials {
            d = d.with_trials(vec![t; hi - lo])?;
        }
        Ok(d)
    };
    let train = split(0, cfg.n)?;
    let holdout = if n0 > 0 { Some(split(cfg.n, total)?) } else { None };
    Ok(SimulatedData { train, w: w[..cfg.n].to_vec(), holdout, holdout_w: (n0 > 0).then(|| w[cfg.n..].to_vec()) })
}

fn dense_draw<R: Rng + ?Sized>(
    coords: &Coordinates<f64>,
    kernel: &Kernel<f64>,
    rng: &mut R,
) -> Result<Vec<f64>, SimulationError> {
    let n = coords.len();
    let build = |jitter: f64| {
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            k[i * n + i] = kernel.diag() * (1.0 + jitter);
            for j in 0..i {
                k[i * n + j] = kernel.cross(coords.point(i), coords.point(j));
            }
        }
        Cholesky::new(k, n)
    };
    let chol = build(0.0).or_else(|_| build(1e-10)).map_err(SimulationError::NotPositiveDefinite)?;
    let z: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
    Ok(chol.lower_mul(&z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovFamily;

    #[test]
    fn no_noise_no_mean_gives_w() {
        let mut cfg = SimulationConfig::standard(50, 1);
        cfg.spec.tau_sq = 0.0;
        cfg.beta = vec![0.0, 0.0];
        let s = simulate_gp_dataset(&cfg).unwrap();
        for (y, w) in s.train.y.iter().zip(&s.w) {
            assert_eq!(y, w);
        }
    }

    #[test]
    fn reproducible_with_seed() {
        let cfg = SimulationConfig::standard(100, 7);
        let a = simulate_gp_dataset(&cfg).unwrap();
        let b = simulate_gp_dataset(&cfg).unwrap();
        assert_eq!(a.train.y, b.train.y);
        assert_eq!(a.train.x, b.train.x);
    }

    #[test]
    fn independence_limit_variance() {
        let mut cfg = SimulationConfig::standard(4000, 3);
        cfg.spec = CovarianceSpec::new(CovFamily::Exponential, 1.0, 1e6, 0.25);
        cfg.beta = vec![0.0];
        cfg.method = SimulationMethod::Nngp { m: 5 };
        let s = simulate_gp_dataset(&cfg).unwrap();
        let n = s.train.y.len() as f64;
        let mean = s.train.y.iter().sum::<f64>() / n;
        let var = s.train.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // sd of the sample variance is about 1.25 * sqrt(2 / n)
        assert!((var - 1.25).abs() < 4.0 * 1.25 * (2.0 / n).sqrt(), "{var}");
    }

    #[test]
    fn holdout_grid_and_binomial() {
        let mut cfg = SimulationConfig::standard(30, 2);
        cfg.holdout_grid = Some(4);
        cfg.trials = Some(3);
        let s = simulate_gp_dataset(&cfg).unwrap();
        let h = s.holdout.unwrap();
        assert_eq!(h.len(), 16);
        assert_eq!(s.holdout_w.unwrap().len(), 16);
        assert!(s.train.y.iter().all(|&v| (0.0..=3.0).contains(&v) && v.fract() == 0.0));
    }
}
