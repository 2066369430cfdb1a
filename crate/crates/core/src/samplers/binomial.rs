//! Polya-Gamma augmented samplers for binomial responses with a logit link.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_2_PI, PI};

use super::gaussian::{default_beta_names, resolve_start, theta_names};
use super::*;
use crate::data::SpatialDataset;
use crate::samples::{DrawMatrix, PosteriorSamples};

const TRUNC: f64 = 0.64;

fn ln_norm_cdf(x: f64) -> f64 {
    (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
}

/// Probability of drawing from the truncated-exponential piece.
fn mass_texpon(z: f64) -> f64 {
    let t = TRUNC;
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + ln_norm_cdf(b);
    let xa = x0 + z + ln_norm_cdf(a);
    let qdivp = 2.0 * FRAC_2_PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + qdivp)
}

/// Piecewise coefficients of the alternating series for the Jacobi density.
fn series_coef(n: u32, x: f64) -> f64 {
    let k = n as f64 + 0.5;
    if x > TRUNC {
        PI * k * (-0.5 * k * k * PI * PI * x).exp()
    } else {
        (2.0 / (PI * x)).powf(1.5) * PI * k * (-2.0 * k * k / x).exp()
    }
}

/// Inverse Gaussian `IG(1/z, 1)` truncated to `(0, t)`.
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, t: f64, rng: &mut R) -> f64 {
    let mu = 1.0 / z;
    let mut x = t + 1.0;
    if mu > t {
        let mut alpha = 0.0;
        while rng.random::<f64>() > alpha {
            let mut e1: f64 = Exp1.sample(rng);
            let mut e2: f64 = Exp1.sample(rng);
            while e1 * e1 > 2.0 * e2 / t {
                e1 = Exp1.sample(rng);
                e2 = Exp1.sample(rng);
            }
            x = t / ((1.0 + t * e1) * (1.0 + t * e1));
            alpha = (-0.5 * z * z * x).exp();
        }
    } else {
        while x > t {
            let n = standard_normal(rng);
            let y = n * n;
            x = mu + 0.5 * mu * mu * y - 0.5 * mu * (4.0 * mu * y + (mu * y).powi(2)).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
        }
    }
    x
}

/// One exact draw from `PG(1, z)`.
pub fn sample_pg1<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let z = 0.5 * z.abs();
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let p_exp = mass_texpon(z);
    loop {
        let x = if rng.random::<f64>() < p_exp {
            let e: f64 = Exp1.sample(rng);
            TRUNC + e / fz
        } else {
            truncated_inverse_gaussian(z, TRUNC, rng)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// `PG(b, z)` as a sum of `b` independent `PG(1, z)` draws.
pub fn sample_pg<R: Rng + ?Sized>(b: u32, z: f64, rng: &mut R) -> f64 {
    (0..b).map(|_| sample_pg1(z, rng)).sum()
}

/// `E[PG(b, z)] = b / (2z) tanh(z / 2)`, with the limit `b / 4` at zero.
pub fn pg_mean(b: f64, z: f64) -> f64 {
    if z.abs() < 1e-8 {
        b / 4.0 * (1.0 - z * z / 12.0)
    } else {
        b / (2.0 * z) * (0.5 * z).tanh()
    }
}

pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_binomial(od: &OrderedData) -> Result<Vec<f64>, SamplerError> {
    let mut kappa = Vec::with_capacity(od.len());
    for (i, (&y, &t)) in od.y.iter().zip(&od.trials).enumerate() {
        if t == 0 || y < 0.0 || y > t as f64 || y.fract() != 0.0 {
            return Err(SamplerError::InvalidConfig(format!(
                "observation {i} is not a binomial count (y = {y}, trials = {t})"
            )));
        }
        kappa.push(y - 0.5 * t as f64);
    }
    Ok(kappa)
}

/// Non-spatial logistic regression by Polya-Gamma augmentation.
pub fn fit_pg_logit(
    data: &SpatialDataset,
    beta_prior: &BetaPrior,
    config: &McmcConfig,
) -> Result<PosteriorSamples, SamplerError> {
    config.validate()?;
    with_threads(config.threads, || run_pg_logit(data, beta_prior, config))?
}

fn run_pg_logit(
    data: &SpatialDataset,
    beta_prior: &BetaPrior,
    config: &McmcConfig,
) -> Result<PosteriorSamples, SamplerError> {
    let od = OrderedData::new(data, &crate::geo::Ordering::identity(data.len()));
    let n = od.len();
    let kappa = check_binomial(&od)?;
    let prior = beta_prior.precision(od.p)?;
    let mut beta = match &config.starting.beta {
        Some(b) if b.len() == od.p => b.clone(),
        Some(_) => return Err(SamplerError::InvalidStart("beta has the wrong length".into())),
        None => vec![0.0; od.p],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut omega = vec![0.0; n];
    let mut beta_draws = DrawMatrix::with_cols(od.p);
    let mut omega_draws = config.store_w.then(|| DrawMatrix::with_cols(n));
    let mut acceptance = Acceptance::default();

    for s in 0..config.n_samples {
        for (i, o) in omega.iter_mut().enumerate() {
            *o = sample_pg(od.trials[i], crate::linalg::dot(od.row(i), &beta), &mut rng);
        }
        beta = draw_beta(&od, |i| omega[i], |i| kappa[i], prior.as_ref(), &mut rng)?;
        beta_draws.push(&beta);
        if let Some(o) = omega_draws.as_mut() {
            o.push(&omega);
        }
        if config.n_report > 0 && (s + 1) % config.n_report == 0 {
            report_progress(s + 1, config.n_samples, &mut acceptance, config.verbose, false);
        }
    }

    Ok(PosteriorSamples {
        beta_names: default_beta_names(data),
        beta: beta_draws,
        theta_names: Vec::new(),
        theta: DrawMatrix::zeros(config.n_samples, 0),
        w: None,
        omega: omega_draws,
        acceptance,
    })
}

/// Spatial binomial model with logit link and NNGP latent process: the
/// Gaussian latent updates run on the pseudo-response `kappa / omega` with
/// per-location variances `1 / omega`.
pub fn fit_binomial_latent(
    data: &SpatialDataset,
    graph: &NeighborGraph,
    priors: &PriorSpec,
    config: &McmcConfig,
    family: CovFamily,
) -> Result<PosteriorSamples, SamplerError> {
    config.validate()?;
    priors.validate(family, false)?;
    check_graph(graph, data.len())?;
    with_threads(config.threads, || run_binomial(data, graph, priors, config, family))?
}

fn run_binomial(
    data: &SpatialDataset,
    graph: &NeighborGraph,
    priors: &PriorSpec,
    config: &McmcConfig,
    family: CovFamily,
) -> Result<PosteriorSamples, SamplerError> {
    let od = OrderedData::new(data, graph.ordering());
    let n = od.len();
    let kappa = check_binomial(&od)?;
    let start = resolve_start(&od, graph.ordering(), priors, config, family, false, false)?;
    let prior_beta = priors.beta.precision(od.p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut beta = start.beta;
    let mut w = start.w;
    let mut sigma_sq = start.sigma_sq;
    let mut corr = LatentCorrelation::new(graph, &od, family, start.phi, start.nu)?;
    let mut omega = vec![0.0; n];

    let names = theta_names(family, false);
    let mut beta_draws = DrawMatrix::with_cols(od.p);
    let mut theta_draws = DrawMatrix::with_cols(names.len());
    let mut w_draws = config.store_w.then(|| DrawMatrix::with_cols(n));
    let mut omega_draws = config.store_w.then(|| DrawMatrix::with_cols(n));
    let mut acceptance = Acceptance::default();
    let ordering = graph.ordering();

    for s in 0..config.n_samples {
        let mu = od.mean(&beta);
        for i in 0..n {
            omega[i] = sample_pg(od.trials[i], mu[i] + w[i], &mut rng);
        }
        beta = draw_beta(&od, |i| omega[i], |i| kappa[i] - omega[i] * w[i], prior_beta.as_ref(), &mut rng)?;
        let mu = od.mean(&beta);
        sweep_latent(graph, &corr.factors, sigma_sq, &mut w, |i| omega[i], |i| kappa[i] - omega[i] * mu[i], &mut rng);

        let q = corr.quad(&w);
        sigma_sq =
            draw_inverse_gamma(&mut rng, priors.sigma_sq.shape + 0.5 * n as f64, priors.sigma_sq.scale + 0.5 * q);
        corr.update(graph, &od, &w, sigma_sq, priors, &config.tuning, &mut acceptance, &mut rng);

        beta_draws.push(&beta);
        let mut theta = vec![sigma_sq, corr.phi];
        if family.uses_nu() {
            theta.push(corr.nu);
        }
        theta_draws.push(&theta);
        if let Some(wd) = w_draws.as_mut() {
            wd.push(&ordering.to_original(&w));
        }
        if let Some(o) = omega_draws.as_mut() {
            o.push(&ordering.to_original(&omega));
        }
        if config.n_report > 0 && (s + 1) % config.n_report == 0 {
            report_progress(s + 1, config.n_samples, &mut acceptance, config.verbose, true);
        }
    }

    Ok(PosteriorSamples {
        beta_names: default_beta_names(data),
        beta: beta_draws,
        theta_names: names,
        theta: theta_draws,
        w: w_draws,
        omega: omega_draws,
        acceptance,
    })
}
