//! Dense-matrix reference computations. Cubic cost; small problems only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::covariance::{CovFamily, CovarianceSpec};
use crate::data::{OrderedData, SpatialDataset};
use crate::factors::{Kernel, KernelKind};
use crate::geo::{Coordinates, Ordering};
use crate::linalg::{dot, Cholesky};
use crate::samplers::binomial::sample_pg;
use crate::samplers::gaussian::{default_beta_names, resolve_start, theta_names};
use crate::samplers::{
    draw_beta, draw_inverse_gamma, gaussian_from_precision, standard_normal, BetaPrior, InverseGamma, McmcConfig,
    PriorSpec, SamplerError, Support,
};
use crate::samples::{Acceptance, DrawMatrix, PosteriorSamples};

/// Largest problem the dense oracles accept.
pub const DENSE_LIMIT: usize = 5000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("dense oracle limited to n <= {limit}, got {n}")]
    TooLarge { n: usize, limit: usize },
    #[error("dense kernel matrix is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

fn guard(n: usize) -> Result<(), OracleError> {
    if n > DENSE_LIMIT {
        Err(OracleError::TooLarge { n, limit: DENSE_LIMIT })
    } else {
        Ok(())
    }
}

/// Full `n x n` kernel matrix with the nugget on the diagonal only.
pub fn dense_kernel_matrix(coords: &Coordinates<f64>, kernel: &Kernel<f64>) -> Vec<f64> {
    let n = coords.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = kernel.diag();
        for j in 0..i {
            let v = kernel.cross(coords.point(i), coords.point(j));
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

fn factor(coords: &Coordinates<f64>, kernel: &Kernel<f64>) -> Result<Cholesky<f64>, OracleError> {
    guard(coords.len())?;
    Cholesky::new(dense_kernel_matrix(coords, kernel), coords.len()).map_err(OracleError::NotPositiveDefinite)
}

/// `log N(residual | 0, K)` with the dense kernel matrix.
pub fn dense_gp_loglik(coords: &Coordinates<f64>, kernel: &Kernel<f64>, residual: &[f64]) -> Result<f64, OracleError> {
    let n = coords.len();
    if residual.len() != n {
        return Err(OracleError::Length { expected: n, got: residual.len() });
    }
    let chol = factor(coords, kernel)?;
    let q = dot(residual, &chol.solve(residual));
    Ok(-0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + chol.log_det() + q))
}

/// Simple kriging of a zero-mean field from all observations: conditional mean and variance at `s0`.
pub fn dense_krige(
    coords: &Coordinates<f64>,
    kernel: &Kernel<f64>,
    values: &[f64],
    s0: [f64; 2],
) -> Result<(f64, f64), OracleError> {
    let n = coords.len();
    if values.len() != n {
        return Err(OracleError::Length { expected: n, got: values.len() });
    }
    let chol = factor(coords, kernel)?;
    let k0: Vec<f64> = (0..n).map(|i| kernel.cross(s0, coords.point(i))).collect();
    let a = chol.solve(&k0);
    Ok((dot(&a, values), kernel.diag() - dot(&a, &k0)))
}

/// Dense normal-inverse-gamma posterior `(beta mean, a*, b*)` for `y ~ N(X beta, sigma^2 K)`.
pub fn dense_nig_posterior(
    coords: &Coordinates<f64>,
    x: &[f64],
    p: usize,
    y: &[f64],
    kernel: &Kernel<f64>,
    beta_prior: &BetaPrior,
    sigma_ig: InverseGamma,
) -> Result<(Vec<f64>, f64, f64), OracleError> {
    let n = coords.len();
    let chol = factor(coords, kernel)?;
    let kiy = chol.solve(y);
    let cols: Vec<Vec<f64>> = (0..p).map(|k| (0..n).map(|i| x[i * p + k]).collect()).collect();
    let kix: Vec<Vec<f64>> = cols.iter().map(|c| chol.solve(c)).collect();
    let mut prec = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for a in 0..p {
        rhs[a] = dot(&cols[a], &kiy);
        for b in 0..p {
            prec[a * p + b] = dot(&cols[a], &kix[b]);
        }
    }
    let mut s = dot(y, &kiy);
    if let BetaPrior::Normal { mean, cov } = beta_prior {
        let vc = Cholesky::new(cov.clone(), p).map_err(OracleError::NotPositiveDefinite)?;
        let vinv = vc.inverse();
        let vinv_mu = vc.solve(mean);
        for a in 0..p {
            rhs[a] += vinv_mu[a];
            for b in 0..p {
                prec[a * p + b] += vinv[a * p + b];
            }
        }
        s += dot(mean, &vinv_mu);
    }
    let pc = Cholesky::new(prec, p).map_err(OracleError::NotPositiveDefinite)?;
    let m = pc.solve(&rhs);
    s -= dot(&m, &rhs);
    Ok((m, sigma_ig.shape + 0.5 * n as f64, sigma_ig.scale + 0.5 * s))
}

/// Dense correlation state for the reference latent samplers.
struct DenseCorrelation {
    phi: f64,
    nu: f64,
    inv: Vec<f64>,
    log_det: f64,
}

impl DenseCorrelation {
    fn new(coords: &Coordinates<f64>, family: CovFamily, phi: f64, nu: f64) -> Result<Self, OracleError> {
        let chol = factor(coords, &Kernel::correlation(family, phi, nu))?;
        Ok(Self { phi, nu, inv: chol.inverse(), log_det: chol.log_det() })
    }

    fn quad(&self, w: &[f64]) -> f64 {
        let n = w.len();
        (0..n).map(|i| w[i] * dot(&self.inv[i * n..(i + 1) * n], w)).sum()
    }

    #[allow(clippy::too_many_arguments)]
    fn update<R: Rng + ?Sized>(
        &mut self,
        coords: &Coordinates<f64>,
        family: CovFamily,
        w: &[f64],
        sigma_sq: f64,
        priors: &PriorSpec,
        config: &McmcConfig,
        acceptance: &mut Acceptance,
        rng: &mut R,
    ) {
        let target = |ld: f64, q: f64| -0.5 * (ld + q / sigma_sq);
        let mut current = target(self.log_det, self.quad(w));
        let mut params = vec![(priors.phi.support(), config.tuning.phi, false)];
        if family.uses_nu() {
            if let Some(u) = priors.nu {
                params.push((u.support(), config.tuning.nu, true));
            }
        }
        for (support, step, is_nu) in params {
            let z = support.to_real(if is_nu { self.nu } else { self.phi }).expect("inside support");
            let z_new = z + step * standard_normal(rng);
            let proposal = support.from_real(z_new);
            let log_u = rng.random::<f64>().ln();
            let mut accepted = false;
            if support.contains(proposal) {
                let (phi, nu) = if is_nu { (self.phi, proposal) } else { (proposal, self.nu) };
                if let Ok(cand) = DenseCorrelation::new(coords, family, phi, nu) {
                    let t = target(cand.log_det, cand.quad(w));
                    if log_u < t + support.log_jacobian(z_new) - current - support.log_jacobian(z) {
                        accepted = true;
                        *self = cand;
                        current = t;
                    }
                }
            }
            acceptance.record(accepted);
        }
    }
}

/// Dense sequential sweep of `w_i | rest` under precision `Q = R^{-1} / sigma^2`.
fn dense_sweep<R: Rng + ?Sized>(
    corr: &DenseCorrelation,
    sigma_sq: f64,
    w: &mut [f64],
    data_precision: impl Fn(usize) -> f64,
    data_target: impl Fn(usize) -> f64,
    rng: &mut R,
) {
    let n = w.len();
    for i in 0..n {
        let row = &corr.inv[i * n..(i + 1) * n];
        let prec = data_precision(i) + row[i] / sigma_sq;
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| row[j] * w[j]).sum::<f64>() / sigma_sq;
        let num = data_target(i) - off;
        w[i] = num / prec + prec.sqrt().recip() * standard_normal(rng);
    }
}

/// Reference latent Gibbs sampler with dense `R(phi)`; consumes the random
/// stream in the same order as `fit_latent`.
pub fn dense_latent_gibbs(
    data: &SpatialDataset,
    ordering: &Ordering,
    priors: &PriorSpec,
    config: &McmcConfig,
    family: CovFamily,
) -> Result<PosteriorSamples, OracleError> {
    priors.validate(family, true)?;
    let od = OrderedData::new(data, ordering);
    let n = od.len();
    guard(n)?;
    let start = resolve_start(&od, ordering, priors, config, family, true, false)?;
    let prior_beta = priors.beta.precision(od.p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut w = start.w;
    let mut sigma_sq = start.sigma_sq;
    let mut tau_sq = start.tau_sq;
    let mut corr = DenseCorrelation::new(&od.coords, family, start.phi, start.nu)?;
    let names = theta_names(family, true);
    let mut beta_draws = DrawMatrix::with_cols(od.p);
    let mut theta_draws = DrawMatrix::with_cols(names.len());
    let mut w_draws = DrawMatrix::with_cols(n);
    let mut acceptance = Acceptance::default();

    for _ in 0..config.n_samples {
        let t = tau_sq;
        let beta = draw_beta(&od, |_| 1.0 / t, |i| (od.y[i] - w[i]) / t, prior_beta.as_ref(), &mut rng)?;
        let mu = od.mean(&beta);
        dense_sweep(&corr, sigma_sq, &mut w, |_| 1.0 / t, |i| (od.y[i] - mu[i]) / t, &mut rng);
        let q = corr.quad(&w);
        sigma_sq =
            draw_inverse_gamma(&mut rng, priors.sigma_sq.shape + 0.5 * n as f64, priors.sigma_sq.scale + 0.5 * q);
        let sse: f64 = (0..n).map(|i| (od.y[i] - mu[i] - w[i]).powi(2)).sum();
        tau_sq = draw_inverse_gamma(&mut rng, priors.tau_sq.shape + 0.5 * n as f64, priors.tau_sq.scale + 0.5 * sse);
        corr.update(&od.coords, family, &w, sigma_sq, priors, config, &mut acceptance, &mut rng);
        beta_draws.push(&beta);
        let mut theta = vec![sigma_sq, tau_sq, corr.phi];
        if family.uses_nu() {
            theta.push(corr.nu);
        }
        theta_draws.push(&theta);
        w_draws.push(&ordering.to_original(&w));
    }
    Ok(PosteriorSamples {
        beta_names: default_beta_names(data),
        beta: beta_draws,
        theta_names: names,
        theta: theta_draws,
        w: Some(w_draws),
        omega: None,
        acceptance,
    })
}

/// Reference binomial latent Gibbs sampler with dense `R(phi)`.
pub fn dense_binomial_gibbs(
    data: &SpatialDataset,
    ordering: &Ordering,
    priors: &PriorSpec,
    config: &McmcConfig,
    family: CovFamily,
) -> Result<PosteriorSamples, OracleError> {
    priors.validate(family, false)?;
    let od = OrderedData::new(data, ordering);
    let n = od.len();
    guard(n)?;
    let kappa: Vec<f64> = (0..n).map(|i| od.y[i] - 0.5 * od.trials[i] as f64).collect();
    let start = resolve_start(&od, ordering, priors, config, family, false, false)?;
    let prior_beta = priors.beta.precision(od.p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut beta = start.beta;
    let mut w = start.w;
    let mut sigma_sq = start.sigma_sq;
    let mut corr = DenseCorrelation::new(&od.coords, family, start.phi, start.nu)?;
    let mut omega = vec![0.0; n];
    let names = theta_names(family, false);
    let mut beta_draws = DrawMatrix::with_cols(od.p);
    let mut theta_draws = DrawMatrix::with_cols(names.len());
    let mut w_draws = DrawMatrix::with_cols(n);
    let mut acceptance = Acceptance::default();

    for _ in 0..config.n_samples {
        let mu = od.mean(&beta);
        for i in 0..n {
            omega[i] = sample_pg(od.trials[i], mu[i] + w[i], &mut rng);
        }
        beta = draw_beta(&od, |i| omega[i], |i| kappa[i] - omega[i] * w[i], prior_beta.as_ref(), &mut rng)?;
        let mu = od.mean(&beta);
        dense_sweep(&corr, sigma_sq, &mut w, |i| omega[i], |i| kappa[i] - omega[i] * mu[i], &mut rng);
        let q = corr.quad(&w);
        sigma_sq =
            draw_inverse_gamma(&mut rng, priors.sigma_sq.shape + 0.5 * n as f64, priors.sigma_sq.scale + 0.5 * q);
        corr.update(&od.coords, family, &w, sigma_sq, priors, config, &mut acceptance, &mut rng);
        beta_draws.push(&beta);
        let mut theta = vec![sigma_sq, corr.phi];
        if family.uses_nu() {
            theta.push(corr.nu);
        }
        theta_draws.push(&theta);
        w_draws.push(&ordering.to_original(&w));
    }
    Ok(PosteriorSamples {
        beta_names: default_beta_names(data),
        beta: beta_draws,
        theta_names: names,
        theta: theta_draws,
        w: Some(w_draws),
        omega: None,
        acceptance,
    })
}

/// Reference response-model MH sampler using the dense marginal likelihood.
/// Returns the samples and the log-likelihood of each stored draw.
pub fn dense_response_mh(
    data: &SpatialDataset,
    ordering: &Ordering,
    priors: &PriorSpec,
    config: &McmcConfig,
    family: CovFamily,
) -> Result<(PosteriorSamples, Vec<f64>), OracleError> {
    priors.validate(family, true)?;
    let od = OrderedData::new(data, ordering);
    let (n, p) = (od.len(), od.p);
    guard(n)?;
    let start = resolve_start(&od, ordering, priors, config, family, true, false)?;
    let prior_beta = priors.beta.precision(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut st = [start.sigma_sq, start.tau_sq, start.phi, start.nu];
    let kernel_at = |s: &[f64; 4]| {
        let spec = CovarianceSpec { family, sigma_sq: s[0], tau_sq: s[1], phi: s[2], nu: s[3] };
        Kernel::new(&spec, KernelKind::Response)
    };
    let ln_prior = |s: &[f64; 4]| priors.sigma_sq.ln_kernel(s[0]) + priors.tau_sq.ln_kernel(s[1]);
    let mut chol = factor(&od.coords, &kernel_at(&st))?;
    let mut params: Vec<(usize, Support, f64)> = vec![
        (0, Support::Positive, config.tuning.sigma_sq),
        (1, Support::Positive, config.tuning.tau_sq),
        (2, priors.phi.support(), config.tuning.phi),
    ];
    if family.uses_nu() {
        params.push((3, priors.nu.expect("validated").support(), config.tuning.nu));
    }
    let names = theta_names(family, true);
    let mut beta_draws = DrawMatrix::with_cols(p);
    let mut theta_draws = DrawMatrix::with_cols(names.len());
    let mut trace = Vec::with_capacity(config.n_samples);
    let mut acceptance = Acceptance::default();
    let cols: Vec<Vec<f64>> = (0..p).map(|k| (0..n).map(|i| od.x[i * p + k]).collect()).collect();
    let loglik = |c: &Cholesky<f64>, r: &[f64]| {
        -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + c.log_det() + dot(r, &c.solve(r)))
    };

    for _ in 0..config.n_samples {
        let kiy = chol.solve(&od.y);
        let kix: Vec<Vec<f64>> = cols.iter().map(|c| chol.solve(c)).collect();
        let mut prec = vec![0.0; p * p];
        let mut rhs = vec![0.0; p];
        for a in 0..p {
            rhs[a] = dot(&cols[a], &kiy);
            for b in 0..p {
                prec[a * p + b] = dot(&cols[a], &kix[b]);
            }
        }
        if let Some((vinv, vm)) = prior_beta.as_ref() {
            prec.iter_mut().zip(vinv).for_each(|(a, b)| *a += b);
            rhs.iter_mut().zip(vm).for_each(|(a, b)| *a += b);
        }
        let beta = gaussian_from_precision(prec, &rhs, p, &mut rng)?;
        let mu = od.mean(&beta);
        let r: Vec<f64> = od.y.iter().zip(&mu).map(|(y, m)| y - m).collect();
        let mut current = loglik(&chol, &r) + ln_prior(&st);
        for &(k, support, step) in &params {
            let z = support.to_real(st[k]).expect("inside support");
            let z_new = z + step * standard_normal(&mut rng);
            let proposal = support.from_real(z_new);
            let log_u = rng.random::<f64>().ln();
            let mut accepted = false;
            if support.contains(proposal) {
                let mut cand = st;
                cand[k] = proposal;
                if let Ok(c) = factor(&od.coords, &kernel_at(&cand)) {
                    let t = loglik(&c, &r) + ln_prior(&cand);
                    if log_u < t + support.log_jacobian(z_new) - current - support.log_jacobian(z) {
                        accepted = true;
                        st = cand;
                        chol = c;
                        current = t;
                    }
                }
            }
            acceptance.record(accepted);
        }
        trace.push(loglik(&chol, &r));
        beta_draws.push(&beta);
        let mut theta = vec![st[0], st[1], st[2]];
        if family.uses_nu() {
            theta.push(st[3]);
        }
        theta_draws.push(&theta);
    }
    Ok((
        PosteriorSamples {
            beta_names: default_beta_names(data),
            beta: beta_draws,
            theta_names: names,
            theta: theta_draws,
            w: None,
            omega: None,
            acceptance,
        },
        trace,
    ))
}
