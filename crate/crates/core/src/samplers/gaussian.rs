//! Gibbs/MH samplers for the latent and response NNGP models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::covariance::{CovFamily, CovarianceSpec};
use crate::data::SpatialDataset;
use crate::factors::KernelKind;
use crate::samples::{DrawMatrix, PosteriorSamples};

pub(crate) fn theta_names(family: CovFamily, with_tau: bool) -> Vec<String> {
    let mut names = vec!["sigma.sq".to_string()];
    if with_tau {
        names.push("tau.sq".into());
    }
    names.push("phi".into());
    if family.uses_nu() {
        names.push("nu".into());
    }
    names
}

pub(crate) struct Start {
    pub beta: Vec<f64>,
    pub w: Vec<f64>,
    pub sigma_sq: f64,
    pub tau_sq: f64,
    pub phi: f64,
    pub nu: f64,
}

/// Validates starting values against the priors and maps them to ordered space.
pub(crate) fn resolve_start(
    od: &OrderedData,
    ordering: &crate::geo::Ordering,
    priors: &PriorSpec,
    config: &McmcConfig,
    family: CovFamily,
    needs_tau: bool,
    beta_default_ols: bool,
) -> Result<Start, SamplerError> {
    let s = &config.starting;
    let bad = |what: &str| SamplerError::InvalidStart(what.to_string());
    if !(s.sigma_sq > 0.0 && s.sigma_sq.is_finite()) {
        return Err(bad("sigma.sq must be positive"));
    }
    if needs_tau && !(s.tau_sq > 0.0 && s.tau_sq.is_finite()) {
        return Err(bad("tau.sq must be positive"));
    }
    if !priors.phi.support().contains(s.phi) {
        return Err(bad("phi must lie strictly inside its Uniform prior"));
    }
    let nu = if family.uses_nu() {
        let nu = s.nu.ok_or_else(|| bad("matern model requires a starting nu"))?;
        let support = priors.nu.expect("validated").support();
        if !support.contains(nu) {
            return Err(bad("nu must lie strictly inside its Uniform prior"));
        }
        nu
    } else {
        s.nu.unwrap_or(0.5)
    };
    let beta = match &s.beta {
        Some(b) if b.len() == od.p => b.clone(),
        Some(_) => return Err(bad("beta has the wrong length")),
        None if beta_default_ols => least_squares(od)?,
        None => vec![0.0; od.p],
    };
    let w = match &s.w {
        Some(w) if w.len() == od.len() => ordering.to_ordered(w),
        Some(_) => return Err(bad("w has the wrong length")),
        None => vec![0.0; od.len()],
    };
    Ok(Start { beta, w, sigma_sq: s.sigma_sq, tau_sq: s.tau_sq, phi: s.phi, nu })
}

pub(crate) fn default_beta_names(data: &SpatialDataset) -> Vec<String> {
    if data.covariate_names.len() == data.p {
        data.covariate_names.clone()
    } else {
        (0..data.p).map(|k| format!("x{k}")).collect()
    }
}

/// Latent NNGP model `y = X beta + w + e`, `w ~ NNGP(0, sigma^2 R(phi))`,
/// `e ~ N(0, tau^2 I)`, fitted by a full Gibbs sweep with MH for `phi` (and `nu`).
pub fn fit_latent(
    data: &SpatialDataset,
    graph: &NeighborGraph,
    priors: &PriorSpec,
    config: &McmcConfig,
    family: CovFamily,
) -> Result<PosteriorSamples, SamplerError> {
    config.validate()?;
    priors.validate(family, true)?;
    check_graph(graph, data.len())?;
    with_threads(config.threads, || run_latent(data, graph, priors, config, family))?
}

fn run_latent(
    data: &SpatialDataset,
    graph: &NeighborGraph,
    priors: &PriorSpec,
    config: &McmcConfig,
    family: CovFamily,
) -> Result<PosteriorSamples, SamplerError> {
    let od = OrderedData::new(data, graph.ordering());
    let n = od.len();
    let start = resolve_start(&od, graph.ordering(), priors, config, family, true, false)?;
    let prior_beta = priors.beta.precision(od.p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut w = start.w;
    let mut sigma_sq = start.sigma_sq;
    let mut tau_sq = start.tau_sq;
    let mut corr = LatentCorrelation::new(graph, &od, family, start.phi, start.nu)?;

    let names = theta_names(family, true);
    let mut beta_draws = DrawMatrix::with_cols(od.p);
    let mut theta_draws = DrawMatrix::with_cols(names.len());
    let mut w_draws = config.store_w.then(|| DrawMatrix::with_cols(n));
    let mut acceptance = Acceptance::default();
    let ordering = graph.ordering();

    for s in 0..config.n_samples {
        let t = tau_sq;
        let beta = draw_beta(&od, |_| 1.0 / t, |i| (od.y[i] - w[i]) / t, prior_beta.as_ref(), &mut rng)?;
        let mu = od.mean(&beta);
        sweep_latent(graph, &corr.factors, sigma_sq, &mut w, |_| 1.0 / t, |i| (od.y[i] - mu[i]) / t, &mut rng);

        let q = corr.quad(&w);
        sigma_sq =
            draw_inverse_gamma(&mut rng, priors.sigma_sq.shape + 0.5 * n as f64, priors.sigma_sq.scale + 0.5 * q);
        let sse: f64 = (0..n).map(|i| (od.y[i] - mu[i] - w[i]).powi(2)).sum();
        tau_sq = draw_inverse_gamma(&mut rng, priors.tau_sq.shape + 0.5 * n as f64, priors.tau_sq.scale + 0.5 * sse);

        corr.update(graph, &od, &w, sigma_sq, priors, &config.tuning, &mut acceptance, &mut rng);

        beta_draws.push(&beta);
        let mut theta = vec![sigma_sq, tau_sq, corr.phi];
        if family.uses_nu() {
            theta.push(corr.nu);
        }
        theta_draws.push(&theta);
        if let Some(wd) = w_draws.as_mut() {
            wd.push(&ordering.to_original(&w));
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
        omega: None,
        acceptance,
    })
}

/// Parameters of the response-model MH chain.
#[derive(Debug, Clone, Copy)]
struct ResponseState {
    sigma_sq: f64,
    tau_sq: f64,
    phi: f64,
    nu: f64,
}

impl ResponseState {
    fn spec(&self, family: CovFamily) -> CovarianceSpec<f64> {
        CovarianceSpec { family, sigma_sq: self.sigma_sq, phi: self.phi, nu: self.nu, tau_sq: self.tau_sq }
    }

    fn get(&self, k: usize) -> f64 {
        [self.sigma_sq, self.tau_sq, self.phi, self.nu][k]
    }

    fn set(&mut self, k: usize, v: f64) {
        match k {
            0 => self.sigma_sq = v,
            1 => self.tau_sq = v,
            2 => self.phi = v,
            _ => self.nu = v,
        }
    }
}

/// Log prior of the response-model covariance parameters (uniform terms are constant).
fn response_log_prior(priors: &PriorSpec, st: &ResponseState) -> f64 {
    priors.sigma_sq.ln_kernel(st.sigma_sq) + priors.tau_sq.ln_kernel(st.tau_sq)
}

/// Response NNGP model `y ~ N(X beta, C~(theta) + tau^2 I)` with a Gibbs step for
/// `beta` and one-at-a-time MH for `sigma^2`, `tau^2`, `phi` (and `nu`).
pub fn fit_response(
    data: &SpatialDataset,
    graph: &NeighborGraph,
    priors: &PriorSpec,
    config: &McmcConfig,
    family: CovFamily,
) -> Result<PosteriorSamples, SamplerError> {
    config.validate()?;
    priors.validate(family, true)?;
    check_graph(graph, data.len())?;
    with_threads(config.threads, || run_response(data, graph, priors, config, family))?
}

fn run_response(
    data: &SpatialDataset,
    graph: &NeighborGraph,
    priors: &PriorSpec,
    config: &McmcConfig,
    family: CovFamily,
) -> Result<PosteriorSamples, SamplerError> {
    let od = OrderedData::new(data, graph.ordering());
    let n = od.len();
    let p = od.p;
    let start = resolve_start(&od, graph.ordering(), priors, config, family, true, false)?;
    let prior_beta = priors.beta.precision(p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut state = ResponseState { sigma_sq: start.sigma_sq, tau_sq: start.tau_sq, phi: start.phi, nu: start.nu };
    let factors_at =
        |st: &ResponseState| compute_factors(graph, &od.coords, &Kernel::new(&st.spec(family), KernelKind::Response));
    let mut fac = factors_at(&state)?;

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
    let mut acceptance = Acceptance::default();
    let columns: Vec<Vec<f64>> = (0..p).map(|k| (0..n).map(|i| od.x[i * p + k]).collect()).collect();

    for s in 0..config.n_samples {
        let beta = draw_response_beta(&fac, &columns, &od.y, prior_beta.as_ref(), &mut rng)?;
        let mu = od.mean(&beta);
        let resid: Vec<f64> = od.y.iter().zip(&mu).map(|(y, m)| y - m).collect();

        let mut current = fac.log_density(&resid)? + response_log_prior(priors, &state);
        for &(k, support, step) in &params {
            let z = support.to_real(state.get(k)).expect("chain state inside support");
            let z_new = z + step * standard_normal(&mut rng);
            let proposal = support.from_real(z_new);
            let log_u = rng.random::<f64>().ln();
            let mut accepted = false;
            if support.contains(proposal) {
                let mut cand_state = state;
                cand_state.set(k, proposal);
                if let Ok(cand_fac) = factors_at(&cand_state) {
                    let cand = cand_fac.log_density(&resid)? + response_log_prior(priors, &cand_state);
                    let ratio = cand + support.log_jacobian(z_new) - current - support.log_jacobian(z);
                    if log_u < ratio {
                        accepted = true;
                        state = cand_state;
                        fac = cand_fac;
                        current = cand;
                    }
                }
            }
            acceptance.record(accepted);
        }

        beta_draws.push(&beta);
        let mut theta = vec![state.sigma_sq, state.tau_sq, state.phi];
        if family.uses_nu() {
            theta.push(state.nu);
        }
        theta_draws.push(&theta);
        if config.n_report > 0 && (s + 1) % config.n_report == 0 {
            report_progress(s + 1, config.n_samples, &mut acceptance, config.verbose, true);
        }
    }

    Ok(PosteriorSamples {
        beta_names: default_beta_names(data),
        beta: beta_draws,
        theta_names: names,
        theta: theta_draws,
        w: None,
        omega: None,
        acceptance,
    })
}

/// `beta | theta, y` for the marginal model, via whitened design columns.
fn draw_response_beta<R: Rng + ?Sized>(
    fac: &NngpFactors<f64>,
    columns: &[Vec<f64>],
    y: &[f64],
    prior: Option<&(Vec<f64>, Vec<f64>)>,
    rng: &mut R,
) -> Result<Vec<f64>, SamplerError> {
    let p = columns.len();
    let xt: Vec<Vec<f64>> = columns.iter().map(|c| fac.whiten(c)).collect::<Result<_, _>>()?;
    let yt = fac.whiten(y)?;
    let mut prec = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for a in 0..p {
        rhs[a] = crate::linalg::dot(&xt[a], &yt);
        for b in 0..=a {
            let v = crate::linalg::dot(&xt[a], &xt[b]);
            prec[a * p + b] = v;
            prec[b * p + a] = v;
        }
    }
    if let Some((vinv, vinv_mu)) = prior {
        prec.iter_mut().zip(vinv).for_each(|(a, b)| *a += b);
        rhs.iter_mut().zip(vinv_mu).for_each(|(a, b)| *a += b);
    }
    gaussian_from_precision(prec, &rhs, p, rng)
}
