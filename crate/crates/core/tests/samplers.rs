use nngp::covariance::{CovFamily, CovarianceSpec};
use nngp::geo::{build_neighbor_graph, order_locations, OrderStrategy, SearchKind};
use nngp::oracle::{dense_binomial_gibbs, dense_latent_gibbs, dense_response_mh};
use nngp::samplers::{
    fit_binomial_latent, fit_latent, fit_response, BetaPrior, InverseGamma, McmcConfig, PriorSpec, Starting, Tuning,
    UniformPrior,
};
use nngp::simulate::{simulate_gp_dataset, SimulationConfig};

fn priors() -> PriorSpec {
    PriorSpec {
        beta: BetaPrior::Flat,
        sigma_sq: InverseGamma::new(2.0, 1.0),
        tau_sq: InverseGamma::new(2.0, 1.0),
        phi: UniformPrior::new(3.0, 30.0),
        nu: None,
    }
}

fn config(n_samples: usize, seed: u64) -> McmcConfig {
    let starting = Starting { phi: 6.0, sigma_sq: 1.0, tau_sq: 0.5, nu: None, beta: None, w: None };
    let tuning = Tuning { phi: 0.3, sigma_sq: 0.2, tau_sq: 0.2, nu: 0.1 };
    McmcConfig::new(n_samples, starting, tuning, seed)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn latent_full_conditioning_matches_dense_sampler() {
    let sim = simulate_gp_dataset(&SimulationConfig::standard(100, 11)).unwrap();
    let d = &sim.train;
    let ord = order_locations(&d.coords, &OrderStrategy::FirstCoord).unwrap();
    let graph = build_neighbor_graph(&d.coords, &ord, 99, SearchKind::Codebook).unwrap();
    let cfg = config(60, 5);
    let a = fit_latent(d, &graph, &priors(), &cfg, CovFamily::Exponential).unwrap();
    let b = dense_latent_gibbs(d, &ord, &priors(), &cfg, CovFamily::Exponential).unwrap();
    assert!(max_abs_diff(&a.beta.data, &b.beta.data) < 1e-6);
    assert!(max_abs_diff(&a.theta.data, &b.theta.data) < 1e-6);
    assert!(max_abs_diff(&a.w.unwrap().data, &b.w.unwrap().data) < 1e-6);
    assert_eq!(a.acceptance.accepted, b.acceptance.accepted);
}

#[test]
fn response_full_conditioning_matches_dense_sampler() {
    let sim = simulate_gp_dataset(&SimulationConfig::standard(100, 12)).unwrap();
    let d = &sim.train;
    let ord = order_locations(&d.coords, &OrderStrategy::FirstCoord).unwrap();
    let graph = build_neighbor_graph(&d.coords, &ord, 99, SearchKind::Codebook).unwrap();
    let cfg = config(60, 6);
    let a = fit_response(d, &graph, &priors(), &cfg, CovFamily::Exponential).unwrap();
    let (b, trace) = dense_response_mh(d, &ord, &priors(), &cfg, CovFamily::Exponential).unwrap();
    assert!(max_abs_diff(&a.beta.data, &b.beta.data) < 1e-6);
    assert!(max_abs_diff(&a.theta.data, &b.theta.data) < 1e-6);
    assert_eq!(a.acceptance.accepted, b.acceptance.accepted);
    assert_eq!(trace.len(), 60);
}

#[test]
fn binomial_full_conditioning_matches_dense_sampler() {
    let mut sc = SimulationConfig::standard(60, 13);
    sc.trials = Some(2);
    sc.beta = vec![0.2, 0.8];
    let sim = simulate_gp_dataset(&sc).unwrap();
    let d = &sim.train;
    let ord = order_locations(&d.coords, &OrderStrategy::FirstCoord).unwrap();
    let graph = build_neighbor_graph(&d.coords, &ord, 59, SearchKind::Codebook).unwrap();
    let cfg = config(40, 7);
    let a = fit_binomial_latent(d, &graph, &priors(), &cfg, CovFamily::Exponential).unwrap();
    let b = dense_binomial_gibbs(d, &ord, &priors(), &cfg, CovFamily::Exponential).unwrap();
    assert!(max_abs_diff(&a.beta.data, &b.beta.data) < 1e-6);
    assert!(max_abs_diff(&a.theta.data, &b.theta.data) < 1e-6);
}

#[test]
fn matern_latent_updates_nu_inside_support() {
    let mut sc = SimulationConfig::standard(80, 14);
    sc.spec = CovarianceSpec::new(CovFamily::Matern, 1.0, 6.0, 0.25).with_nu(1.0);
    let sim = simulate_gp_dataset(&sc).unwrap();
    let d = &sim.train;
    let ord = order_locations(&d.coords, &OrderStrategy::FirstCoord).unwrap();
    let graph = build_neighbor_graph(&d.coords, &ord, 10, SearchKind::Codebook).unwrap();
    let mut p = priors();
    p.nu = Some(UniformPrior::new(0.1, 2.0));
    let mut cfg = config(100, 8);
    cfg.starting.nu = Some(1.0);
    let s = fit_latent(d, &graph, &p, &cfg, CovFamily::Matern).unwrap();
    let nu = s.theta_column("nu").unwrap();
    assert!(nu.iter().all(|&v| v > 0.1 && v < 2.0));
    let phi = s.theta_column("phi").unwrap();
    assert!(phi.iter().all(|&v| v > 3.0 && v < 30.0));
    assert_eq!(s.acceptance.attempted, 200);
}

#[test]
fn fixed_seed_single_thread_is_bit_reproducible() {
    let sim = simulate_gp_dataset(&SimulationConfig::standard(200, 15)).unwrap();
    let d = &sim.train;
    let ord = order_locations(&d.coords, &OrderStrategy::FirstCoord).unwrap();
    let graph = build_neighbor_graph(&d.coords, &ord, 8, SearchKind::Codebook).unwrap();
    let mut cfg = config(50, 9);
    cfg.threads = Some(1);
    let a = fit_latent(d, &graph, &priors(), &cfg, CovFamily::Exponential).unwrap();
    let b = fit_latent(d, &graph, &priors(), &cfg, CovFamily::Exponential).unwrap();
    assert_eq!(a, b);
    let a = fit_response(d, &graph, &priors(), &cfg, CovFamily::Exponential).unwrap();
    let b = fit_response(d, &graph, &priors(), &cfg, CovFamily::Exponential).unwrap();
    assert_eq!(a, b);
}

#[test]
fn invalid_start_is_rejected() {
    let sim = simulate_gp_dataset(&SimulationConfig::standard(30, 16)).unwrap();
    let d = &sim.train;
    let ord = order_locations(&d.coords, &OrderStrategy::FirstCoord).unwrap();
    let graph = build_neighbor_graph(&d.coords, &ord, 5, SearchKind::Brute).unwrap();
    let mut cfg = config(5, 1);
    cfg.starting.phi = 30.0;
    assert!(fit_latent(d, &graph, &priors(), &cfg, CovFamily::Exponential).is_err());
    let mut cfg = config(5, 1);
    cfg.starting.sigma_sq = -1.0;
    assert!(fit_response(d, &graph, &priors(), &cfg, CovFamily::Exponential).is_err());
}
