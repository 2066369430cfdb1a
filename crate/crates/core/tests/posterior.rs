mod common;

use common::{chol_solve, cholesky, dot, exp_cov_matrix, exp_cov_vector, rel_err};
use nngp::covariance::CovFamily;
use nngp::data::SpatialDataset;
use nngp::geo::{build_neighbor_graph, order_locations, OrderStrategy, SearchKind};
use nngp::posterior::{
    fitted_values, predict, replicate_data, stream_rng, FittedModel, McmcModel, ModelKind, PredictionSet,
};
use nngp::samples::{Acceptance, DrawMatrix, PosteriorSamples, SubSample};
use nngp::simulate::{simulate_gp_dataset, SimulationConfig};
use rand::Rng;
use rand_distr::StandardNormal;

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

const SIGMA_SQ: f64 = 1.3;
const TAU_SQ: f64 = 0.2;
const PHI: f64 = 5.0;
const BETA: [f64; 2] = [0.7, -0.4];

/// Model holding `copies` identical posterior draws at known parameters.
fn fixed_model(kind: ModelKind, d: &SpatialDataset, w: &[f64], copies: usize, m: usize) -> FittedModel {
    let ord = order_locations(&d.coords, &OrderStrategy::FirstCoord).unwrap();
    let graph = build_neighbor_graph(&d.coords, &ord, m, SearchKind::Codebook).unwrap();
    let mut beta = DrawMatrix::with_cols(2);
    let mut theta = DrawMatrix::with_cols(3);
    let mut wm = DrawMatrix::with_cols(d.len());
    for _ in 0..copies {
        beta.push(&BETA);
        theta.push(&[SIGMA_SQ, TAU_SQ, PHI]);
        if !w.is_empty() {
            wm.push(w);
        }
    }
    let samples = PosteriorSamples {
        beta_names: d.covariate_names.clone(),
        beta,
        theta_names: vec!["sigma.sq".into(), "tau.sq".into(), "phi".into()],
        theta,
        w: (kind == ModelKind::Latent).then_some(wm),
        omega: None,
        acceptance: Acceptance::default(),
    };
    FittedModel::Mcmc(McmcModel { kind, family: CovFamily::Exponential, data: d.clone(), graph: Some(graph), samples })
}

fn sites() -> PredictionSet {
    let coords = nngp::Coordinates::new(vec![[0.41, 0.37], [0.05, 0.93], [40.0, 40.0]]).unwrap();
    PredictionSet { coords, x: vec![1.0, 0.3, 1.0, -1.2, 1.0, 0.0], p: 2, trials: None }
}

/// Recovers `(mean, sd)` from two draws `mean + sd z_k` with known `z_k`.
fn solve_location_scale(v: [f64; 2], z: [f64; 2]) -> (f64, f64) {
    let sd = (v[0] - v[1]) / (z[0] - z[1]);
    (v[0] - sd * z[0], sd)
}

#[test]
fn response_prediction_is_dense_kriging_with_full_neighbors() {
    let d = simulate_gp_dataset(&SimulationConfig::standard(60, 31)).unwrap().train;
    let model = fixed_model(ModelKind::Response, &d, &[], 2, d.len());
    let new = sites();
    let out = predict(&model, &new, &SubSample::default(), 77).unwrap();
    let draws = out.y.draws.unwrap();

    let n = d.len();
    let k = exp_cov_matrix(d.coords.points(), SIGMA_SQ, PHI, TAU_SQ);
    let l = cholesky(&k, n);
    let resid: Vec<f64> = (0..n).map(|i| d.y[i] - dot(d.row(i), &BETA)).collect();
    for i in 0..new.len() {
        let mut rng = stream_rng(77, i as u64);
        let z = [standard_normal(&mut rng), standard_normal(&mut rng)];
        let (mean, sd) = solve_location_scale([draws.get(0, i), draws.get(1, i)], z);
        let k0 = exp_cov_vector(d.coords.points(), new.coords.point(i), SIGMA_SQ, PHI);
        let a = chol_solve(&l, n, &k0);
        let want_mean = dot(new.row(i), &BETA) + dot(&a, &resid);
        let want_var = SIGMA_SQ + TAU_SQ - dot(&a, &k0);
        assert!(rel_err(mean, want_mean) < 1e-8, "site {i}: {mean} vs {want_mean}");
        assert!(rel_err(sd * sd, want_var) < 1e-8, "site {i}: {} vs {want_var}", sd * sd);
    }
}

#[test]
fn latent_prediction_is_dense_kriging_of_w() {
    let sim = simulate_gp_dataset(&SimulationConfig::standard(50, 32)).unwrap();
    let d = sim.train;
    let model = fixed_model(ModelKind::Latent, &d, &sim.w, 2, d.len());
    let new = sites();
    let out = predict(&model, &new, &SubSample::default(), 78).unwrap();
    let wd = out.w.unwrap().draws.unwrap();
    let yd = out.y.draws.unwrap();

    let n = d.len();
    let k = exp_cov_matrix(d.coords.points(), SIGMA_SQ, PHI, 0.0);
    let l = cholesky(&k, n);
    for i in 0..new.len() {
        // per draw: w0 noise, then y0 noise
        let mut rng = stream_rng(78, i as u64);
        let z: Vec<f64> = (0..4).map(|_| standard_normal(&mut rng)).collect();
        let (mean, sd) = solve_location_scale([wd.get(0, i), wd.get(1, i)], [z[0], z[2]]);
        let k0 = exp_cov_vector(d.coords.points(), new.coords.point(i), SIGMA_SQ, PHI);
        let a = chol_solve(&l, n, &k0);
        let want_mean = dot(&a, &sim.w);
        let want_var = SIGMA_SQ - dot(&a, &k0);
        assert!((mean - want_mean).abs() < 1e-8 * (1.0 + want_mean.abs()), "site {i}");
        assert!(rel_err(sd * sd, want_var) < 1e-8, "site {i}");
        let y_noise = yd.get(0, i) - dot(new.row(i), &BETA) - wd.get(0, i);
        assert!((y_noise - TAU_SQ.sqrt() * z[1]).abs() < 1e-12);
    }
    // far from every observation the latent process reverts to its prior
    let far = 2;
    let mut rng = stream_rng(78, far as u64);
    let z: Vec<f64> = (0..4).map(|_| standard_normal(&mut rng)).collect();
    let (mean, sd) = solve_location_scale([wd.get(0, far), wd.get(1, far)], [z[0], z[2]]);
    assert!(mean.abs() < 1e-12);
    assert!(rel_err(sd * sd, SIGMA_SQ) < 1e-12);
}

#[test]
fn latent_replicates_add_independent_nugget_noise() {
    let sim = simulate_gp_dataset(&SimulationConfig::standard(200, 33)).unwrap();
    let d = sim.train;
    let copies = 200;
    let model = fixed_model(ModelKind::Latent, &d, &sim.w, copies, 10);
    let reps = replicate_data(&model, &SubSample::default(), 0, 5).unwrap();
    assert_eq!((reps.rows, reps.cols), (copies, d.len()));
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for r in 0..copies {
        for i in 0..d.len() {
            let e = (reps.get(r, i) - dot(d.row(i), &BETA) - sim.w[i]) / TAU_SQ.sqrt();
            sum += e;
            sum_sq += e * e;
        }
    }
    let k = (copies * d.len()) as f64;
    let mean = sum / k;
    let var = sum_sq / k - mean * mean;
    assert!(mean.abs() < 4.0 / k.sqrt());
    assert!((var - 1.0).abs() < 4.0 * (2.0 / k).sqrt());
}

#[test]
fn response_replicates_are_joint_nngp_draws() {
    let d = simulate_gp_dataset(&SimulationConfig::standard(40, 34)).unwrap().train;
    let copies = 4000;
    let model = fixed_model(ModelKind::Response, &d, &[], copies, d.len() - 1);
    let reps = replicate_data(&model, &SubSample::default(), 0, 6).unwrap();
    // the covariance between the two closest sites is far from zero
    let (mut bi, mut bj, mut best) = (0, 1, f64::INFINITY);
    for i in 0..d.len() {
        for j in 0..i {
            let dd = d.coords.distance(i, j);
            if dd < best {
                (bi, bj, best) = (i, j, dd);
            }
        }
    }
    let mi = dot(d.row(bi), &BETA);
    let mj = dot(d.row(bj), &BETA);
    let cov = (0..copies).map(|r| (reps.get(r, bi) - mi) * (reps.get(r, bj) - mj)).sum::<f64>() / copies as f64;
    let want = SIGMA_SQ * (-PHI * best).exp();
    let se = (SIGMA_SQ + TAU_SQ) / (copies as f64).sqrt() * 1.5;
    assert!((cov - want).abs() < 4.0 * se, "{cov} vs {want}");
}

#[test]
fn fitted_values_summarise_linear_predictor() {
    let sim = simulate_gp_dataset(&SimulationConfig::standard(30, 35)).unwrap();
    let d = sim.train;
    let model = fixed_model(ModelKind::Latent, &d, &sim.w, 3, 5);
    let f = fitted_values(&model, &SubSample::default()).unwrap();
    for i in 0..d.len() {
        let want = dot(d.row(i), &BETA) + sim.w[i];
        assert!((f.values.mean[i] - want).abs() < 1e-12);
        assert!((f.values.quantiles[i][0] - want).abs() < 1e-12);
    }
    assert!(f.probability.is_none());
}

#[test]
fn prediction_design_width_is_checked() {
    let d = simulate_gp_dataset(&SimulationConfig::standard(20, 36)).unwrap().train;
    let model = fixed_model(ModelKind::Response, &d, &[], 1, 5);
    let coords = nngp::Coordinates::new(vec![[0.5, 0.5]]).unwrap();
    let bad = PredictionSet { coords, x: vec![1.0, 2.0, 3.0], p: 3, trials: None };
    assert!(predict(&model, &bad, &SubSample::default(), 1).is_err());
}
