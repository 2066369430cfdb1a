mod common;

use common::{cholesky, exp_cov_matrix, gaussian_log_density, rel_err};
use nngp::covariance::{CovFamily, CovarianceSpec};
use nngp::data::{OrderedData, SpatialDataset};
use nngp::diagnostics::{crps_gaussian, crps_t, gpd, waic_from_loglik};
use nngp::factors::{compute_factors, Kernel, KernelKind};
use nngp::geo::{build_neighbor_graph, order_locations, OrderStrategy, SearchKind};
use nngp::samplers::sample_pg;
use nngp::samples::DrawMatrix;
use nngp::Coordinates;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn points(max: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((0.0..1.0f64, 0.0..1.0f64).prop_map(|(x, y)| [x, y]), 3..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn neighbor_sets_are_nearest_predecessors(pts in points(120), m in 1usize..12) {
        let coords = Coordinates::new(pts).unwrap();
        let ord = order_locations(&coords, &OrderStrategy::CoordSum).unwrap();
        let g = build_neighbor_graph(&coords, &ord, m, SearchKind::Codebook).unwrap();
        let b = build_neighbor_graph(&coords, &ord, m, SearchKind::Brute).unwrap();
        let oc = coords.permuted(&ord);
        for i in 0..coords.len() {
            let nb = g.neighbors(i);
            prop_assert_eq!(nb.len(), i.min(m));
            prop_assert!(nb.iter().all(|&j| j < i));
            let mut s = nb.to_vec();
            s.sort_unstable();
            s.dedup();
            prop_assert_eq!(s.len(), nb.len());
            // no excluded predecessor is strictly closer than the farthest neighbor
            let far = nb.iter().map(|&j| oc.distance(i, j)).fold(0.0, f64::max);
            prop_assert!((0..i).filter(|j| !nb.contains(j)).all(|j| oc.distance(i, j) >= far));
            let mut t = b.neighbors(i).to_vec();
            t.sort_unstable();
            prop_assert_eq!(s, t);
        }
    }

    #[test]
    fn reverse_index_transposes_rows(pts in points(80), m in 1usize..8) {
        let coords = Coordinates::new(pts).unwrap();
        let ord = order_locations(&coords, &OrderStrategy::FirstCoord).unwrap();
        let g = build_neighbor_graph(&coords, &ord, m, SearchKind::Codebook).unwrap();
        let mut count = 0;
        for i in 0..g.len() {
            for (j, slot) in g.reverse().dependents(i) {
                prop_assert_eq!(g.neighbors(j)[slot], i);
                count += 1;
            }
        }
        prop_assert_eq!(count, g.entries().len());
    }

    #[test]
    fn ordering_round_trips(pts in points(60)) {
        let coords = Coordinates::new(pts).unwrap();
        let ord = order_locations(&coords, &OrderStrategy::CoordSum).unwrap();
        let v: Vec<usize> = (0..coords.len()).collect();
        prop_assert_eq!(ord.to_original(&ord.to_ordered(&v)), v);
    }

    #[test]
    fn full_conditioning_log_density_is_exact(
        pts in points(40),
        phi in 0.5..20.0f64,
        sigma_sq in 0.2..5.0f64,
        tau_sq in 0.01..2.0f64,
        seed in any::<u64>(),
    ) {
        let coords = Coordinates::new(pts).unwrap();
        let n = coords.len();
        let ord = order_locations(&coords, &OrderStrategy::FirstCoord).unwrap();
        let g = build_neighbor_graph(&coords, &ord, n - 1, SearchKind::Codebook).unwrap();
        let oc = coords.permuted(&ord);
        let spec = CovarianceSpec::new(CovFamily::Exponential, sigma_sq, phi, tau_sq);
        let fac = compute_factors(&g, &oc, &Kernel::new(&spec, KernelKind::Response)).unwrap();
        let k = exp_cov_matrix(oc.points(), sigma_sq, phi, tau_sq);
        let r: Vec<f64> = fac.sample_joint(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(fac.cond_var().iter().all(|&f| f > 0.0));
        prop_assert!(rel_err(fac.log_density(&r).unwrap(), gaussian_log_density(&k, n, &r)) < 1e-8);
    }

    #[test]
    fn sparse_covariance_is_positive_definite(pts in points(40), phi in 0.5..30.0f64, m in 1usize..6) {
        let coords = Coordinates::new(pts).unwrap();
        let n = coords.len();
        let ord = order_locations(&coords, &OrderStrategy::CoordSum).unwrap();
        let g = build_neighbor_graph(&coords, &ord, m, SearchKind::Codebook).unwrap();
        let oc = coords.permuted(&ord);
        let kernel = Kernel::new(&CovarianceSpec::new(CovFamily::Exponential, 1.0, phi, 0.1), KernelKind::Response);
        let c = compute_factors(&g, &oc, &kernel).unwrap().dense_covariance();
        for i in 0..n {
            for j in 0..i {
                prop_assert!((c[i * n + j] - c[j * n + i]).abs() < 1e-9);
            }
        }
        let l = cholesky(&c, n);
        prop_assert!((0..n).all(|i| l[i * n + i] > 0.0));
    }

    #[test]
    fn crps_is_proper_and_equivariant(mu in -5.0..5.0f64, sigma in 0.05..5.0f64, y in -8.0..8.0f64, a in -3.0..3.0f64, b in 0.1..4.0f64) {
        let c = crps_gaussian(mu, sigma, y);
        prop_assert!(c > 0.0);
        prop_assert!(rel_err(crps_gaussian(a + b * mu, b * sigma, a + b * y), b * c) < 1e-9);
        // a forecast centred on the outcome scores better than one shifted away
        prop_assert!(crps_gaussian(y, sigma, y) <= c + 1e-12);
        prop_assert!(crps_t(mu, sigma, 8.0, y) > 0.0);
    }

    #[test]
    fn waic_identities_hold(rows in 2usize..30, cols in 1usize..20, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ll = DrawMatrix::with_cols(cols);
        for _ in 0..rows {
            let r: Vec<f64> = (0..cols).map(|_| -rng.random::<f64>() * 5.0).collect();
            ll.push(&r);
        }
        let w = waic_from_loglik(&ll);
        prop_assert!((w.waic1 + 2.0 * (w.lppd - w.p1)).abs() < 1e-9);
        prop_assert!((w.waic2 + 2.0 * (w.lppd - w.p2)).abs() < 1e-9);
        prop_assert!(w.p1 >= -1e-12 && w.p2 >= 0.0);
    }

    #[test]
    fn gpd_is_sum_of_fit_and_penalty(rows in 2usize..30, cols in 1usize..20, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut reps = DrawMatrix::with_cols(cols);
        for _ in 0..rows {
            let r: Vec<f64> = (0..cols).map(|_| rng.random::<f64>() * 3.0).collect();
            reps.push(&r);
        }
        let y: Vec<f64> = (0..cols).map(|_| rng.random::<f64>()).collect();
        let g = gpd(&reps, &y).unwrap();
        prop_assert!((g.d - g.g - g.p).abs() < 1e-9 * g.d.abs().max(1.0));
        prop_assert!(g.g >= 0.0 && g.p >= 0.0);
    }

    #[test]
    fn polya_gamma_draws_are_positive(b in 1u32..6, z in -10.0..10.0f64, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let x = sample_pg(b, z, &mut rng);
            prop_assert!(x.is_finite() && x > 0.0);
        }
    }

    #[test]
    fn ordered_data_is_a_permutation(pts in points(50), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = pts.len();
        let coords = Coordinates::new(pts).unwrap();
        let x: Vec<f64> = (0..n).flat_map(|_| [1.0, rng.random::<f64>()]).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let d = SpatialDataset::new(coords, x, 2, y.clone()).unwrap();
        let ord = order_locations(&d.coords, &OrderStrategy::CoordSum).unwrap();
        let od = OrderedData::new(&d, &ord);
        prop_assert_eq!(ord.to_original(&od.y), y);
        for k in 0..n {
            prop_assert_eq!(od.row(k), d.row(ord.perm()[k]));
        }
    }
}
