//! Sparse NNGP factorization.
//!
//! For ordered location `i` with neighbor set `N(i)` the kriging weights
//! `B_i = K(i, N) K(N, N)^{-1}` and conditional variance
//! `F_i = K(i, i) - B_i K(N, i)` define `K~^{-1} = (I - B)^T F^{-1} (I - B)`.
//! Log-determinants and quadratic forms then cost `O(n m)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariance::{correlation_unchecked, CovFamily, CovarianceSpec};
use crate::geo::{distance, Coordinates, NeighborGraph};
use crate::linalg::{backward_substitute, cholesky_in_place, forward_substitute};
use crate::scalar::Scalar;

/// Rows per task in parallel reductions. Fixed so sums do not depend on the
/// thread count.
const REDUCE_CHUNK: usize = 2048;

/// Relative diagonal jitter for near-singular neighbor systems.
const JITTER: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("neighbor kernel system for ordered location {row} is singular even after jitter")]
    Singular { row: usize },
    #[error("vector length {got} does not match {expected} locations")]
    Length { expected: usize, got: usize },
}

/// Which covariance the factorization approximates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// `C(theta)`: spatial process only.
    Latent,
    /// `C(theta) + tau^2 I`.
    Response,
    /// `R(phi) + alpha I`.
    Conjugate,
}

/// Stationary kernel `scale * rho(d)` between distinct observations and
/// `scale + nugget` on the diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel<T> {
    pub family: CovFamily,
    pub phi: T,
    pub nu: T,
    pub scale: T,
    pub nugget: T,
}

impl<T: Scalar> Kernel<T> {
    pub fn new(spec: &CovarianceSpec<T>, kind: KernelKind) -> Self {
        let (scale, nugget) = match kind {
            KernelKind::Latent => (spec.sigma_sq, T::zero()),
            KernelKind::Response => (spec.sigma_sq, spec.tau_sq),
            KernelKind::Conjugate => (T::one(), spec.alpha()),
        };
        Self { family: spec.family, phi: spec.phi, nu: spec.nu, scale, nugget }
    }

    /// Unit-variance correlation kernel.
    pub fn correlation(family: CovFamily, phi: T, nu: T) -> Self {
        Self { family, phi, nu, scale: T::one(), nugget: T::zero() }
    }

    #[inline]
    pub fn cross(&self, a: [T; 2], b: [T; 2]) -> T {
        self.scale * correlation_unchecked(self.family, self.phi, self.nu, distance(a, b))
    }

    #[inline]
    pub fn diag(&self) -> T {
        self.scale + self.nugget
    }
}

/// Kriging weights and conditional variance of `target` given `neighbors`
/// under `kernel`. `weights` must have `neighbors.len()` slots; `work` is
/// resized as needed.
pub fn solve_kriging_row<T: Scalar>(
    kernel: &Kernel<T>,
    target: [T; 2],
    neighbors: &[[T; 2]],
    weights: &mut [T],
    work: &mut Vec<T>,
) -> Option<T> {
    let k = neighbors.len();
    if k == 0 {
        return Some(kernel.diag());
    }
    work.resize(k * k, T::zero());
    for jitter in [T::zero(), T::of(JITTER)] {
        let diag = kernel.diag() * (T::one() + jitter);
        for a in 0..k {
            work[a * k + a] = diag;
            for b in 0..a {
                work[a * k + b] = kernel.cross(neighbors[a], neighbors[b]);
            }
            weights[a] = kernel.cross(target, neighbors[a]);
        }
        if cholesky_in_place(work, k).is_err() {
            continue;
        }
        // F = K(i,i) - k^T K_NN^{-1} k = K(i,i) - |L^{-1} k|^2
        forward_substitute(work, k, weights);
        let f = diag - weights.iter().map(|&h| h * h).sum::<T>();
        backward_substitute(work, k, weights);
        if f > T::zero() && f.is_finite() {
            return Some(f);
        }
    }
    None
}

/// Per-location kriging weights `B` (aligned with the graph's CRS entries)
/// and conditional variances `F`.
#[derive(Debug, Clone, PartialEq)]
pub struct NngpFactors<T> {
    b: Vec<T>,
    f: Vec<T>,
    row_offsets: Vec<usize>,
    entries: Vec<usize>,
}

/// Builds the factors of `kernel` over ordered coordinates.
pub fn compute_factors<T: Scalar>(
    graph: &NeighborGraph,
    ordered: &Coordinates<T>,
    kernel: &Kernel<T>,
) -> Result<NngpFactors<T>, FactorError> {
    let mut factors = NngpFactors {
        b: vec![T::zero(); graph.entries().len()],
        f: vec![T::zero(); graph.len()],
        row_offsets: graph.row_offsets().to_vec(),
        entries: graph.entries().to_vec(),
    };
    factors.recompute(graph, ordered, kernel)?;
    Ok(factors)
}

impl<T: Scalar> NngpFactors<T> {
    /// Recomputes every row in place for a new kernel on the same graph.
    pub fn recompute(
        &mut self,
        graph: &NeighborGraph,
        ordered: &Coordinates<T>,
        kernel: &Kernel<T>,
    ) -> Result<(), FactorError> {
        let n = graph.len();
        if ordered.len() != n {
            return Err(FactorError::Length { expected: n, got: ordered.len() });
        }
        let pts = ordered.points();
        let mut rows: Vec<&mut [T]> = Vec::with_capacity(n);
        let mut rest = self.b.as_mut_slice();
        for i in 0..n {
            let (head, tail) = rest.split_at_mut(graph.neighbors(i).len());
            rows.push(head);
            rest = tail;
        }
        rows.into_par_iter().zip(self.f.par_iter_mut()).enumerate().try_for_each_init(
            || (Vec::new(), Vec::new()),
            |(work, nbr_pts), (i, (row, fi))| {
                nbr_pts.clear();
                nbr_pts.extend(graph.neighbors(i).iter().map(|&j| pts[j]));
                match solve_kriging_row(kernel, pts[i], nbr_pts, row, work) {
                    Some(f) => {
                        *fi = f;
                        Ok(())
                    }
                    None => Err(FactorError::Singular { row: i }),
                }
            },
        )
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// Weights of row `i`, aligned with `graph.neighbors(i)`.
    pub fn weights(&self, i: usize) -> &[T] {
        &self.b[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    pub fn cond_var(&self) -> &[T] {
        &self.f
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.entries[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    /// `B_i u_{N(i)}`.
    #[inline]
    pub fn conditional_mean(&self, i: usize, u: &[T]) -> T {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        self.b[r.clone()].iter().zip(&self.entries[r]).map(|(&w, &j)| w * u[j]).sum()
    }

    fn check(&self, u: &[T]) -> Result<(), FactorError> {
        if u.len() != self.len() {
            return Err(FactorError::Length { expected: self.len(), got: u.len() });
        }
        Ok(())
    }

    fn chunked_sum(&self, term: impl Fn(usize) -> T + Sync) -> T {
        let n = self.len();
        let partial: Vec<T> = (0..n.div_ceil(REDUCE_CHUNK))
            .into_par_iter()
            .map(|c| (c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(n)).map(&term).sum())
            .collect();
        partial.into_iter().sum()
    }

    /// `log det K~ = sum_i log F_i`.
    pub fn log_determinant(&self) -> T {
        self.chunked_sum(|i| self.f[i].ln())
    }

    /// `u^T K~^{-1} v` via `(I - B)` and `F`.
    pub fn quadratic_form(&self, u: &[T], v: &[T]) -> Result<T, FactorError> {
        self.check(u)?;
        self.check(v)?;
        Ok(self.chunked_sum(|i| {
            let a = u[i] - self.conditional_mean(i, u);
            let b = v[i] - self.conditional_mean(i, v);
            a * b / self.f[i]
        }))
    }

    /// Whitened vector `F^{-1/2} (I - B) u`, so that
    /// `u^T K~^{-1} v = whiten(u) . whiten(v)`.
    pub fn whiten(&self, u: &[T]) -> Result<Vec<T>, FactorError> {
        self.check(u)?;
        let mut out = vec![T::zero(); u.len()];
        out.par_iter_mut().enumerate().for_each(|(i, o)| *o = (u[i] - self.conditional_mean(i, u)) / self.f[i].sqrt());
        Ok(out)
    }

    /// Gaussian log-density `log N(r | 0, K~)`.
    pub fn log_density(&self, residual: &[T]) -> Result<T, FactorError> {
        let q = self.quadratic_form(residual, residual)?;
        let n = T::of(self.len() as f64);
        let ln_2pi = T::of((2.0 * std::f64::consts::PI).ln());
        Ok(-T::of(0.5) * (n * ln_2pi + self.log_determinant() + q))
    }

    /// One exact draw from `N(0, K~)`: `z_i ~ N(B_i z_{N(i)}, F_i)` in order.
    pub fn sample_joint<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T>
    where
        StandardNormal: Distribution<T>,
    {
        let n = self.len();
        let mut z = vec![T::zero(); n];
        for i in 0..n {
            let e: T = StandardNormal.sample(rng);
            z[i] = self.conditional_mean(i, &z) + self.f[i].sqrt() * e;
        }
        z
    }

    /// Scales every conditional variance by `c` (covariance scaled by `c`).
    pub fn scaled(&self, c: T) -> Self {
        let mut out = self.clone();
        out.f.iter_mut().for_each(|f| *f = *f * c);
        out
    }

    /// Dense implied covariance `(I - B)^{-1} F (I - B)^{-T}`. Small `n` only.
    pub fn dense_covariance(&self) -> Vec<T> {
        let n = self.len();
        // columns of (I - B)^{-1}: solve unit lower-triangular systems
        let mut inv = vec![T::zero(); n * n];
        for c in 0..n {
            let mut col = vec![T::zero(); n];
            for i in 0..n {
                let e = if i == c { T::one() } else { T::zero() };
                col[i] = e + self.conditional_mean(i, &col);
            }
            for i in 0..n {
                inv[i * n + c] = col[i];
            }
        }
        let mut out = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let s: T = (0..=j).map(|k| inv[i * n + k] * self.f[k] * inv[j * n + k]).sum();
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{build_neighbor_graph, order_locations, OrderStrategy, Ordering, SearchKind};
    use crate::linalg::Cholesky;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, m: usize, seed: u64) -> (NeighborGraph, Coordinates<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = Coordinates::new((0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect()).unwrap();
        let ord = order_locations(&c, &OrderStrategy::FirstCoord).unwrap();
        let g = build_neighbor_graph(&c, &ord, m, SearchKind::Brute).unwrap();
        (g, c.permuted(&ord))
    }

    fn dense(c: &Coordinates<f64>, k: &Kernel<f64>) -> Vec<f64> {
        let n = c.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = if i == j { k.diag() } else { k.cross(c.point(i), c.point(j)) };
            }
        }
        out
    }

    fn spec() -> CovarianceSpec<f64> {
        CovarianceSpec::new(CovFamily::Exponential, 1.3, 6.0, 0.25)
    }

    #[test]
    fn single_location() {
        let c = Coordinates::new(vec![[0.3, 0.4]]).unwrap();
        let g = build_neighbor_graph(&c, &Ordering::identity(1), 5, SearchKind::Brute).unwrap();
        let k = Kernel::new(&spec(), KernelKind::Response);
        let f = compute_factors(&g, &c, &k).unwrap();
        assert!(f.weights(0).is_empty());
        assert_relative_eq!(f.cond_var()[0], 1.55);
        assert_relative_eq!(f.log_determinant(), 1.55f64.ln());
        assert_relative_eq!(f.log_density(&[0.0]).unwrap(), -0.5 * ((2.0 * std::f64::consts::PI).ln() + 1.55f64.ln()));
    }

    #[test]
    fn full_conditioning_reproduces_dense_covariance() {
        let (g, c) = setup(50, 49, 1);
        for kind in [KernelKind::Latent, KernelKind::Response, KernelKind::Conjugate] {
            let k = Kernel::new(&spec(), kind);
            let f = compute_factors(&g, &c, &k).unwrap();
            let implied = f.dense_covariance();
            let truth = dense(&c, &k);
            for (a, b) in implied.iter().zip(&truth) {
                assert!((a - b).abs() < 1e-8, "{kind:?}: {a} vs {b}");
            }
            let chol = Cholesky::new(truth, 50).unwrap();
            assert_relative_eq!(f.log_determinant(), chol.log_det(), max_relative = 1e-8);
        }
    }

    #[test]
    fn quadratic_form_matches_dense_solve() {
        let (g, c) = setup(50, 49, 2);
        let k = Kernel::new(&spec(), KernelKind::Response);
        let f = compute_factors(&g, &c, &k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..50).map(|_| rng.random::<f64>() - 0.5).collect();
        let v: Vec<f64> = (0..50).map(|_| rng.random::<f64>() - 0.5).collect();
        let chol = Cholesky::new(dense(&c, &k), 50).unwrap();
        let kv = chol.solve(&v);
        let expected: f64 = u.iter().zip(&kv).map(|(a, b)| a * b).sum();
        assert_relative_eq!(f.quadratic_form(&u, &v).unwrap(), expected, max_relative = 1e-8);
        let (wu, wv) = (f.whiten(&u).unwrap(), f.whiten(&v).unwrap());
        let via_whiten: f64 = wu.iter().zip(&wv).map(|(a, b)| a * b).sum();
        assert_relative_eq!(via_whiten, expected, max_relative = 1e-8);
        assert_eq!(f.quadratic_form(&vec![0.0; 50], &vec![0.0; 50]).unwrap(), 0.0);
    }

    #[test]
    fn independence_limit() {
        let (g, c) = setup(40, 5, 4);
        let spec = CovarianceSpec::new(CovFamily::Exponential, 2.0, 1e5, 0.1);
        let f = compute_factors(&g, &c, &Kernel::new(&spec, KernelKind::Response)).unwrap();
        for i in 0..40 {
            assert!(f.weights(i).iter().all(|w| w.abs() < 1e-12));
            assert_relative_eq!(f.cond_var()[i], 2.1, max_relative = 1e-12);
        }
        // far apart: log det is sum of marginal variances
        assert_relative_eq!(f.log_determinant(), 40.0 * 2.1f64.ln(), max_relative = 1e-12);
        let mut e1 = vec![0.0; 40];
        e1[0] = 1.0;
        assert_relative_eq!(f.quadratic_form(&e1, &e1).unwrap(), 1.0 / 2.1, max_relative = 1e-12);
    }

    #[test]
    fn scaling_homogeneity_of_latent_density() {
        let (g, c) = setup(30, 8, 5);
        let base = CovarianceSpec::new(CovFamily::Exponential, 1.0, 4.0, 0.0);
        let scaled = CovarianceSpec::new(CovFamily::Exponential, 3.0, 4.0, 0.0);
        let f1 = compute_factors(&g, &c, &Kernel::new(&base, KernelKind::Latent)).unwrap();
        let f3 = compute_factors(&g, &c, &Kernel::new(&scaled, KernelKind::Latent)).unwrap();
        let r: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).sin()).collect();
        let q1 = f1.quadratic_form(&r, &r).unwrap();
        let expected = f1.log_density(&r).unwrap() - 15.0 * 3.0f64.ln() + 0.5 * q1 * (1.0 - 1.0 / 3.0);
        assert_relative_eq!(f3.log_density(&r).unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn duplicate_locations_use_jitter() {
        let c = Coordinates::new(vec![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.5, 0.5]]).unwrap();
        let g = build_neighbor_graph(&c, &Ordering::identity(4), 3, SearchKind::Brute).unwrap();
        let k = Kernel::new(&spec(), KernelKind::Latent);
        let f = compute_factors(&g, &c, &k).unwrap();
        assert!(f.cond_var().iter().all(|&v| v > 0.0));
        // with a nugget duplicates are harmless
        let f = compute_factors(&g, &c, &Kernel::new(&spec(), KernelKind::Response)).unwrap();
        assert!(f.cond_var()[1] > 0.25);
    }

    #[test]
    fn recompute_is_bit_identical() {
        let (g, c) = setup(300, 10, 6);
        let k = Kernel::new(&spec(), KernelKind::Response);
        let a = compute_factors(&g, &c, &k).unwrap();
        let mut b = compute_factors(&g, &c, &Kernel::new(&spec().with_nu(1.0), KernelKind::Latent)).unwrap();
        b.recompute(&g, &c, &k).unwrap();
        assert_eq!(a, b);
        let r: Vec<f64> = (0..300).map(|i| (i as f64).cos()).collect();
        assert_eq!(a.log_density(&r).unwrap().to_bits(), b.log_density(&r).unwrap().to_bits());
    }

    #[test]
    fn joint_draws_are_reproducible_and_independent_at_m0_limit() {
        let (g, c) = setup(20, 3, 7);
        let f = compute_factors(&g, &c, &Kernel::new(&spec(), KernelKind::Response)).unwrap();
        let a = f.sample_joint(&mut ChaCha8Rng::seed_from_u64(9));
        let b = f.sample_joint(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let far = CovarianceSpec::new(CovFamily::Exponential, 1.0, 1e6, 0.0);
        let f = compute_factors(&g, &c, &Kernel::new(&far, KernelKind::Latent)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let draws: Vec<Vec<f64>> = (0..4000).map(|_| f.sample_joint(&mut rng)).collect();
        let cov01: f64 = draws.iter().map(|d| d[0] * d[1]).sum::<f64>() / 4000.0;
        assert!(cov01.abs() < 0.06);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let (g, c) = setup(10, 3, 8);
        let f = compute_factors(&g, &c, &Kernel::new(&spec(), KernelKind::Response)).unwrap();
        assert!(matches!(f.quadratic_form(&[0.0; 3], &[0.0; 10]), Err(FactorError::Length { .. })));
    }

    #[test]
    fn single_precision_factors() {
        let (g, c) = setup(30, 29, 12);
        let c32 = Coordinates::new(c.points().iter().map(|p| [p[0] as f32, p[1] as f32]).collect()).unwrap();
        let s32 = CovarianceSpec::new(CovFamily::Exponential, 1.3f32, 6.0, 0.25);
        let f32f = compute_factors(&g, &c32, &Kernel::new(&s32, KernelKind::Response)).unwrap();
        let f64f = compute_factors(&g, &c, &Kernel::new(&spec(), KernelKind::Response)).unwrap();
        assert!((f32f.log_determinant() as f64 - f64f.log_determinant()).abs() < 1e-3);
    }
}
