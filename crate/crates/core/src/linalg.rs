//! Small dense symmetric positive-definite solves.
//!
//! Matrices are square, row-major, and only the lower triangle is read. These
//! routines back the m x m neighbor systems, the p x p regression systems and
//! the dense reference computations.

use crate::scalar::Scalar;

/// In-place lower Cholesky factor of a `k x k` row-major matrix.
///
/// On success the lower triangle holds `L` with `A = L L^T`; the strict upper
/// triangle is left untouched. On failure returns the pivot index that was
/// not positive.
pub fn cholesky_in_place<T: Scalar>(a: &mut [T], k: usize) -> Result<(), usize> {
    debug_assert!(a.len() >= k * k);
    for j in 0..k {
        let mut d = a[j * k + j];
        for c in 0..j {
            let l = a[j * k + c];
            d = d - l * l;
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(j);
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in (j + 1)..k {
            let mut s = a[i * k + j];
            for c in 0..j {
                s = s - a[i * k + c] * a[j * k + c];
            }
            a[i * k + j] = s / d;
        }
    }
    Ok(())
}

/// Solves `L x = b` in place, `L` the lower factor from [`cholesky_in_place`].
pub fn forward_substitute<T: Scalar>(l: &[T], k: usize, b: &mut [T]) {
    for i in 0..k {
        let mut s = b[i];
        for c in 0..i {
            s = s - l[i * k + c] * b[c];
        }
        b[i] = s / l[i * k + i];
    }
}

/// Solves `L^T x = b` in place.
pub fn backward_substitute<T: Scalar>(l: &[T], k: usize, b: &mut [T]) {
    for i in (0..k).rev() {
        let mut s = b[i];
        for r in (i + 1)..k {
            s = s - l[r * k + i] * b[r];
        }
        b[i] = s / l[i * k + i];
    }
}

/// Solves `A x = b` in place given the Cholesky factor of `A`.
pub fn cholesky_solve<T: Scalar>(l: &[T], k: usize, b: &mut [T]) {
    forward_substitute(l, k, b);
    backward_substitute(l, k, b);
}

/// `log det A` from its Cholesky factor.
pub fn cholesky_log_det<T: Scalar>(l: &[T], k: usize) -> T {
    let two = T::one() + T::one();
    (0..k).map(|i| two * l[i * k + i].ln()).sum()
}

/// Dense inverse of `A` (full symmetric matrix) from its Cholesky factor.
pub fn cholesky_inverse<T: Scalar>(l: &[T], k: usize) -> Vec<T> {
    let mut inv = vec![T::zero(); k * k];
    let mut col = vec![T::zero(); k];
    for j in 0..k {
        col.iter_mut().for_each(|c| *c = T::zero());
        col[j] = T::one();
        cholesky_solve(l, k, &mut col);
        for i in 0..k {
            inv[i * k + j] = col[i];
        }
    }
    inv
}

/// Owned Cholesky factorization of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    factor: Vec<T>,
    dim: usize,
}

impl<T: Scalar> Cholesky<T> {
    /// Factors a full row-major `k x k` matrix. Returns the failing pivot on error.
    pub fn new(mut a: Vec<T>, k: usize) -> Result<Self, usize> {
        assert_eq!(a.len(), k * k, "matrix buffer must be k x k");
        cholesky_in_place(&mut a, k)?;
        for i in 0..k {
            for j in (i + 1)..k {
                a[i * k + j] = T::zero();
            }
        }
        Ok(Self { factor: a, dim: k })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major lower factor `L`.
    pub fn lower(&self) -> &[T] {
        &self.factor
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        cholesky_solve(&self.factor, self.dim, &mut x);
        x
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        cholesky_solve(&self.factor, self.dim, b);
    }

    pub fn log_det(&self) -> T {
        cholesky_log_det(&self.factor, self.dim)
    }

    pub fn inverse(&self) -> Vec<T> {
        cholesky_inverse(&self.factor, self.dim)
    }

    /// `L z`, mapping standard normals to draws with covariance `A`.
    pub fn lower_mul(&self, z: &[T]) -> Vec<T> {
        let k = self.dim;
        (0..k).map(|i| (0..=i).map(|c| self.factor[i * k + c] * z[c]).sum()).collect()
    }

    /// `L^{-T} z`, mapping standard normals to draws with covariance `A^{-1}`.
    pub fn upper_inv_mul(&self, z: &[T]) -> Vec<T> {
        let mut x = z.to_vec();
        backward_substitute(&self.factor, self.dim, &mut x);
        x
    }
}

/// Inner product.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spd3() -> Vec<f64> {
        vec![4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0]
    }

    #[test]
    fn factor_reconstructs_matrix() {
        let a = spd3();
        let chol = Cholesky::new(a.clone(), 3).unwrap();
        let l = chol.lower();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|c| l[i * 3 + c] * l[j * 3 + c]).sum();
                assert_relative_eq!(v, a[i * 3 + j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn solve_and_inverse_agree() {
        let a = spd3();
        let chol = Cholesky::new(a.clone(), 3).unwrap();
        let b = [1.0, -2.0, 0.5];
        let x = chol.solve(&b);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert_relative_eq!(ax, b[i], epsilon = 1e-12);
        }
        let inv = chol.inverse();
        for i in 0..3 {
            let xi: f64 = (0..3).map(|j| inv[i * 3 + j] * b[j]).sum();
            assert_relative_eq!(xi, x[i], epsilon = 1e-12);
        }
        // det = 4(15-1) - 2(6-0.4) + 0.4(2-2) = 44.8
        assert_relative_eq!(chol.log_det(), 44.8f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn indefinite_reports_pivot() {
        let a = vec![1.0, 2.0, 2.0, 1.0];
        assert_eq!(Cholesky::new(a, 2).unwrap_err(), 1);
    }

    #[test]
    fn works_in_single_precision() {
        let a: Vec<f32> = spd3().into_iter().map(|v| v as f32).collect();
        let chol = Cholesky::new(a, 3).unwrap();
        assert!((chol.log_det() - 44.8f32.ln()).abs() < 1e-5);
    }
}
