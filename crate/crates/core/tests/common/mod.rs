//! Dense reference computations written independently of the library.
#![allow(dead_code)]

/// Lower Cholesky factor of a row-major SPD matrix.
pub fn cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                assert!(s > 0.0, "matrix not positive definite at {i}");
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    l
}

/// Solves `L L^T x = b`.
pub fn chol_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut z = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            z[i] -= l[i * n + k] * z[k];
        }
        z[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            z[i] -= l[k * n + i] * z[k];
        }
        z[i] /= l[i * n + i];
    }
    z
}

pub fn chol_log_det(l: &[f64], n: usize) -> f64 {
    (0..n).map(|i| 2.0 * l[i * n + i].ln()).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// `sigma_sq exp(-phi d)` between points, plus `nugget` on the diagonal.
pub fn exp_cov_matrix(pts: &[[f64; 2]], sigma_sq: f64, phi: f64, nugget: f64) -> Vec<f64> {
    let n = pts.len();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            k[i * n + j] = sigma_sq * (-phi * dist(pts[i], pts[j])).exp();
        }
        k[i * n + i] += nugget;
    }
    k
}

pub fn exp_cov_vector(pts: &[[f64; 2]], s0: [f64; 2], sigma_sq: f64, phi: f64) -> Vec<f64> {
    pts.iter().map(|p| sigma_sq * (-phi * dist(*p, s0)).exp()).collect()
}

/// `log N(r | 0, K)`.
pub fn gaussian_log_density(k: &[f64], n: usize, r: &[f64]) -> f64 {
    let l = cholesky(k, n);
    let q = dot(r, &chol_solve(&l, n, r));
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + chol_log_det(&l, n) + q)
}

/// Dense conjugate model with flat beta prior: `(beta_hat, P, a*, b*)`.
pub struct DenseNig {
    pub beta: Vec<f64>,
    pub precision: Vec<f64>,
    pub a: f64,
    pub b: f64,
}

pub fn dense_nig(k: &[f64], n: usize, x: &[f64], p: usize, y: &[f64], a0: f64, b0: f64) -> DenseNig {
    let l = cholesky(k, n);
    let cols: Vec<Vec<f64>> = (0..p).map(|c| (0..n).map(|i| x[i * p + c]).collect()).collect();
    let kix: Vec<Vec<f64>> = cols.iter().map(|c| chol_solve(&l, n, c)).collect();
    let kiy = chol_solve(&l, n, y);
    let mut prec = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for a in 0..p {
        rhs[a] = dot(&cols[a], &kiy);
        for b in 0..p {
            prec[a * p + b] = dot(&cols[a], &kix[b]);
        }
    }
    let lp = cholesky(&prec, p);
    let beta = chol_solve(&lp, p, &rhs);
    let q = dot(y, &kiy) - dot(&beta, &rhs);
    DenseNig { beta, precision: prec, a: a0 + 0.5 * n as f64, b: b0 + 0.5 * q }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}
