//! Proper scoring rules and interval summaries for predictive distributions.

use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};
use statrs::function::beta::ln_beta;

/// Largest degrees of freedom at which the exact Student-t CRPS is used.
pub const T_CRPS_EXACT_MAX_DF: f64 = 30.0;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// CRPS of `N(mu, sigma^2)` at observation `y`; zero spread degenerates to `|y - mu|`.
pub fn crps_gaussian(mu: f64, sigma: f64, y: f64) -> f64 {
    if sigma <= 0.0 {
        return (y - mu).abs();
    }
    let z = (y - mu) / sigma;
    let n = std_normal();
    sigma * (z * (2.0 * n.cdf(z) - 1.0) + 2.0 * n.pdf(z) - std::f64::consts::PI.sqrt().recip())
}

/// CRPS of a location-scale Student t with `df` degrees of freedom.
///
/// Exact for `df <= 30`, Gaussian approximation above. Infinite for `df <= 1`.
pub fn crps_t(location: f64, scale: f64, df: f64, y: f64) -> f64 {
    if df <= 1.0 {
        return f64::INFINITY;
    }
    if df > T_CRPS_EXACT_MAX_DF {
        let sd = scale * (df / (df - 2.0)).sqrt();
        return crps_gaussian(location, sd, y);
    }
    if scale <= 0.0 {
        return (y - location).abs();
    }
    let z = (y - location) / scale;
    let t = StudentsT::new(0.0, 1.0, df).expect("valid t");
    let lead = z * (2.0 * t.cdf(z) - 1.0) + 2.0 * t.pdf(z) * (df + z * z) / (df - 1.0);
    let ln_const = 0.5 * df.ln() + ln_beta(0.5, df - 0.5) - (df - 1.0).ln() - 2.0 * ln_beta(0.5, 0.5 * df);
    scale * (lead - 2.0 * ln_const.exp())
}

/// Root mean squared prediction error.
pub fn rmspe(pred: &[f64], y: &[f64]) -> f64 {
    assert_eq!(pred.len(), y.len(), "prediction and observation lengths differ");
    let s: f64 = pred.iter().zip(y).map(|(p, o)| (p - o).powi(2)).sum();
    (s / y.len() as f64).sqrt()
}

/// Percentage of intervals containing the observation and the mean interval width.
pub fn coverage_width(intervals: &[(f64, f64)], y: &[f64]) -> (f64, f64) {
    assert_eq!(intervals.len(), y.len(), "interval and observation lengths differ");
    let n = y.len() as f64;
    let hits = intervals.iter().zip(y).filter(|((lo, hi), v)| lo <= *v && *v <= hi).count();
    let width: f64 = intervals.iter().map(|(lo, hi)| hi - lo).sum();
    (100.0 * hits as f64 / n, width / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StudentT};

    #[test]
    fn gaussian_crps_at_center() {
        let v = crps_gaussian(0.0, 1.0, 0.0);
        assert!((v - (2.0 / (2.0 * std::f64::consts::PI).sqrt() - 1.0 / std::f64::consts::PI.sqrt())).abs() < 1e-14);
        assert!((v - 0.23370).abs() < 1e-5);
        assert!(crps_gaussian(1.0, 1e-12, 1.0) < 1e-11);
    }

    #[test]
    fn t_crps_matches_energy_form() {
        // CRPS = E|X - y| - E|X - X'| / 2, estimated by Monte Carlo.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(df, y) in &[(3.0, 0.4), (7.5, -2.0), (25.0, 1.0)] {
            let t = StudentT::new(df).unwrap();
            let k = 200_000;
            let mut a = 0.0;
            let mut b = 0.0;
            for _ in 0..k {
                let x1: f64 = t.sample(&mut rng);
                let x2: f64 = t.sample(&mut rng);
                a += (x1 - y).abs();
                b += (x1 - x2).abs();
            }
            let mc = a / k as f64 - 0.5 * b / k as f64;
            let exact = crps_t(0.0, 1.0, df, y);
            assert!((mc - exact).abs() < 0.01, "df={df}: {mc} vs {exact}");
        }
    }

    #[test]
    fn t_crps_scales_with_scale() {
        let a = crps_t(1.0, 2.0, 5.0, 2.0);
        let b = 2.0 * crps_t(0.0, 1.0, 5.0, 0.5);
        assert!((a - b).abs() < 1e-13);
    }

    #[test]
    fn rmspe_and_coverage() {
        assert_eq!(rmspe(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((rmspe(&[0.0, 0.0], &[3.0, 4.0]) - 12.5f64.sqrt()).abs() < 1e-15);
        let (c, w) = coverage_width(&[(0.0, 1.0), (0.0, 2.0)], &[0.5, 3.0]);
        assert_eq!(c, 50.0);
        assert_eq!(w, 1.5);
    }
}
