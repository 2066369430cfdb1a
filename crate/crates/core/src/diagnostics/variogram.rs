//! Classical (Matheron) empirical semivariogram and an exponential-model fit.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geo::{distance, Coordinates};

/// Default cap on the number of locations used.
pub const DEFAULT_VARIOGRAM_CAP: usize = 25_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramBin {
    /// Mean pair distance in the bin.
    pub distance: f64,
    pub semivariance: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VariogramError {
    #[error("max_dist must be positive, got {0}")]
    MaxDist(f64),
    #[error("at least two locations and one bin are required")]
    TooSmall,
    #[error("{0} residuals for {1} locations")]
    Length(usize, usize),
}

/// Binned `1/(2 N_h) sum (r_i - r_j)^2` over pairs at distance `< max_dist`,
/// using a random subset of at most `cap` locations.
pub fn empirical_semivariogram(
    coords: &Coordinates<f64>,
    residuals: &[f64],
    n_bins: usize,
    max_dist: f64,
    cap: usize,
    seed: u64,
) -> Result<Vec<VariogramBin>, VariogramError> {
    if !(max_dist > 0.0) {
        return Err(VariogramError::MaxDist(max_dist));
    }
    let n = coords.len();
    if n < 2 || n_bins == 0 {
        return Err(VariogramError::TooSmall);
    }
    if residuals.len() != n {
        return Err(VariogramError::Length(residuals.len(), n));
    }
    let idx: Vec<usize> = if n > cap {
        let mut v = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, cap).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).collect()
    };
    let width = max_dist / n_bins as f64;
    let partial = idx
        .par_iter()
        .enumerate()
        .fold(
            || (vec![0.0; n_bins], vec![0.0; n_bins], vec![0u64; n_bins]),
            |(mut sd, mut sg, mut sc), (a, &i)| {
                for &j in &idx[a + 1..] {
                    let d = distance(coords.point(i), coords.point(j));
                    if d < max_dist {
                        let b = ((d / width) as usize).min(n_bins - 1);
                        sd[b] += d;
                        sg[b] += 0.5 * (residuals[i] - residuals[j]).powi(2);
                        sc[b] += 1;
                    }
                }
                (sd, sg, sc)
            },
        )
        .collect::<Vec<_>>();
    let mut sd = vec![0.0; n_bins];
    let mut sg = vec![0.0; n_bins];
    let mut sc = vec![0u64; n_bins];
    for (d, g, c) in partial {
        for b in 0..n_bins {
            sd[b] += d[b];
            sg[b] += g[b];
            sc[b] += c[b];
        }
    }
    Ok((0..n_bins)
        .map(|b| {
            if sc[b] == 0 {
                VariogramBin { distance: (b as f64 + 0.5) * width, semivariance: f64::NAN, count: 0 }
            } else {
                VariogramBin { distance: sd[b] / sc[b] as f64, semivariance: sg[b] / sc[b] as f64, count: sc[b] }
            }
        })
        .collect())
}

/// `gamma(d) = nugget + partial_sill (1 - exp(-phi d))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariogramFit {
    pub nugget: f64,
    pub partial_sill: f64,
    pub phi: f64,
}

impl VariogramFit {
    pub fn sill(&self) -> f64 {
        self.nugget + self.partial_sill
    }

    pub fn at(&self, d: f64) -> f64 {
        self.nugget + self.partial_sill * (1.0 - (-self.phi * d).exp())
    }
}

/// Count-weighted least squares: profile over a log-spaced `phi` grid with the
/// two linear coefficients solved (and clamped non-negative) at each `phi`.
pub fn fit_exponential_variogram(bins: &[VariogramBin]) -> Option<VariogramFit> {
    let used: Vec<&VariogramBin> = bins.iter().filter(|b| b.count > 0 && b.semivariance.is_finite()).collect();
    if used.len() < 3 {
        return None;
    }
    let dmax = used.iter().map(|b| b.distance).fold(0.0, f64::max);
    let mut best: Option<(f64, VariogramFit)> = None;
    for k in 0..400 {
        let phi = 0.1 / dmax * (1e4f64).powf(k as f64 / 399.0);
        let (mut s11, mut s12, mut s22, mut r1, mut r2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for b in &used {
            let w = b.count as f64;
            let z = 1.0 - (-phi * b.distance).exp();
            s11 += w;
            s12 += w * z;
            s22 += w * z * z;
            r1 += w * b.semivariance;
            r2 += w * z * b.semivariance;
        }
        let det = s11 * s22 - s12 * s12;
        let candidates = if det.abs() > 1e-12 * s11 * s22 {
            let nug = (s22 * r1 - s12 * r2) / det;
            let ps = (s11 * r2 - s12 * r1) / det;
            vec![(nug, ps), (0.0, (r2 / s22).max(0.0)), ((r1 / s11).max(0.0), 0.0)]
        } else {
            vec![((r1 / s11).max(0.0), 0.0)]
        };
        for (nug, ps) in candidates {
            if nug < 0.0 || ps < 0.0 {
                continue;
            }
            let fit = VariogramFit { nugget: nug, partial_sill: ps, phi };
            let sse: f64 = used.iter().map(|b| b.count as f64 * (b.semivariance - fit.at(b.distance)).powi(2)).sum();
            if best.as_ref().is_none_or(|(s, _)| sse < *s) {
                best = Some((sse, fit));
            }
        }
    }
    best.map(|(_, f)| f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn white_noise_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 1500;
        let pts: Vec<[f64; 2]> = (0..n).map(|_| [rng.random(), rng.random()]).collect();
        let r: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                2.0 * z
            })
            .collect();
        let bins = empirical_semivariogram(&Coordinates::new(pts).unwrap(), &r, 8, 0.5, 25_000, 1).unwrap();
        for b in bins {
            assert!((b.semivariance - 4.0).abs() < 0.4, "{b:?}");
        }
    }

    #[test]
    fn duplicates_give_zero_first_bin() {
        let pts = vec![[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.0, 1.0]];
        let bins =
            empirical_semivariogram(&Coordinates::new(pts).unwrap(), &[1.0, 1.0, 3.0, 3.0], 4, 2.0, 10, 0).unwrap();
        assert_eq!(bins[0].semivariance, 0.0);
        assert_eq!(bins[0].distance, 0.0);
    }

    #[test]
    fn rejects_nonpositive_max_dist() {
        let c = Coordinates::new(vec![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(empirical_semivariogram(&c, &[0.0, 1.0], 3, 0.0, 10, 0), Err(VariogramError::MaxDist(0.0)));
    }

    #[test]
    fn exponential_fit_recovers_noise_free_curve() {
        let truth = VariogramFit { nugget: 0.25, partial_sill: 1.0, phi: 6.0 };
        let bins: Vec<VariogramBin> = (0..20)
            .map(|k| {
                let d = 0.025 + 0.05 * k as f64;
                VariogramBin { distance: d, semivariance: truth.at(d), count: 100 }
            })
            .collect();
        let fit = fit_exponential_variogram(&bins).unwrap();
        assert!((fit.nugget - 0.25).abs() < 0.02, "{fit:?}");
        assert!((fit.sill() - 1.25).abs() < 0.02, "{fit:?}");
    }
}
