//! Storage for MCMC draws and sub-sample selection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid sub-sample start={start} end={end} thin={thin} for {n_samples} samples")]
pub struct SubSampleError {
    pub start: usize,
    pub end: usize,
    pub thin: usize,
    pub n_samples: usize,
}

/// Row-per-draw matrix.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DrawMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DrawMatrix {
    pub fn with_cols(cols: usize) -> Self {
        Self { rows: 0, cols, data: Vec::new() }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn push(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
        self.rows += 1;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Keeps only the listed rows.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut out = Self::with_cols(self.cols);
        for &r in rows {
            out.push(self.row(r));
        }
        out
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (a, &v) in m.iter_mut().zip(self.row(r)) {
                *a += v;
            }
        }
        m.iter_mut().for_each(|a| *a /= self.rows.max(1) as f64);
        m
    }

    /// 2.5%, 50% and 97.5% quantiles of every column.
    pub fn column_quantiles(&self) -> Vec<[f64; 3]> {
        (0..self.cols)
            .map(|c| {
                let mut v = self.column(c);
                v.sort_by(f64::total_cmp);
                [quantile_sorted(&v, 0.025), quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.975)]
            })
            .collect()
    }
}

/// Linear-interpolation quantile (type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 1-based inclusive draw selector `start..=end` every `thin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubSample {
    pub start: usize,
    pub end: Option<usize>,
    pub thin: usize,
}

impl Default for SubSample {
    fn default() -> Self {
        Self { start: 1, end: None, thin: 1 }
    }
}

impl SubSample {
    pub fn new(start: usize, end: Option<usize>, thin: usize) -> Self {
        Self { start, end, thin }
    }

    /// 0-based draw indices, validated against the chain length.
    pub fn indices(&self, n_samples: usize) -> Result<Vec<usize>, SubSampleError> {
        let end = self.end.unwrap_or(n_samples);
        if self.start < 1 || self.start > end || end > n_samples || self.thin < 1 {
            return Err(SubSampleError { start: self.start, end, thin: self.thin, n_samples });
        }
        Ok((self.start - 1..end).step_by(self.thin).collect())
    }
}

/// Metropolis-Hastings acceptance bookkeeping.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub accepted: u64,
    pub attempted: u64,
    /// Acceptance rate of each completed report interval.
    pub intervals: Vec<f64>,
    #[serde(skip)]
    interval_accepted: u64,
    #[serde(skip)]
    interval_attempted: u64,
}

impl Acceptance {
    pub fn record(&mut self, accepted: bool) {
        self.attempted += 1;
        self.interval_attempted += 1;
        if accepted {
            self.accepted += 1;
            self.interval_accepted += 1;
        }
    }

    /// Closes the current report interval and returns its rate.
    pub fn close_interval(&mut self) -> f64 {
        let rate = ratio(self.interval_accepted, self.interval_attempted);
        self.intervals.push(rate);
        self.interval_accepted = 0;
        self.interval_attempted = 0;
        rate
    }

    pub fn overall(&self) -> f64 {
        ratio(self.accepted, self.attempted)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Draws from one MCMC run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub beta_names: Vec<String>,
    pub beta: DrawMatrix,
    pub theta_names: Vec<String>,
    pub theta: DrawMatrix,
    /// Latent effects in original data order.
    pub w: Option<DrawMatrix>,
    /// Polya-Gamma auxiliaries in original data order.
    pub omega: Option<DrawMatrix>,
    pub acceptance: Acceptance,
}

impl PosteriorSamples {
    pub fn n_samples(&self) -> usize {
        self.beta.rows
    }

    pub fn theta_index(&self, name: &str) -> Option<usize> {
        self.theta_names.iter().position(|n| n == name)
    }

    /// Column of a named covariance parameter (`sigma.sq`, `tau.sq`, `phi`, `nu`).
    pub fn theta_column(&self, name: &str) -> Option<Vec<f64>> {
        self.theta_index(name).map(|c| self.theta.column(c))
    }

    /// Header and rows of the combined beta/theta table.
    pub fn table(&self) -> (Vec<String>, DrawMatrix) {
        let names: Vec<String> = self.beta_names.iter().chain(&self.theta_names).cloned().collect();
        let mut out = DrawMatrix::with_cols(names.len());
        for r in 0..self.n_samples() {
            let row: Vec<f64> = self.beta.row(r).iter().chain(self.theta.row(r)).copied().collect();
            out.push(&row);
        }
        (names, out)
    }
}
