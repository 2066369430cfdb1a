//! Spatial datasets and their ordered working copies.

use thiserror::Error;

use crate::geo::{Coordinates, GraphError, Ordering};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset has no rows")]
    Empty,
    #[error("design matrix has {got} entries, expected {rows} x {cols}")]
    DesignShape { rows: usize, cols: usize, got: usize },
    #[error("column `{column}` has {got} values, expected {expected}")]
    Length { column: String, expected: usize, got: usize },
    #[error("non-finite value in `{column}` at row {row}")]
    NonFinite { column: String, row: usize },
    #[error("observation {row} (0-based): successes {successes} outside 0..={trials}")]
    BinomialRange { row: usize, successes: f64, trials: u32 },
    #[error("observation {row} (0-based): binomial response must be a non-negative integer, got {value}")]
    NonInteger { row: usize, value: f64 },
    #[error("observation {row} (0-based): trial count must be a positive integer")]
    Trials { row: usize },
    #[error(transparent)]
    Coordinates(#[from] GraphError),
}

/// Observed data: locations, a row-major `n x p` design matrix, the
/// response and optional binomial trial counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialDataset {
    pub coords: Coordinates<f64>,
    pub x: Vec<f64>,
    pub p: usize,
    pub y: Vec<f64>,
    pub trials: Option<Vec<u32>>,
    pub covariate_names: Vec<String>,
}

impl SpatialDataset {
    pub fn new(coords: Coordinates<f64>, x: Vec<f64>, p: usize, y: Vec<f64>) -> Result<Self, DataError> {
        let n = coords.len();
        if n == 0 {
            return Err(DataError::Empty);
        }
        if x.len() != n * p {
            return Err(DataError::DesignShape { rows: n, cols: p, got: x.len() });
        }
        if y.len() != n {
            return Err(DataError::Length { column: "response".into(), expected: n, got: y.len() });
        }
        if let Some(row) = y.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { column: "response".into(), row });
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { column: "design".into(), row: k / p.max(1) });
        }
        let covariate_names = (0..p).map(|j| format!("x{j}")).collect();
        Ok(Self { coords, x, p, y, trials: None, covariate_names })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        assert_eq!(names.len(), self.p);
        self.covariate_names = names;
        self
    }

    /// Attaches binomial trial counts and checks `0 <= y <= trials`, `y` integral.
    pub fn with_trials(mut self, trials: Vec<u32>) -> Result<Self, DataError> {
        let n = self.len();
        if trials.len() != n {
            return Err(DataError::Length { column: "trials".into(), expected: n, got: trials.len() });
        }
        for (row, (&y, &t)) in self.y.iter().zip(&trials).enumerate() {
            if t == 0 {
                return Err(DataError::Trials { row });
            }
            if y.fract() != 0.0 {
                return Err(DataError::NonInteger { row, value: y });
            }
            if y < 0.0 || y > t as f64 {
                return Err(DataError::BinomialRange { row, successes: y, trials: t });
            }
        }
        self.trials = Some(trials);
        Ok(self)
    }

    /// Binomial view with every trial count defaulting to 1.
    pub fn as_binomial(&self) -> Result<Self, DataError> {
        match &self.trials {
            Some(t) => self.clone().with_trials(t.clone()),
            None => self.clone().with_trials(vec![1; self.len()]),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    /// Rows `idx` as a new dataset.
    pub fn subset(&self, idx: &[usize]) -> Result<Self, DataError> {
        let coords = Coordinates::new(idx.iter().map(|&i| self.coords.point(i)).collect())?;
        let x = idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        let y = idx.iter().map(|&i| self.y[i]).collect();
        let mut out = Self::new(coords, x, self.p, y)?.with_names(self.covariate_names.clone());
        out.trials = self.trials.as_ref().map(|t| idx.iter().map(|&i| t[i]).collect());
        Ok(out)
    }
}

/// Dataset rearranged into neighbor-graph order. Samplers work only here.
#[derive(Debug, Clone)]
pub struct OrderedData {
    pub coords: Coordinates<f64>,
    pub x: Vec<f64>,
    pub p: usize,
    pub y: Vec<f64>,
    pub trials: Vec<u32>,
}

impl OrderedData {
    pub fn new(data: &SpatialDataset, ord: &Ordering) -> Self {
        let perm = ord.perm();
        Self {
            coords: data.coords.permuted(ord),
            x: perm.iter().flat_map(|&k| data.row(k).iter().copied()).collect(),
            p: data.p,
            y: ord.to_ordered(&data.y),
            trials: data.trials.as_ref().map(|t| ord.to_ordered(t)).unwrap_or_else(|| vec![1; data.len()]),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    /// `X beta`.
    pub fn mean(&self, beta: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| crate::linalg::dot(self.row(i), beta)).collect()
    }
}
