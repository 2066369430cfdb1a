//! CSV ingestion and result files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::conjugate::GridRow;
use crate::data::{DataError, SpatialDataset};
use crate::geo::Coordinates;
use crate::posterior::PredictionSet;
use crate::samples::DrawMatrix;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path}: input has no data rows")]
    Empty { path: String },
    #[error("{path}: missing column `{column}` (header has: {header})")]
    MissingColumn { path: String, column: String, header: String },
    #[error("{path}, line {line}: column `{column}`: cannot parse {value:?} as a number")]
    Parse { path: String, line: u64, column: String, value: String },
    #[error("{path}, line {line}: column `{column}` is not finite")]
    NonFinite { path: String, line: u64, column: String },
    #[error("{path}, line {line}: column `{column}`: trial counts must be positive integers, got {value:?}")]
    Trials { path: String, line: u64, column: String, value: String },
    #[error("{path}: {source}")]
    Data { path: String, source: DataError },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

/// Column roles in an input CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub coords: [String; 2],
    /// Absent for prediction inputs.
    pub response: Option<String>,
    /// `None` uses every column that has no other role.
    pub covariates: Option<Vec<String>>,
    pub intercept: bool,
    pub trials: Option<String>,
}

pub const INTERCEPT_NAME: &str = "(Intercept)";

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File { path: path.display().to_string(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv { path: path.display().to_string(), source }
}

fn open_csv(path: &Path) -> Result<csv::Reader<BufReader<File>>, IoError> {
    let f = File::open(path).map_err(file_err(path))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(BufReader::new(f)))
}

struct Layout {
    coord: [usize; 2],
    response: Option<usize>,
    covariates: Vec<(usize, String)>,
    trials: Option<usize>,
}

fn layout(path: &Path, header: &csv::StringRecord, spec: &ColumnSpec) -> Result<Layout, IoError> {
    let names: Vec<&str> = header.iter().collect();
    let find = |c: &str| {
        names.iter().position(|h| *h == c).ok_or_else(|| IoError::MissingColumn {
            path: path.display().to_string(),
            column: c.to_string(),
            header: names.join(","),
        })
    };
    let coord = [find(&spec.coords[0])?, find(&spec.coords[1])?];
    let response = spec.response.as_deref().map(find).transpose()?;
    let trials = match &spec.trials {
        Some(t) if spec.response.is_some() || names.contains(&t.as_str()) => Some(find(t)?),
        _ => None,
    };
    let covariates = match &spec.covariates {
        Some(list) => list.iter().map(|c| Ok((find(c)?, c.clone()))).collect::<Result<Vec<_>, IoError>>()?,
        None => names
            .iter()
            .enumerate()
            .filter(|(k, _)| !coord.contains(k) && Some(*k) != response && Some(*k) != trials)
            .map(|(k, n)| (k, n.to_string()))
            .collect(),
    };
    Ok(Layout { coord, response, covariates, trials })
}

fn parse_number(path: &Path, line: u64, column: &str, s: &str) -> Result<f64, IoError> {
    let v: f64 = s.parse().map_err(|_| IoError::Parse {
        path: path.display().to_string(),
        line,
        column: column.to_string(),
        value: s.to_string(),
    })?;
    if !v.is_finite() {
        return Err(IoError::NonFinite { path: path.display().to_string(), line, column: column.to_string() });
    }
    Ok(v)
}

struct Table {
    coords: Vec<[f64; 2]>,
    x: Vec<f64>,
    p: usize,
    y: Vec<f64>,
    trials: Option<Vec<u32>>,
    names: Vec<String>,
}

/// Two passes over the file: count rows, then parse into pre-sized buffers.
fn read_table(path: &Path, spec: &ColumnSpec) -> Result<Table, IoError> {
    let mut rdr = open_csv(path)?;
    let mut rows = 0usize;
    let mut rec = csv::StringRecord::new();
    while rdr.read_record(&mut rec).map_err(csv_err(path))? {
        rows += 1;
    }
    if rows == 0 {
        return Err(IoError::Empty { path: path.display().to_string() });
    }
    let mut rdr = open_csv(path)?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    let lay = layout(path, &header, spec)?;
    let p = lay.covariates.len() + spec.intercept as usize;
    let mut coords = Vec::with_capacity(rows);
    let mut x = Vec::with_capacity(rows * p);
    let mut y = Vec::with_capacity(if lay.response.is_some() { rows } else { 0 });
    let mut trials = lay.trials.map(|_| Vec::with_capacity(rows));
    let colname = |k: usize| header.get(k).unwrap_or("?").to_string();
    while rdr.read_record(&mut rec).map_err(csv_err(path))? {
        let line = rec.position().map_or(0, |p| p.line());
        let field = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| parse_number(path, line, &colname(k), field(k));
        coords.push([num(lay.coord[0])?, num(lay.coord[1])?]);
        if let Some(k) = lay.response {
            y.push(num(k)?);
        }
        if spec.intercept {
            x.push(1.0);
        }
        for (k, _) in &lay.covariates {
            x.push(num(*k)?);
        }
        if let (Some(k), Some(t)) = (lay.trials, trials.as_mut()) {
            let v = num(k)?;
            if v < 1.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
                return Err(IoError::Trials {
                    path: path.display().to_string(),
                    line,
                    column: colname(k),
                    value: field(k).to_string(),
                });
            }
            t.push(v as u32);
        }
    }
    let mut names: Vec<String> = Vec::with_capacity(p);
    if spec.intercept {
        names.push(INTERCEPT_NAME.into());
    }
    names.extend(lay.covariates.into_iter().map(|(_, n)| n));
    Ok(Table { coords, x, p, y, trials, names })
}

/// Reads a training dataset.
pub fn read_dataset(path: &Path, spec: &ColumnSpec) -> Result<SpatialDataset, IoError> {
    let t = read_table(path, spec)?;
    let data_err = |source| IoError::Data { path: path.display().to_string(), source };
    let coords = Coordinates::new(t.coords).map_err(|e| data_err(DataError::Coordinates(e)))?;
    let mut d = SpatialDataset::new(coords, t.x, t.p, t.y).map_err(data_err)?.with_names(t.names);
    if let Some(tr) = t.trials {
        d = d.with_trials(tr).map_err(data_err)?;
    }
    Ok(d)
}

/// Reads prediction locations and covariates (no response).
pub fn read_prediction_set(path: &Path, spec: &ColumnSpec) -> Result<PredictionSet, IoError> {
    let mut spec = spec.clone();
    spec.response = None;
    let t = read_table(path, &spec)?;
    let coords = Coordinates::new(t.coords)
        .map_err(|e| IoError::Data { path: path.display().to_string(), source: DataError::Coordinates(e) })?;
    Ok(PredictionSet { coords, x: t.x, p: t.p, trials: t.trials })
}

/// Grid rows from a CSV with columns `alpha`, `phi` and optionally `nu`.
pub fn read_grid(path: &Path) -> Result<Vec<GridRow>, IoError> {
    let mut rdr = open_csv(path)?;
    let header = rdr.headers().map_err(csv_err(path))?.clone();
    let find = |c: &str| header.iter().position(|h| h == c);
    let missing = |c: &str| IoError::MissingColumn {
        path: path.display().to_string(),
        column: c.into(),
        header: header.iter().collect::<Vec<_>>().join(","),
    };
    let a = find("alpha").ok_or_else(|| missing("alpha"))?;
    let f = find("phi").ok_or_else(|| missing("phi"))?;
    let nu = find("nu");
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |k: usize, name: &str| parse_number(path, line, name, rec.get(k).unwrap_or(""));
        rows.push(GridRow { alpha: get(a, "alpha")?, phi: get(f, "phi")?, nu: nu.map(|k| get(k, "nu")).transpose()? });
    }
    if rows.is_empty() {
        return Err(IoError::Empty { path: path.display().to_string() });
    }
    Ok(rows)
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    Ok(BufWriter::new(File::create(path).map_err(file_err(path))?))
}

/// Writes a header and numeric rows; values use the shortest round-trip representation.
pub fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err(path))?;
    }
    w.flush().map_err(file_err(path))
}

pub fn write_matrix_csv(path: &Path, header: &[String], m: &DrawMatrix) -> Result<(), IoError> {
    write_csv(path, header, (0..m.rows).map(|r| m.row(r).to_vec()))
}

/// Reads a numeric CSV written by [`write_csv`].
pub fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, DrawMatrix), IoError> {
    let mut rdr = open_csv(path)?;
    let header: Vec<String> = rdr.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    let mut m = DrawMatrix::with_cols(header.len());
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec
            .iter()
            .zip(&header)
            .map(|(v, h)| {
                v.parse::<f64>().map_err(|_| IoError::Parse {
                    path: path.display().to_string(),
                    line,
                    column: h.clone(),
                    value: v.into(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        m.push(&row);
    }
    Ok((header, m))
}

const MATRIX_MAGIC: &[u8; 8] = b"NNGPMAT1";

/// Raw little-endian matrix: magic, rows (u64), cols (u64), values.
pub fn write_matrix_bin(path: &Path, m: &DrawMatrix) -> Result<(), IoError> {
    let mut w = create(path)?;
    let mut put = |b: &[u8]| w.write_all(b).map_err(file_err(path));
    put(MATRIX_MAGIC)?;
    put(&(m.rows as u64).to_le_bytes())?;
    put(&(m.cols as u64).to_le_bytes())?;
    for v in &m.data {
        put(&v.to_le_bytes())?;
    }
    w.flush().map_err(file_err(path))
}

pub fn read_matrix_bin(path: &Path) -> Result<DrawMatrix, IoError> {
    let mut buf = Vec::new();
    File::open(path).map_err(file_err(path))?.read_to_end(&mut buf).map_err(file_err(path))?;
    let bad = |message: &str| IoError::Format { path: path.display().to_string(), message: message.into() };
    if buf.len() < 24 || &buf[..8] != MATRIX_MAGIC {
        return Err(bad("not a matrix file"));
    }
    let rows = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(buf[16..24].try_into().expect("8 bytes")) as usize;
    if buf.len() != 24 + 8 * rows * cols {
        return Err(bad("truncated matrix file"));
    }
    let data = buf[24..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(DrawMatrix { rows, cols, data })
}

/// Hex SHA-256 of a file's contents.
pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    let mut f = BufReader::new(File::open(path).map_err(file_err(path))?);
    let mut h = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let k = f.read(&mut buf).map_err(file_err(path))?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes a dataset in the layout [`read_dataset`] expects with default column names.
pub fn write_dataset(path: &Path, d: &SpatialDataset, coord_names: [&str; 2], response: &str) -> Result<(), IoError> {
    let mut header: Vec<String> = vec![coord_names[0].into(), coord_names[1].into(), response.into()];
    let skip_intercept = d.covariate_names.first().is_some_and(|n| n == INTERCEPT_NAME);
    let start = skip_intercept as usize;
    header.extend(d.covariate_names[start..].iter().cloned());
    if d.trials.is_some() {
        header.push("trials".into());
    }
    let rows = (0..d.len()).map(|i| {
        let pt = d.coords.point(i);
        let mut r = vec![pt[0], pt[1], d.y[i]];
        r.extend_from_slice(&d.row(i)[start..]);
        if let Some(t) = &d.trials {
            r.push(t[i] as f64);
        }
        r
    });
    write_csv(path, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ColumnSpec {
        ColumnSpec {
            coords: ["x".into(), "y".into()],
            response: Some("response".into()),
            covariates: None,
            intercept: true,
            trials: None,
        }
    }

    #[test]
    fn reads_with_implicit_covariates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x,y,response,x1\n0,0,1.5,2\n1,0.5,2.5,-1\n").unwrap();
        let d = read_dataset(&p, &spec()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.p, 2);
        assert_eq!(d.row(1), &[1.0, -1.0]);
        assert_eq!(d.covariate_names, vec!["(Intercept)", "x1"]);
    }

    #[test]
    fn reports_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "x,y,response\n0,0,1\n1,NaN,2\n").unwrap();
        let e = read_dataset(&p, &spec()).unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("`y`"), "{e}");
        std::fs::write(&p, "x,response\n0,1\n").unwrap();
        assert!(matches!(read_dataset(&p, &spec()), Err(IoError::MissingColumn { .. })));
        std::fs::write(&p, "").unwrap();
        assert!(matches!(read_dataset(&p, &spec()), Err(IoError::Empty { .. })));
    }

    #[test]
    fn binary_matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let mut m = DrawMatrix::with_cols(3);
        m.push(&[1.0, -2.5, 1e-300]);
        m.push(&[f64::MAX, 0.0, 3.25]);
        write_matrix_bin(&p, &m).unwrap();
        assert_eq!(read_matrix_bin(&p).unwrap(), m);
    }

    #[test]
    fn csv_matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut m = DrawMatrix::with_cols(2);
        m.push(&[0.1 + 0.2, -1.0 / 3.0]);
        write_matrix_csv(&p, &["a".into(), "b".into()], &m).unwrap();
        let (h, back) = read_matrix_csv(&p).unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(back, m);
    }
}
