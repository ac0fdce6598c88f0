//! Incomplete covariate matrices and observational datasets, with CSV I/O.
//!
//! CSV layout: a mandatory header with `X1..Xp`, `W`, `Y`, then optional
//! `Z1..Zd`, `true_propensity`, `mu0` and `mu1` columns. An empty covariate
//! cell is a missing value; every other column must be fully populated.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

/// `n × p` covariates with a missingness mask (`true` = missing).
///
/// Missing cells hold `NaN` in `values`; observed cells are stored as given.
#[derive(Debug, Clone)]
pub struct IncompleteMatrix {
    values: Array2<f64>,
    mask: Array2<bool>,
}

impl PartialEq for IncompleteMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.mask == other.mask
            && self
                .values
                .iter()
                .zip(other.values.iter())
                .zip(self.mask.iter())
                .all(|((a, b), &m)| m || a.to_bits() == b.to_bits())
    }
}

impl IncompleteMatrix {
    pub fn new(values: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        if values.dim() != mask.dim() {
            return Err(Error::InvalidInput(format!(
                "values {:?} and mask {:?} differ in shape",
                values.dim(),
                mask.dim()
            )));
        }
        let mut values = values;
        for ((v, &m), idx) in values
            .iter_mut()
            .zip(mask.iter())
            .zip(0usize..)
        {
            if m {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return Err(Error::NonFinite(format!("observed covariate entry {idx}")));
            }
        }
        Ok(IncompleteMatrix { values, mask })
    }

    pub fn complete(values: Array2<f64>) -> Result<Self> {
        let mask = Array2::from_elem(values.raw_dim(), false);
        IncompleteMatrix::new(values, mask)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Raw values, `NaN` where missing.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        (!self.mask[[i, j]]).then(|| self.values[[i, j]])
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.mask[[i, j]]
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.mask.is_empty() {
            0.0
        } else {
            self.missing_count() as f64 / self.mask.len() as f64
        }
    }

    pub fn has_missing(&self) -> bool {
        self.mask.iter().any(|&m| m)
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> IncompleteMatrix {
        IncompleteMatrix {
            values: self.values.select(Axis(0), rows),
            mask: self.mask.select(Axis(0), rows),
        }
    }

    /// Mean and standard deviation of the observed entries of each column.
    ///
    /// A column with a single observed value gets unit scale; a constant
    /// column also gets unit scale.
    pub fn observed_column_stats(&self) -> Result<(Array1<f64>, Array1<f64>)> {
        let p = self.ncols();
        let mut mean = Array1::zeros(p);
        let mut sd = Array1::ones(p);
        for j in 0..p {
            let col: Vec<f64> = self
                .values
                .column(j)
                .iter()
                .zip(self.mask.column(j))
                .filter(|(_, &m)| !m)
                .map(|(&v, _)| v)
                .collect();
            if col.is_empty() {
                return Err(Error::EmptyColumn { column: j });
            }
            let m = col.iter().sum::<f64>() / col.len() as f64;
            mean[j] = m;
            if col.len() > 1 {
                let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
                if var > 0.0 {
                    sd[j] = var.sqrt();
                }
            }
        }
        Ok((mean, sd))
    }
}

/// Covariates, treatment and outcome, with optional simulation ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalDataset {
    pub x: IncompleteMatrix,
    /// Binary treatment stored as 0.0 / 1.0.
    pub w: Array1<f64>,
    pub y: Array1<f64>,
    pub z: Option<Array2<f64>>,
    pub true_propensity: Option<Array1<f64>>,
    pub mu0: Option<Array1<f64>>,
    pub mu1: Option<Array1<f64>>,
    /// Covariates before masking; only available for simulated data.
    pub x_complete: Option<Array2<f64>>,
}

pub(crate) fn check_binary(w: ArrayView1<f64>) -> Result<()> {
    match w.iter().position(|&v| v != 0.0 && v != 1.0) {
        Some(i) => Err(Error::InvalidInput(format!(
            "treatment must be 0 or 1, found {} at row {i}",
            w[i]
        ))),
        None => Ok(()),
    }
}

impl ObservationalDataset {
    pub fn new(x: IncompleteMatrix, w: Array1<f64>, y: Array1<f64>) -> Result<Self> {
        let n = x.nrows();
        for (context, len) in [("treatment length", w.len()), ("outcome length", y.len())] {
            if len != n {
                return Err(Error::Dimension {
                    context,
                    expected: n,
                    found: len,
                });
            }
        }
        check_binary(w.view())?;
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("outcome".into()));
        }
        Ok(ObservationalDataset {
            x,
            w,
            y,
            z: None,
            true_propensity: None,
            mu0: None,
            mu1: None,
            x_complete: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn treated_count(&self) -> usize {
        self.w.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Csv {
            line: 0,
            message: e.to_string(),
        };
        let p = self.p();
        let d = self.z.as_ref().map_or(0, |z| z.ncols());
        let mut header: Vec<String> = (1..=p).map(|j| format!("X{j}")).collect();
        header.push("W".into());
        header.push("Y".into());
        header.extend((1..=d).map(|k| format!("Z{k}")));
        if self.true_propensity.is_some() {
            header.push("true_propensity".into());
        }
        if self.mu0.is_some() && self.mu1.is_some() {
            header.push("mu0".into());
            header.push("mu1".into());
        }
        wtr.write_record(&header).map_err(csv_err)?;
        let fmt = |v: f64| format!("{v:?}");
        for i in 0..self.n() {
            let mut rec: Vec<String> = (0..p)
                .map(|j| self.x.get(i, j).map(fmt).unwrap_or_default())
                .collect();
            rec.push(if self.w[i] == 1.0 { "1" } else { "0" }.into());
            rec.push(fmt(self.y[i]));
            if let Some(z) = &self.z {
                rec.extend(z.row(i).iter().map(|&v| fmt(v)));
            }
            if let Some(e) = &self.true_propensity {
                rec.push(fmt(e[i]));
            }
            if let (Some(m0), Some(m1)) = (&self.mu0, &self.mu1) {
                rec.push(fmt(m0[i]));
                rec.push(fmt(m1[i]));
            }
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush().map_err(|e| Error::Csv {
            line: 0,
            message: e.to_string(),
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Per-column type detected while ingesting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    /// Every observed value is 0 or 1.
    Binary,
    Numeric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport {
    pub rows: usize,
    pub covariate_kinds: Vec<ColumnKind>,
    pub missing_cells: usize,
}

impl IngestReport {
    pub fn count(&self, kind: ColumnKind) -> usize {
        self.covariate_kinds.iter().filter(|&&k| k == kind).count()
    }
}

#[derive(Debug, Clone, Copy)]
enum Role {
    Covariate(usize),
    Treatment,
    Outcome,
    Latent(usize),
    Propensity,
    Mu0,
    Mu1,
}

fn indexed(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    let k: usize = rest.parse().ok()?;
    (k >= 1 && rest == k.to_string()).then_some(k - 1)
}

fn classify(name: &str) -> Option<Role> {
    match name {
        "W" => Some(Role::Treatment),
        "Y" => Some(Role::Outcome),
        "true_propensity" => Some(Role::Propensity),
        "mu0" => Some(Role::Mu0),
        "mu1" => Some(Role::Mu1),
        _ => indexed(name, 'X')
            .map(Role::Covariate)
            .or_else(|| indexed(name, 'Z').map(Role::Latent)),
    }
}

/// Reads a dataset in the CSV layout described in the module docs.
pub fn read_csv<R: Read>(input: R) -> Result<(ObservationalDataset, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| Error::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut roles = Vec::with_capacity(header.len());
    let (mut p, mut d) = (0, 0);
    let mut seen = std::collections::HashSet::new();
    for name in header.iter() {
        let role = classify(name.trim()).ok_or_else(|| Error::Csv {
            line: 1,
            message: format!("unknown column `{name}`"),
        })?;
        if !seen.insert(name.trim().to_string()) {
            return Err(Error::Csv {
                line: 1,
                message: format!("duplicate column `{name}`"),
            });
        }
        match role {
            Role::Covariate(j) => p = p.max(j + 1),
            Role::Latent(k) => d = d.max(k + 1),
            _ => {}
        }
        roles.push(role);
    }
    let count = |f: fn(&Role) -> bool| roles.iter().filter(|r| f(r)).count();
    if count(|r| matches!(r, Role::Covariate(_))) != p || count(|r| matches!(r, Role::Latent(_))) != d {
        return Err(Error::Csv {
            line: 1,
            message: "covariate/latent columns must be numbered contiguously from 1".into(),
        });
    }
    if count(|r| matches!(r, Role::Treatment)) != 1 || count(|r| matches!(r, Role::Outcome)) != 1 {
        return Err(Error::Csv {
            line: 1,
            message: "header must contain W and Y".into(),
        });
    }
    let has_mu0 = count(|r| matches!(r, Role::Mu0)) == 1;
    let has_mu1 = count(|r| matches!(r, Role::Mu1)) == 1;
    if has_mu0 != has_mu1 {
        return Err(Error::Csv {
            line: 1,
            message: "mu0 and mu1 must appear together".into(),
        });
    }
    let has_e = count(|r| matches!(r, Role::Propensity)) == 1;

    let mut xs = Vec::new();
    let mut mask = Vec::new();
    let (mut w, mut y, mut zs, mut e, mut m0, mut m1) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut row_x = vec![0.0; p];
    let mut row_m = vec![false; p];
    let mut row_z = vec![0.0; d];
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let number = |cell: &str, what: &str| -> Result<f64> {
            cell.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Csv {
                    line,
                    message: format!("{what}: `{cell}` is not a finite number"),
                })
        };
        for (cell, role) in record.iter().zip(&roles) {
            match *role {
                Role::Covariate(j) => {
                    if cell.trim().is_empty() || cell.trim() == "NA" {
                        row_m[j] = true;
                        row_x[j] = f64::NAN;
                    } else {
                        row_m[j] = false;
                        row_x[j] = number(cell, &format!("X{}", j + 1))?;
                    }
                }
                Role::Treatment => {
                    let v = number(cell, "W")?;
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::Csv {
                            line,
                            message: format!("W must be 0 or 1, found `{cell}`"),
                        });
                    }
                    w.push(v);
                }
                Role::Outcome => y.push(number(cell, "Y")?),
                Role::Latent(k) => row_z[k] = number(cell, &format!("Z{}", k + 1))?,
                Role::Propensity => e.push(number(cell, "true_propensity")?),
                Role::Mu0 => m0.push(number(cell, "mu0")?),
                Role::Mu1 => m1.push(number(cell, "mu1")?),
            }
        }
        xs.extend_from_slice(&row_x);
        mask.extend_from_slice(&row_m);
        zs.extend_from_slice(&row_z);
    }
    let n = w.len();
    let x = IncompleteMatrix::new(
        Array2::from_shape_vec((n, p), xs).expect("row width is fixed"),
        Array2::from_shape_vec((n, p), mask).expect("row width is fixed"),
    )?;
    let kinds = (0..p)
        .map(|j| {
            let binary = (0..n)
                .filter_map(|i| x.get(i, j))
                .all(|v| v == 0.0 || v == 1.0);
            if binary {
                ColumnKind::Binary
            } else {
                ColumnKind::Numeric
            }
        })
        .collect();
    let report = IngestReport {
        rows: n,
        covariate_kinds: kinds,
        missing_cells: x.missing_count(),
    };
    let mut ds = ObservationalDataset::new(x, Array1::from(w), Array1::from(y))?;
    if d > 0 {
        ds.z = Some(Array2::from_shape_vec((n, d), zs).expect("row width is fixed"));
    }
    if has_e {
        ds.true_propensity = Some(Array1::from(e));
    }
    if has_mu0 {
        ds.mu0 = Some(Array1::from(m0));
        ds.mu1 = Some(Array1::from(m1));
    }
    Ok((ds, report))
}

/// Reads a dataset file; see [`read_csv`].
pub fn ingest_csv(path: &Path) -> Result<(ObservationalDataset, IngestReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn small() -> ObservationalDataset {
        let x = IncompleteMatrix::new(
            array![[1.0, 2.0], [3.5, -1.0], [0.25, 7.0]],
            array![[false, true], [false, false], [true, false]],
        )
        .unwrap();
        let mut ds = ObservationalDataset::new(x, array![1.0, 0.0, 1.0], array![0.5, -2.0, 1e-3])
            .unwrap();
        ds.z = Some(array![[0.1], [0.2], [0.3]]);
        ds.true_propensity = Some(array![0.4, 0.5, 0.6]);
        ds
    }

    #[test]
    fn csv_round_trip() {
        let ds = small();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("X1,X2,W,Y,Z1,true_propensity\n"));
        let (back, report) = read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(report.missing_cells, 2);
    }

    #[test]
    fn single_empty_cell_gives_single_mask_bit() {
        let csv = "X1,X2,W,Y\n1,2,0,1.5\n3,,1,2.5\n";
        let (ds, _) = read_csv(csv.as_bytes()).unwrap();
        assert_eq!(ds.x.missing_count(), 1);
        assert!(ds.x.is_missing(1, 1));
    }

    #[test]
    fn non_binary_treatment_is_rejected() {
        let csv = "X1,W,Y\n1,0,1\n2,2,1\n";
        let err = read_csv(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Csv { line: 3, .. }), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = "X1,W,Y\n1,0,1\n2,1,abc\n";
        match read_csv(csv.as_bytes()).unwrap_err() {
            Error::Csv { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
        let ragged = "X1,W,Y\n1,0,1\n2,1\n";
        assert!(matches!(read_csv(ragged.as_bytes()), Err(Error::Csv { .. })));
    }

    #[test]
    fn unknown_or_gappy_columns_are_rejected() {
        assert!(read_csv("X1,W,Y,foo\n1,0,1,2\n".as_bytes()).is_err());
        assert!(read_csv("X1,X3,W,Y\n1,0,1,2\n".as_bytes()).is_err());
        assert!(read_csv("X1,Y\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn column_stats_skip_missing() {
        let x = IncompleteMatrix::new(
            array![[1.0, 5.0], [0.0, 7.0], [3.0, 9.0]],
            array![[false, false], [true, false], [false, false]],
        )
        .unwrap();
        let (mean, sd) = x.observed_column_stats().unwrap();
        assert_eq!(mean, array![2.0, 7.0]);
        assert!((sd[0] - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(sd[1], 2.0);
    }

    #[test]
    fn empty_column_is_named() {
        let x = IncompleteMatrix::new(array![[1.0, 0.0]], array![[false, true]]).unwrap();
        assert!(matches!(
            x.observed_column_stats(),
            Err(Error::EmptyColumn { column: 1 })
        ));
    }
}
