//! CSV matrix ingestion and train-time standardization.
//!
//! Files are comma-delimited with '.' decimals; a single leading header row
//! is auto-detected (any non-numeric cell in the first record). Parse
//! problems are reported with 1-based line and column coordinates.

use nalgebra::DMatrix;
use std::fmt;
use std::path::Path;

/// User mistakes exit with 2, numerical breakdowns with 3.
#[derive(Debug)]
pub enum CliError {
    User(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(msg) | CliError::Numerical(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<rowrank::Error> for CliError {
    fn from(e: rowrank::Error) -> Self {
        match e {
            rowrank::Error::NumericalFailure(_) => CliError::Numerical(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::User(e.to_string())
    }
}

pub struct LoadedMatrix {
    pub data: DMatrix<f64>,
    /// Column names when the file had a header row.
    pub names: Option<Vec<String>>,
}

pub fn read_matrix(path: &Path) -> Result<LoadedMatrix, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut names: Option<Vec<String>> = None;
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(idx as u64 + 1);
        let mut vals = Vec::with_capacity(rec.len());
        let mut bad: Option<usize> = None;
        for (j, field) in rec.iter().enumerate() {
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => vals.push(v),
                _ => {
                    bad = Some(j);
                    break;
                }
            }
        }
        match bad {
            None => rows.push(vals),
            Some(_) if idx == 0 => {
                // Non-numeric first record: treat it as the header row.
                names = Some(rec.iter().map(str::to_string).collect());
            }
            Some(j) => {
                return Err(CliError::User(format!(
                    "{} line {line}: cannot read '{}' in column {} as a finite number",
                    path.display(),
                    rec.get(j).unwrap_or(""),
                    j + 1
                )));
            }
        }
    }

    if rows.is_empty() {
        return Err(CliError::User(format!(
            "{}: no data rows found",
            path.display()
        )));
    }
    let width = rows[0].len();
    if width == 0 {
        return Err(CliError::User(format!("{}: rows have no columns", path.display())));
    }
    if let Some(n) = &names {
        if n.len() != width {
            return Err(CliError::User(format!(
                "{}: header has {} columns but data rows have {width}",
                path.display(),
                n.len()
            )));
        }
    }
    let data = DMatrix::from_row_iterator(rows.len(), width, rows.into_iter().flatten());
    Ok(LoadedMatrix { data, names })
}

/// Training-scale transform: columns of X get (x - mean)/scale, columns of Y
/// get y - mean. The identity transform (all means 0, all scales 1) encodes
/// `--no-standardize`, so reports always carry applicable parameters.
pub struct Standardization {
    pub enabled: bool,
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: Vec<f64>,
}

impl Standardization {
    pub fn identity(p: usize, n: usize) -> Standardization {
        Standardization {
            enabled: false,
            x_mean: vec![0.0; p],
            x_scale: vec![1.0; p],
            y_mean: vec![0.0; n],
        }
    }

    /// Apply the stored parameters to a fresh (X, Y) pair, e.g. validation
    /// data, which must live on the same scale as the training fit.
    pub fn apply(&self, x: &mut DMatrix<f64>, y: &mut DMatrix<f64>) {
        for j in 0..x.ncols() {
            let mut col = x.column_mut(j);
            for v in col.iter_mut() {
                *v = (*v - self.x_mean[j]) / self.x_scale[j];
            }
        }
        for j in 0..y.ncols() {
            let mut col = y.column_mut(j);
            for v in col.iter_mut() {
                *v -= self.y_mean[j];
            }
        }
    }
}

/// Center Y columns and scale X columns to mean 0, unit sample variance
/// (denominator m - 1). A constant X column makes the scale undefined and is
/// reported by 1-based coordinate.
pub fn standardize(x: &mut DMatrix<f64>, y: &mut DMatrix<f64>) -> Result<Standardization, CliError> {
    let m = x.nrows();
    if m < 2 {
        return Err(CliError::User(
            "standardization needs at least 2 rows; pass --no-standardize".into(),
        ));
    }
    let p = x.ncols();
    let n = y.ncols();
    let mut st = Standardization {
        enabled: true,
        x_mean: Vec::with_capacity(p),
        x_scale: Vec::with_capacity(p),
        y_mean: Vec::with_capacity(n),
    };
    for j in 0..p {
        let mean = x.column(j).mean();
        let ss: f64 = x.column(j).iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (m - 1) as f64).sqrt();
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(CliError::User(format!(
                "design column {} is constant and cannot be standardized; \
                 drop it or pass --no-standardize",
                j + 1
            )));
        }
        st.x_mean.push(mean);
        st.x_scale.push(sd);
    }
    for j in 0..n {
        st.y_mean.push(y.column(j).mean());
    }
    for j in 0..p {
        let mean = st.x_mean[j];
        let sd = st.x_scale[j];
        for v in x.column_mut(j).iter_mut() {
            *v = (*v - mean) / sd;
        }
    }
    for j in 0..n {
        let mean = st.y_mean[j];
        for v in y.column_mut(j).iter_mut() {
            *v -= mean;
        }
    }
    Ok(st)
}
