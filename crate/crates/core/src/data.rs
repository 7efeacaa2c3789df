//! Datasets of input/output pairs, the min/range scaling transform used before
//! clustering, seeded train/test splitting, and CSV/JSON file I/O.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CcrError, Coordinate, Result};
use crate::rng;

/// `N` input/output pairs `(x_i, y_i)` with `x_i` in `R^d` and scalar `y_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetDoc", into = "DatasetDoc")]
pub struct Dataset {
    inputs: Array2<f64>,
    outputs: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct DatasetDoc {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
}

impl TryFrom<DatasetDoc> for Dataset {
    type Error = CcrError;

    fn try_from(doc: DatasetDoc) -> Result<Self> {
        Dataset::from_rows(&doc.inputs, doc.outputs)
    }
}

impl From<Dataset> for DatasetDoc {
    fn from(d: Dataset) -> Self {
        DatasetDoc {
            inputs: d.inputs.outer_iter().map(|r| r.to_vec()).collect(),
            outputs: d.outputs.to_vec(),
        }
    }
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, outputs: Array1<f64>) -> Result<Self> {
        if inputs.nrows() != outputs.len() {
            return Err(invalid(format!(
                "{} input rows but {} outputs",
                inputs.nrows(),
                outputs.len()
            )));
        }
        if outputs.is_empty() {
            return Err(invalid("dataset must contain at least one row"));
        }
        if inputs.ncols() == 0 {
            return Err(invalid("dataset must have at least one input dimension"));
        }
        let d = inputs.ncols();
        for (i, row) in inputs.outer_iter().enumerate() {
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(CcrError::NonFinite { row: i, column: j });
            }
            if !outputs[i].is_finite() {
                return Err(CcrError::NonFinite { row: i, column: d });
            }
        }
        Ok(Dataset { inputs, outputs })
    }

    pub fn from_rows(rows: &[Vec<f64>], outputs: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(invalid(format!(
                "row {i} has {} inputs, expected {d}",
                r.len()
            )));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let inputs = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| invalid(e.to_string()))?;
        Dataset::new(inputs, Array1::from(outputs))
    }

    /// Evaluates `f` on every row of `inputs`.
    pub fn from_fn(inputs: Array2<f64>, f: impl Fn(ArrayView1<f64>) -> f64) -> Result<Self> {
        let outputs = inputs.outer_iter().map(f).collect::<Array1<f64>>();
        Dataset::new(inputs, outputs)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn outputs(&self) -> ArrayView1<'_, f64> {
        self.outputs.view()
    }

    pub fn input(&self, i: usize) -> ArrayView1<'_, f64> {
        self.inputs.row(i)
    }

    pub fn output(&self, i: usize) -> f64 {
        self.outputs[i]
    }

    /// Rows selected by `indices`, in that order. Panics on out-of-range indices.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.inputs.select(Axis(0), indices),
            self.outputs.select(Axis(0), indices),
        )
    }

    /// Joint points `(x, y)` as an `N x (d+1)` matrix.
    pub fn joint(&self) -> Array2<f64> {
        let (n, d) = self.inputs.dim();
        let mut z = Array2::zeros((n, d + 1));
        z.slice_mut(ndarray::s![.., ..d]).assign(&self.inputs);
        z.column_mut(d).assign(&self.outputs);
        z
    }

    pub fn push(&mut self, x: &[f64], y: f64) -> Result<()> {
        if x.len() != self.dim() {
            return Err(CcrError::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        if let Some(j) = x.iter().position(|v| !v.is_finite()) {
            return Err(CcrError::NonFinite {
                row: self.len(),
                column: j,
            });
        }
        if !y.is_finite() {
            return Err(CcrError::NonFinite {
                row: self.len(),
                column: self.dim(),
            });
        }
        self.inputs
            .push_row(ArrayView1::from(x))
            .map_err(|e| invalid(e.to_string()))?;
        self.outputs
            .push(Axis(0), ndarray::aview0(&y))
            .map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for (x, y) in self.inputs.outer_iter().zip(self.outputs.iter()) {
            for v in x.iter() {
                out.push_str(&format!("{v:?},"));
            }
            out.push_str(&format!("{y:?}\n"));
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>, format: DataFormat) -> Result<()> {
        let text = match format {
            DataFormat::Csv => self.to_csv_string(),
            DataFormat::Json => serde_json::to_string(self)?,
        };
        fs::write(path, text)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Json,
}

impl DataFormat {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => DataFormat::Json,
            _ => DataFormat::Csv,
        }
    }
}

impl FromStr for DataFormat {
    type Err = CcrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DataFormat::Csv),
            "json" => Ok(DataFormat::Json),
            other => Err(invalid(format!("unknown data format `{other}`"))),
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    match format {
        DataFormat::Csv => parse_csv(&text),
        DataFormat::Json => parse_json(&text),
    }
}

pub fn parse_json(text: &str) -> Result<Dataset> {
    Ok(serde_json::from_str(text)?)
}

/// Parses comma-separated rows whose last column is the output. A first row
/// containing any non-numeric field is treated as a header and skipped.
pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut outputs = Vec::new();
    let mut width = None;
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CcrError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if k == 0 => continue,
            Err(e) => {
                return Err(CcrError::Parse {
                    line,
                    message: e.to_string(),
                })
            }
        };
        if values.len() < 2 {
            return Err(CcrError::Parse {
                line,
                message: "need at least one input column and one output column".into(),
            });
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(CcrError::Parse {
                    line,
                    message: format!("expected {w} columns, found {}", values.len()),
                })
            }
            _ => {}
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(CcrError::NonFinite {
                row: rows.len(),
                column: j,
            });
        }
        let (x, y) = values.split_at(values.len() - 1);
        rows.push(x.to_vec());
        outputs.push(y[0]);
    }
    if rows.is_empty() {
        return Err(CcrError::Parse {
            line: 0,
            message: "no data rows".into(),
        });
    }
    Dataset::from_rows(&rows, outputs)
}

/// Per-coordinate affine map sending each input dimension of the fitting data
/// onto `[0, 1]` and the output onto `[0, C]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTransform {
    pub x_min: Vec<f64>,
    pub x_range: Vec<f64>,
    pub y_min: f64,
    pub y_range: f64,
    pub amplification: f64,
}

pub fn fit_scaling(data: &Dataset, amplification: f64) -> Result<ScalingTransform> {
    if !(amplification.is_finite() && amplification > 0.0) {
        return Err(invalid(format!(
            "amplification must be positive, got {amplification}"
        )));
    }
    let spread = |col: ArrayView1<f64>| {
        let lo = col.fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        (lo, hi - lo)
    };
    let mut x_min = Vec::with_capacity(data.dim());
    let mut x_range = Vec::with_capacity(data.dim());
    for (j, col) in data.inputs.axis_iter(Axis(1)).enumerate() {
        let (lo, range) = spread(col);
        if range <= 0.0 {
            return Err(CcrError::ZeroSpread(Coordinate::Input(j)));
        }
        x_min.push(lo);
        x_range.push(range);
    }
    let (y_min, y_range) = spread(data.outputs.view());
    if y_range <= 0.0 {
        return Err(CcrError::ZeroSpread(Coordinate::Output));
    }
    Ok(ScalingTransform {
        x_min,
        x_range,
        y_min,
        y_range,
        amplification,
    })
}

impl ScalingTransform {
    pub fn dim(&self) -> usize {
        self.x_min.len()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(CcrError::DimensionMismatch {
                expected: self.dim(),
                actual: d,
            });
        }
        Ok(())
    }

    pub fn scale_point(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_dim(x.len())?;
        Ok(x
            .iter()
            .zip(self.x_min.iter().zip(&self.x_range))
            .map(|(v, (lo, r))| (v - lo) / r)
            .collect())
    }

    pub fn scale_inputs(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (lo, r) = (self.x_min[j], self.x_range[j]);
            col.mapv_inplace(|v| (v - lo) / r);
        }
        Ok(out)
    }

    pub fn unscale_inputs(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (lo, r) = (self.x_min[j], self.x_range[j]);
            col.mapv_inplace(|v| v * r + lo);
        }
        Ok(out)
    }

    pub fn scale_output(&self, y: f64) -> f64 {
        self.amplification * ((y - self.y_min) / self.y_range)
    }

    pub fn unscale_output(&self, y: f64) -> f64 {
        y / self.amplification * self.y_range + self.y_min
    }

    /// Applies the transform; outputs are scaled only when `scale_output` is set.
    /// Points outside the fitting range map linearly outside `[0, 1]`.
    pub fn apply(&self, data: &Dataset, scale_output: bool) -> Result<Dataset> {
        let inputs = self.scale_inputs(data.inputs())?;
        let outputs = if scale_output {
            data.outputs.mapv(|y| self.scale_output(y))
        } else {
            data.outputs.clone()
        };
        Dataset::new(inputs, outputs)
    }

    /// Inverse of [`apply`](Self::apply) with the same `scale_output` flag.
    pub fn invert(&self, data: &Dataset, scale_output: bool) -> Result<Dataset> {
        let inputs = self.unscale_inputs(data.inputs())?;
        let outputs = if scale_output {
            data.outputs.mapv(|y| self.unscale_output(y))
        } else {
            data.outputs.clone()
        };
        Dataset::new(inputs, outputs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

/// Seeded random partition into `(train, test)`; the test side holds
/// `round(N * test_fraction)` rows.
pub fn split(data: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(invalid("test fraction must lie in (0, 1)"));
    }
    let n = data.len();
    let n_test = (n as f64 * spec.test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(invalid(format!(
            "test fraction {} leaves an empty side for N = {n}",
            spec.test_fraction
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(spec.seed));
    let (test, train) = idx.split_at(n_test);
    Ok((data.select(train)?, data.select(test)?))
}
