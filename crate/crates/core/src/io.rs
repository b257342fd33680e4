//! File formats: CSV datasets, the simulation truth sidecar and model JSON.
//!
//! Labels and feature indices are 1-based in every file and 0-based in
//! memory. Floats are written in shortest round-trip form, so reading back
//! reproduces the in-memory bits.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::{Component, FitResult, MixtureModel};
use crate::sim::{SimulatedData, SimulationSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MODEL_SCHEMA: &str = "csmr.model/1";
pub const TRUTH_SCHEMA: &str = "csmr.truth/1";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    /// 0-based labels when the file has a `z_true` column.
    pub z_true: Option<Vec<usize>>,
}

/// Writes `x1..xP,y[,z_true]` with one row per sample.
pub fn write_dataset_to<W: Write>(
    out: W,
    x: &Array2<f64>,
    y: &Array1<f64>,
    z: Option<&[usize]>,
) -> Result<()> {
    if x.nrows() != y.len() || z.is_some_and(|z| z.len() != y.len()) {
        return Err(Error::DimensionMismatch("X, y and z_true lengths differ".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    if z.is_some() {
        header.push("z_true".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    let mut record = Vec::with_capacity(header.len());
    for (i, row) in x.rows().into_iter().enumerate() {
        record.clear();
        record.extend(row.iter().map(|v| v.to_string()));
        record.push(y[i].to_string());
        if let Some(z) = z {
            record.push((z[i] + 1).to_string());
        }
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(
    path: &Path,
    x: &Array2<f64>,
    y: &Array1<f64>,
    z: Option<&[usize]>,
) -> Result<()> {
    write_dataset_to(BufWriter::new(File::create(path)?), x, y, z)
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse {
            line,
            message: format!("{kind:?}"),
        },
    }
}

/// Reads a dataset. The header must contain a `y` column; an optional
/// `z_true` column holds 1-based labels; every other column is a feature.
pub fn read_dataset_from<R: Read>(input: R) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    let y_col = header
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| Error::Parse { line: 1, message: "header has no `y` column".into() })?;
    let z_col = header.iter().position(|h| h == "z_true");
    let x_cols: Vec<usize> = (0..header.len()).filter(|&c| c != y_col && Some(c) != z_col).collect();
    let feature_names = x_cols.iter().map(|&c| header[c].to_string()).collect();

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut zs = Vec::new();
    let mut record = csv::StringRecord::new();
    while r.read_record(&mut record).map_err(csv_err)? {
        let line = record.position().map_or(0, |p| p.line());
        let num = |c: usize| -> Result<f64> {
            let field = record[c].trim();
            field.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("column `{}`: cannot parse {field:?} as a number", &header[c]),
            })
        };
        for &c in &x_cols {
            xs.push(num(c)?);
        }
        ys.push(num(y_col)?);
        if let Some(c) = z_col {
            let field = record[c].trim();
            let z: usize = field.parse().ok().filter(|&z| z >= 1).ok_or_else(|| Error::Parse {
                line,
                message: format!("z_true must be a positive integer, got {field:?}"),
            })?;
            zs.push(z - 1);
        }
    }
    let n = ys.len();
    if n == 0 {
        return Err(Error::Parse { line: 1, message: "no data rows".into() });
    }
    Ok(Dataset {
        feature_names,
        x: Array2::from_shape_vec((n, x_cols.len()), xs).expect("row lengths checked by csv"),
        y: Array1::from(ys),
        z_true: z_col.map(|_| zs),
    })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    read_dataset_from(BufReader::new(File::open(path)?))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Ground truth written next to a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub schema: String,
    pub version: String,
    pub spec: SimulationSpec,
    /// `K` rows of `P` coefficients.
    pub beta_true: Vec<Vec<f64>>,
    pub intercepts_true: Vec<f64>,
    /// 1-based feature indices.
    pub supports: Vec<Vec<usize>>,
}

impl TruthFile {
    pub fn from_data(d: &SimulatedData) -> Self {
        TruthFile {
            schema: TRUTH_SCHEMA.into(),
            version: VERSION.into(),
            spec: d.spec.clone(),
            beta_true: d.beta_true.rows().into_iter().map(|r| r.to_vec()).collect(),
            intercepts_true: d.intercepts_true.to_vec(),
            supports: d
                .supports_true
                .iter()
                .map(|s| s.iter().map(|j| j + 1).collect())
                .collect(),
        }
    }

    /// 0-based supports.
    pub fn supports0(&self) -> Result<Vec<Vec<usize>>> {
        self.supports
            .iter()
            .map(|s| {
                s.iter()
                    .map(|&j| {
                        j.checked_sub(1)
                            .ok_or_else(|| Error::InvalidArgument("support indices are 1-based".into()))
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFile {
    pub pi: f64,
    pub intercept: f64,
    /// Nonzero coefficients keyed by 1-based feature index.
    pub beta: BTreeMap<usize, f64>,
    pub sigma2: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub config: serde_json::Value,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub schema: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub p: usize,
    pub components: Vec<ComponentFile>,
    pub meta: ModelMeta,
}

impl ModelFile {
    pub fn new(model: &MixtureModel, meta: ModelMeta) -> Self {
        let components = model
            .components
            .iter()
            .map(|c| ComponentFile {
                pi: c.weight,
                intercept: c.intercept,
                beta: c
                    .coefficients
                    .iter()
                    .enumerate()
                    .filter(|(_, &b)| b != 0.0)
                    .map(|(j, &b)| (j + 1, b))
                    .collect(),
                sigma2: c.variance,
                lambda: c.lambda,
            })
            .collect();
        ModelFile {
            schema: MODEL_SCHEMA.into(),
            k: model.k(),
            p: model.p(),
            components,
            meta,
        }
    }

    pub fn from_fit(fit: &FitResult, seed: u64, config: serde_json::Value) -> Self {
        Self::new(
            &fit.model,
            ModelMeta {
                seed,
                config,
                trace: fit.trace.clone(),
                converged: fit.converged,
                iterations: fit.iterations,
                version: VERSION.into(),
            },
        )
    }

    pub fn to_model(&self) -> Result<MixtureModel> {
        if self.schema != MODEL_SCHEMA {
            return Err(Error::InvalidArgument(format!(
                "unsupported model schema {:?}",
                self.schema
            )));
        }
        if self.components.len() != self.k {
            return Err(Error::DimensionMismatch(format!(
                "K = {} but {} components listed",
                self.k,
                self.components.len()
            )));
        }
        let components = self
            .components
            .iter()
            .map(|c| {
                let mut beta = Array1::zeros(self.p);
                for (&j, &b) in &c.beta {
                    if j == 0 || j > self.p {
                        return Err(Error::InvalidArgument(format!(
                            "coefficient index {j} outside 1..={}",
                            self.p
                        )));
                    }
                    beta[j - 1] = b;
                }
                Ok(Component {
                    weight: c.pi,
                    intercept: c.intercept,
                    coefficients: beta,
                    variance: c.sigma2,
                    lambda: c.lambda,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MixtureModel::new(components)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dataset_round_trip() {
        let x = array![[0.1, -2.5e-300], [1.0 / 3.0, 7.0]];
        let y = array![f64::MAX, -0.0];
        let mut buf = Vec::new();
        write_dataset_to(&mut buf, &x, &y, Some(&[1, 0])).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,y,z_true\n"));
        let d = read_dataset_from(buf.as_slice()).unwrap();
        assert_eq!(d.x, x);
        assert_eq!(d.y, y);
        assert_eq!(d.z_true, Some(vec![1, 0]));
        assert_eq!(d.feature_names, vec!["x1", "x2"]);
    }

    #[test]
    fn z_column_is_optional() {
        let d = read_dataset_from("x1,y\n1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(d.z_true, None);
        assert_eq!(d.x, array![[1.0], [3.0]]);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let bad = "x1,y\n1,2\n3,oops\n";
        match read_dataset_from(bad.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("oops"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        match read_dataset_from("x1,y\n1,2\n3\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(read_dataset_from("x1,x2\n1,2\n".as_bytes()).is_err());
        assert!(read_dataset_from("x1,y,z_true\n1,2,0\n".as_bytes()).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let model = MixtureModel::new(vec![
            Component {
                weight: 0.25,
                intercept: 0.1,
                coefficients: array![0.0, 1.0 / 3.0, 0.0],
                variance: 2.0,
                lambda: 0.01,
            },
            Component {
                weight: 0.75,
                intercept: -1e-17,
                coefficients: array![std::f64::consts::PI, 0.0, -7.5],
                variance: 1e-9,
                lambda: 0.2,
            },
        ])
        .unwrap();
        let meta = ModelMeta {
            seed: 9,
            config: serde_json::json!({"folds": 10}),
            trace: vec![-1.0 / 7.0],
            converged: true,
            iterations: 1,
            version: VERSION.into(),
        };
        let file = ModelFile::new(&model, meta);
        assert_eq!(file.components[0].beta.keys().copied().collect::<Vec<_>>(), vec![2]);
        let text = serde_json::to_string(&file).unwrap();
        assert!(text.contains("\"K\":2"));
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.to_model().unwrap(), model);
    }
}
