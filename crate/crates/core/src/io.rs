//! JSON files for datasets and models. Matrices are nested row-major arrays.
//! Paths ending in `.gz` are gzip-compressed.
//!
//! Floats are written in shortest round-trip form, so reading a written
//! model reproduces every field bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, ModelParams, Trajectory};

pub const KRON_ORDER: &str = "input-major";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub dt: f64,
    pub p: usize,
    pub q: usize,
    pub trajectories: Vec<TrajectoryFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub dt: f64,
    pub n: usize,
    pub q: usize,
    pub p: usize,
    pub gen: Vec<Vec<Vec<f64>>>,
    pub c0: Vec<f64>,
    pub sigma_w: Vec<Vec<f64>>,
    pub sigma_v: Vec<Vec<f64>>,
    pub mu0: Vec<f64>,
    pub sigma0: Vec<Vec<f64>>,
    pub kron_order: String,
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn rows_to_matrix(
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
    field: &str,
) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidInput(format!(
            "{field}: expected a {nrows}x{ncols} matrix"
        )));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn vector(v: &[f64], len: usize, field: &str) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(Error::InvalidInput(format!(
            "{field}: expected length {len}, got {}",
            v.len()
        )));
    }
    Ok(DVector::from_column_slice(v))
}

impl From<&Dataset> for DatasetFile {
    fn from(d: &Dataset) -> Self {
        let vecs = |vs: &[DVector<f64>]| vs.iter().map(|v| v.iter().copied().collect()).collect();
        DatasetFile {
            dt: d.dt,
            p: d.p,
            q: d.q,
            trajectories: d
                .trajectories
                .iter()
                .map(|t| TrajectoryFile {
                    inputs: vecs(&t.inputs),
                    outputs: vecs(&t.outputs),
                })
                .collect(),
        }
    }
}

impl TryFrom<DatasetFile> for Dataset {
    type Error = Error;

    fn try_from(f: DatasetFile) -> Result<Dataset> {
        let mut trajectories = Vec::with_capacity(f.trajectories.len());
        for (m, t) in f.trajectories.into_iter().enumerate() {
            if t.outputs.len() != t.inputs.len() + 1 {
                return Err(Error::InvalidInput(format!(
                    "trajectories[{m}]: outputs has {} entries, expected inputs + 1 = {}",
                    t.outputs.len(),
                    t.inputs.len() + 1
                )));
            }
            let conv = |vs: Vec<Vec<f64>>, len: usize, field: &str| -> Result<Vec<DVector<f64>>> {
                vs.iter()
                    .enumerate()
                    .map(|(l, v)| vector(v, len, &format!("trajectories[{m}].{field}[{l}]")))
                    .collect()
            };
            trajectories.push(Trajectory {
                inputs: conv(t.inputs, f.q, "inputs")?,
                outputs: conv(t.outputs, f.p, "outputs")?,
            });
        }
        let d = Dataset {
            dt: f.dt,
            p: f.p,
            q: f.q,
            trajectories,
        };
        d.validate()?;
        Ok(d)
    }
}

impl From<&ModelParams> for ModelFile {
    fn from(m: &ModelParams) -> Self {
        ModelFile {
            dt: m.dt,
            n: m.n,
            q: m.q,
            p: m.p,
            gen: m.gen.iter().map(matrix_to_rows).collect(),
            c0: m.c0.iter().copied().collect(),
            sigma_w: matrix_to_rows(&m.sigma_w),
            sigma_v: matrix_to_rows(&m.sigma_v),
            mu0: m.mu0.iter().copied().collect(),
            sigma0: matrix_to_rows(&m.sigma0),
            kron_order: KRON_ORDER.into(),
        }
    }
}

impl TryFrom<ModelFile> for ModelParams {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<ModelParams> {
        if f.kron_order != KRON_ORDER {
            return Err(Error::InvalidInput(format!(
                "kron_order: expected \"{KRON_ORDER}\", got \"{}\"",
                f.kron_order
            )));
        }
        if f.gen.len() != f.q + 1 {
            return Err(Error::InvalidInput(format!(
                "gen: expected {} generator matrices, got {}",
                f.q + 1,
                f.gen.len()
            )));
        }
        let gen = f
            .gen
            .iter()
            .enumerate()
            .map(|(k, g)| rows_to_matrix(g, f.n + 1, f.n, &format!("gen[{k}]")))
            .collect::<Result<Vec<_>>>()?;
        let m = ModelParams {
            dt: f.dt,
            n: f.n,
            q: f.q,
            p: f.p,
            gen,
            c0: vector(&f.c0, f.p, "c0")?,
            sigma_w: rows_to_matrix(&f.sigma_w, f.n, f.n, "sigma_w")?,
            sigma_v: rows_to_matrix(&f.sigma_v, f.p, f.p, "sigma_v")?,
            mu0: vector(&f.mu0, f.n, "mu0")?,
            sigma0: rows_to_matrix(&f.sigma0, f.n, f.n, "sigma0")?,
        };
        m.validate()?;
        Ok(m)
    }
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn reader(path: &Path) -> Result<Box<dyn Read>> {
    let f = BufReader::new(File::open(path)?);
    Ok(if is_gz(path) {
        Box::new(GzDecoder::new(f))
    } else {
        Box::new(f)
    })
}

/// Parses JSON, reporting schema violations with the path of the field.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let mut text = String::new();
    reader(path)?.read_to_string(&mut text)?;
    from_json_str(&text)
}

pub fn from_json_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::InvalidInput(format!("{path}: {}", e.into_inner()))
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    if is_gz(path) {
        let mut enc = GzEncoder::new(f, Compression::default());
        serde_json::to_writer(&mut enc, value)?;
        enc.finish()?.flush()?;
    } else {
        let mut f = f;
        serde_json::to_writer(&mut f, value)?;
        f.flush()?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    read_json::<DatasetFile>(path)?.try_into()
}

pub fn write_dataset(path: &Path, d: &Dataset) -> Result<()> {
    write_json(path, &DatasetFile::from(d))
}

pub fn read_model(path: &Path) -> Result<ModelParams> {
    read_json::<ModelFile>(path)?.try_into()
}

pub fn write_model(path: &Path, m: &ModelParams) -> Result<()> {
    write_json(path, &ModelFile::from(m))
}

pub fn model_to_json(m: &ModelParams) -> Result<String> {
    Ok(serde_json::to_string(&ModelFile::from(m))?)
}

pub fn model_from_json(text: &str) -> Result<ModelParams> {
    from_json_str::<ModelFile>(text)?.try_into()
}

pub fn dataset_to_json(d: &Dataset) -> Result<String> {
    Ok(serde_json::to_string(&DatasetFile::from(d))?)
}

pub fn dataset_from_json(text: &str) -> Result<Dataset> {
    from_json_str::<DatasetFile>(text)?.try_into()
}
