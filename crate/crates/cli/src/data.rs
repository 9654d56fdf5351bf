//! Synthetic datasets on disk: raw matrices plus a JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use moreau_core::experiments::{self, ClassificationDataset, RegressionDataset};
use moreau_core::{DenseMatrix, LinearOperator};
use serde::{Deserialize, Serialize};

use crate::config::read_json;

pub const MANIFEST: &str = "manifest.json";
pub const MATRIX: &str = "A.bin";
pub const HOLDOUT: &str = "holdout.bin";

fn default_noise_sigma() -> f64 {
    0.03
}
fn default_margin_violation() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionParams {
    pub m: usize,
    pub n: usize,
    pub outlier_frac: f64,
    /// Defaults to ten standard deviations of the clean responses.
    #[serde(default)]
    pub outlier_magnitude: Option<f64>,
    #[serde(default = "default_noise_sigma")]
    pub noise_sigma: f64,
}

impl RegressionParams {
    pub fn generate(&self, seed: u64) -> moreau_core::Result<RegressionDataset> {
        experiments::gen_regression(self.m, self.n, self.outlier_frac, self.outlier_magnitude, self.noise_sigma, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationParams {
    /// Training examples; a further `n / 4` are held out.
    pub n: usize,
    pub d_signal: usize,
    pub d_noise: usize,
    /// Labeled training examples; all of them when absent.
    #[serde(default)]
    pub labeled: Option<usize>,
    #[serde(default = "default_margin_violation")]
    pub margin_violation_frac: f64,
}

impl ClassificationParams {
    pub fn generate(&self, seed: u64) -> moreau_core::Result<(ClassificationDataset, ClassificationDataset)> {
        let l = self.labeled.unwrap_or(self.n);
        experiments::gen_classification(self.n, self.d_signal, self.d_noise, l, self.margin_violation_frac, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixFile {
    pub path: PathBuf,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Contents {
    Regression {
        params: RegressionParams,
        b: Vec<f64>,
        ground_truth_u: Vec<f64>,
        outlier_mask: Vec<bool>,
        outlier_magnitude: f64,
    },
    Classification {
        params: ClassificationParams,
        labels: Vec<f64>,
        labeled_mask: Vec<bool>,
        signal_dims: usize,
        noise_dims: usize,
        column_means: Vec<f64>,
        direction: Vec<f64>,
        holdout: MatrixFile,
        holdout_labels: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    pub matrix: MatrixFile,
    pub contents: Contents,
}

pub enum Loaded {
    Regression(RegressionDataset),
    Classification(ClassificationDataset, ClassificationDataset),
}

pub fn read_matrix(path: &Path, rows: usize, cols: usize) -> anyhow::Result<DenseMatrix> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    DenseMatrix::from_le_bytes(rows, cols, &bytes).with_context(|| format!("decoding {}", path.display()))
}

fn write_matrix(dir: &Path, name: &str, a: &DenseMatrix) -> anyhow::Result<MatrixFile> {
    let path = dir.join(name);
    fs::write(&path, a.to_le_bytes()).with_context(|| format!("writing {}", path.display()))?;
    Ok(MatrixFile { path: name.into(), rows: a.rows(), cols: a.cols() })
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> anyhow::Result<()> {
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn save_regression(dir: &Path, params: &RegressionParams, seed: u64) -> anyhow::Result<Manifest> {
    let d = params.generate(seed)?;
    fs::create_dir_all(dir)?;
    let matrix = write_matrix(dir, MATRIX, &d.a)?;
    let manifest = Manifest {
        seed,
        matrix,
        contents: Contents::Regression {
            params: params.clone(),
            b: d.b,
            ground_truth_u: d.ground_truth_u,
            outlier_mask: d.outlier_mask,
            outlier_magnitude: d.outlier_magnitude,
        },
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

pub fn save_classification(dir: &Path, params: &ClassificationParams, seed: u64) -> anyhow::Result<Manifest> {
    let (train, holdout) = params.generate(seed)?;
    fs::create_dir_all(dir)?;
    let matrix = write_matrix(dir, MATRIX, &train.x)?;
    let holdout_file = write_matrix(dir, HOLDOUT, &holdout.x)?;
    let manifest = Manifest {
        seed,
        matrix,
        contents: Contents::Classification {
            params: params.clone(),
            labels: train.labels,
            labeled_mask: train.labeled_mask,
            signal_dims: train.signal_dims,
            noise_dims: train.noise_dims,
            column_means: train.column_means,
            direction: train.direction,
            holdout: holdout_file,
            holdout_labels: holdout.labels,
        },
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Reads a dataset back; matrix paths are relative to the manifest.
pub fn load(manifest_path: &Path) -> anyhow::Result<Loaded> {
    let manifest: Manifest = read_json(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let a = read_matrix(&dir.join(&manifest.matrix.path), manifest.matrix.rows, manifest.matrix.cols)?;
    match manifest.contents {
        Contents::Regression { params: _, b, ground_truth_u, outlier_mask, outlier_magnitude } => {
            if b.len() != a.rows() || outlier_mask.len() != a.rows() || ground_truth_u.len() != a.cols() {
                bail!("manifest vectors do not match the {}×{} matrix", a.rows(), a.cols());
            }
            Ok(Loaded::Regression(RegressionDataset { a, b, ground_truth_u, outlier_mask, outlier_magnitude }))
        }
        Contents::Classification {
            params: _,
            labels,
            labeled_mask,
            signal_dims,
            noise_dims,
            column_means,
            direction,
            holdout,
            holdout_labels,
        } => {
            let hx = read_matrix(&dir.join(&holdout.path), holdout.rows, holdout.cols)?;
            let d = a.cols();
            if labels.len() != a.rows()
                || labeled_mask.len() != a.rows()
                || signal_dims + noise_dims != d
                || column_means.len() != d
                || direction.len() != d
                || hx.cols() != d
            {
                bail!("manifest vectors do not match the {}×{} matrix", a.rows(), d);
            }
            let hold = ClassificationDataset {
                x: hx,
                labeled_mask: vec![false; holdout_labels.len()],
                labels: holdout_labels,
                signal_dims,
                noise_dims,
                column_means: column_means.clone(),
                direction: direction.clone(),
            };
            let train = ClassificationDataset { x: a, labels, labeled_mask, signal_dims, noise_dims, column_means, direction };
            Ok(Loaded::Classification(train, hold))
        }
    }
}
