//! Synthetic and CSV-backed datasets with seeded, bit-reproducible
//! generation.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Linear targets from a sparse ground-truth coefficient vector plus
    /// Gaussian noise.
    PlantedSparseRegression {
        dim: usize,
        true_support_size: usize,
        noise_std: f64,
        n_samples: usize,
        seed: u64,
    },
    /// Isotropic Gaussian blobs with means `separation` apart from the
    /// origin.
    GaussianMixtureClassification {
        dim: usize,
        classes: usize,
        separation: f64,
        n_samples: usize,
        seed: u64,
    },
    /// CSV with a header row, numeric feature columns and one label column.
    CsvFile { path: PathBuf, label_column: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub source: DataSource,
    /// Leading fraction of samples used for training; the rest evaluate.
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression { values: Vec<f64>, output_dim: usize },
    Labels(Vec<usize>),
}

impl Targets {
    fn slice_rows(&self, range: std::ops::Range<usize>) -> Targets {
        match self {
            Targets::Regression { values, output_dim } => Targets::Regression {
                values: values[range.start * output_dim..range.end * output_dim].to_vec(),
                output_dim: *output_dim,
            },
            Targets::Labels(labels) => Targets::Labels(labels[range].to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub train_features: Vec<f64>,
    pub train_targets: Targets,
    pub eval_features: Vec<f64>,
    pub eval_targets: Targets,
    /// Ground-truth support indices for planted regression problems.
    pub planted_support: Option<Vec<usize>>,
}

impl Dataset {
    pub fn n_train(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.train_features.len() / self.dim
        }
    }

    pub fn n_eval(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.eval_features.len() / self.dim
        }
    }

    /// Whether targets are class labels (accuracy metric) rather than
    /// regression values (MSE metric).
    pub fn is_classification(&self) -> bool {
        matches!(self.train_targets, Targets::Labels(_))
    }

    pub fn build(spec: &DatasetSpec) -> Result<Dataset> {
        if !(0.0..=1.0).contains(&spec.train_fraction) {
            return Err(Error::InvalidConfig(format!(
                "train fraction must lie in [0, 1], got {}",
                spec.train_fraction
            )));
        }
        let (dim, features, targets, planted) = match &spec.source {
            DataSource::PlantedSparseRegression {
                dim,
                true_support_size,
                noise_std,
                n_samples,
                seed,
            } => {
                if *true_support_size > *dim {
                    return Err(Error::InvalidConfig(
                        "true support larger than dimension".into(),
                    ));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut indices: Vec<usize> = (0..*dim).collect();
                indices.shuffle(&mut rng);
                let mut support: Vec<usize> = indices[..*true_support_size].to_vec();
                support.sort_unstable();
                let mut coef = vec![0.0; *dim];
                for &i in &support {
                    let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    coef[i] = sign * (0.5 + rng.gen::<f64>());
                }
                let n = *n_samples;
                let mut features = Vec::with_capacity(n * dim);
                let mut values = Vec::with_capacity(n);
                for _ in 0..n {
                    let start = features.len();
                    for _ in 0..*dim {
                        features.push(StandardNormal.sample(&mut rng));
                    }
                    let x = &features[start..];
                    let mut y = 0.0;
                    for &i in &support {
                        y += coef[i] * x[i];
                    }
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    values.push(y + noise_std * eps);
                }
                (
                    *dim,
                    features,
                    Targets::Regression {
                        values,
                        output_dim: 1,
                    },
                    Some(support),
                )
            }
            DataSource::GaussianMixtureClassification {
                dim,
                classes,
                separation,
                n_samples,
                seed,
            } => {
                if *classes < 2 {
                    return Err(Error::InvalidConfig("need at least 2 classes".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut means = Vec::with_capacity(*classes);
                for _ in 0..*classes {
                    let raw: Vec<f64> =
                        (0..*dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                    means.push(raw.iter().map(|x| separation * x / norm).collect::<Vec<f64>>());
                }
                let n = *n_samples;
                let mut features = Vec::with_capacity(n * dim);
                let mut labels = Vec::with_capacity(n);
                for _ in 0..n {
                    let label = rng.gen_range(0..*classes);
                    labels.push(label);
                    for j in 0..*dim {
                        let eps: f64 = StandardNormal.sample(&mut rng);
                        features.push(means[label][j] + eps);
                    }
                }
                (*dim, features, Targets::Labels(labels), None)
            }
            DataSource::CsvFile { path, label_column } => {
                let (dim, features, targets) = load_csv(path, label_column)?;
                (dim, features, targets, None)
            }
        };

        let n = if dim == 0 { 0 } else { features.len() / dim };
        let n_train = ((n as f64) * spec.train_fraction).round() as usize;
        let n_train = n_train.min(n);
        Ok(Dataset {
            dim,
            train_features: features[..n_train * dim].to_vec(),
            train_targets: targets.slice_rows(0..n_train),
            eval_features: features[n_train * dim..].to_vec(),
            eval_targets: targets.slice_rows(n_train..n),
            planted_support: planted,
        })
    }
}

/// Parses a CSV with a header row. Every column except the label column
/// becomes a feature. Integer-valued label columns load as class labels,
/// anything else as regression targets.
fn load_csv(path: &Path, label_column: &str) -> Result<(usize, Vec<f64>, Targets)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse(format!("{}: empty file", path.display())))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let label_idx = columns
        .iter()
        .position(|c| *c == label_column)
        .ok_or_else(|| {
            Error::Parse(format!(
                "{}: no column named '{label_column}'",
                path.display()
            ))
        })?;
    let dim = columns.len() - 1;
    if dim == 0 {
        return Err(Error::Parse(format!(
            "{}: need at least one feature column",
            path.display()
        )));
    }

    let mut features = Vec::new();
    let mut raw_labels = Vec::new();
    for (line_no, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(Error::Parse(format!(
                "{}:{}: expected {} fields, got {}",
                path.display(),
                line_no + 2,
                columns.len(),
                fields.len()
            )));
        }
        for (i, field) in fields.iter().enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                Error::Parse(format!(
                    "{}:{}: '{field}' is not a number",
                    path.display(),
                    line_no + 2
                ))
            })?;
            if i == label_idx {
                raw_labels.push(value);
            } else {
                features.push(value);
            }
        }
    }
    if raw_labels.is_empty() {
        return Err(Error::Parse(format!("{}: no data rows", path.display())));
    }

    let integral = raw_labels
        .iter()
        .all(|&v| v >= 0.0 && v.fract() == 0.0 && v < 1e9);
    let targets = if integral {
        Targets::Labels(raw_labels.iter().map(|&v| v as usize).collect())
    } else {
        Targets::Regression {
            values: raw_labels,
            output_dim: 1,
        }
    };
    Ok((dim, features, targets))
}
