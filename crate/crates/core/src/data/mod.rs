//! Datasets, binary loaders and class-incremental task splits.

mod cifar;
mod idx;
mod split;
mod synthetic;

pub use cifar::{load_cifar100_binary, CIFAR_RECORD_BYTES};
pub use idx::{load_idx, write_idx_images, write_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use split::{split_into_tasks, TaskSplit};
pub use synthetic::{make_synthetic_blobs, CLASS_MEAN_NORM};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Labelled samples stored as a dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

/// A train/test pair drawn from the same classes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTest {
    pub train: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("input dimensionality must be positive".into()));
        }
        if inputs.len() != dim * labels.len() {
            return Err(Error::Data(format!(
                "{} input values do not form {} rows of width {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Data(format!(
                "label {l} outside [0, {num_classes})"
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite input value".into()));
        }
        Ok(Dataset {
            inputs,
            dim,
            labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    /// True when every input value lies in `[0, 1]`.
    pub fn is_unit_scaled(&self) -> bool {
        self.inputs.iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Rows `idx` as an `[idx.len(), dim]` tensor plus their labels.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(Error::Data(format!("sample {i} out of range")));
            }
            data.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Ok((Tensor::new(vec![idx.len(), self.dim], data)?, labels))
    }

    /// New dataset holding the given rows in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let (x, labels) = self.batch(idx)?;
        Dataset::new(x.into_data(), self.dim, labels, self.num_classes, self.split)
    }

    /// Indices of samples whose label is in `classes`, in dataset order.
    pub fn indices_of(&self, classes: &[usize]) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| classes.contains(l))
            .map(|(i, _)| i)
            .collect()
    }
}
