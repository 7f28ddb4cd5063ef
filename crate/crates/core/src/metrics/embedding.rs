use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskSplit};
use crate::error::{Error, Result};
use crate::model::ReplayModel;
use crate::tensor::Tape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub task: usize,
    pub class: usize,
    pub values: Vec<f64>,
}

/// Hidden activations of one encoder layer, one row per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingDump {
    pub layer: String,
    pub dim: usize,
    pub rows: Vec<EmbeddingRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKey {
    Class,
    Task,
}

impl EmbeddingDump {
    pub fn new(layer: impl Into<String>, dim: usize, rows: Vec<EmbeddingRow>) -> Result<Self> {
        if let Some(r) = rows.iter().find(|r| r.values.len() != dim) {
            return Err(Error::dim(format!("row of width {} in a {dim}-wide dump", r.values.len())));
        }
        Ok(EmbeddingDump {
            layer: layer.into(),
            dim,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows belonging to `task`, order preserved.
    pub fn for_task(&self, task: usize) -> EmbeddingDump {
        EmbeddingDump {
            layer: self.layer.clone(),
            dim: self.dim,
            rows: self.rows.iter().filter(|r| r.task == task).cloned().collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.values.iter().copied()).collect()
    }

    pub fn labels(&self, key: LabelKey) -> Vec<usize> {
        self.rows
            .iter()
            .map(|r| match key {
                LabelKey::Class => r.class,
                LabelKey::Task => r.task,
            })
            .collect()
    }
}

/// Activations of fully connected layer `layer_index` for `data[indices]`,
/// in the given order.
pub fn extract_embeddings(
    model: &ReplayModel,
    data: &Dataset,
    indices: &[usize],
    split: &TaskSplit,
    layer_index: usize,
) -> Result<EmbeddingDump> {
    let cfg = model.config();
    if layer_index >= cfg.fc_dims.len() {
        return Err(Error::contract(format!(
            "layer {layer_index} outside a {}-layer fc stack",
            cfg.fc_dims.len()
        )));
    }
    let level = cfg.fc_level(layer_index);
    let dim = cfg.level_width(level);
    let mut rows = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(512) {
        let (x, labels) = data.batch(chunk)?;
        let mut tape = Tape::new();
        let b = model.bind_frozen(&mut tape);
        let xv = tape.constant(&x);
        let h = b.lift(&mut tape, xv, 0, level)?;
        for (values, class) in tape.value(h).chunks(dim).zip(labels) {
            let task = split
                .task_of(class)
                .ok_or_else(|| Error::contract(format!("class {class} belongs to no task")))?;
            rows.push(EmbeddingRow {
                task,
                class,
                values: values.to_vec(),
            });
        }
    }
    EmbeddingDump::new(format!("fcE.fcLayer{}.linear", layer_index + 1), dim, rows)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-sample silhouette values for points stored row-major with width `dim`.
///
/// Members of singleton clusters get 0.
pub fn silhouette_samples(points: &[f64], dim: usize, labels: &[usize]) -> Result<Vec<f64>> {
    if dim == 0 || points.len() != dim * labels.len() {
        return Err(Error::dim("points do not match labels"));
    }
    let mut clusters: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *clusters.entry(l).or_default() += 1;
    }
    if clusters.len() < 2 {
        return Err(Error::contract("silhouette needs at least two clusters"));
    }
    let slot: BTreeMap<usize, usize> = clusters.keys().enumerate().map(|(i, &l)| (l, i)).collect();
    let sizes: Vec<usize> = clusters.values().copied().collect();
    let n = labels.len();
    let mut out = Vec::with_capacity(n);
    let mut sums = vec![0.0; sizes.len()];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        let pi = &points[i * dim..(i + 1) * dim];
        for j in 0..n {
            if i != j {
                sums[slot[&labels[j]]] += dist(pi, &points[j * dim..(j + 1) * dim]);
            }
        }
        let own = slot[&labels[i]];
        if sizes[own] == 1 {
            out.push(0.0);
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..sizes.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        out.push(if m > 0.0 { (b - a) / m } else { 0.0 });
    }
    Ok(out)
}

/// Mean silhouette over all rows, clusters keyed by `key`.
pub fn silhouette_score(dump: &EmbeddingDump, key: LabelKey) -> Result<f64> {
    let mut s = silhouette_samples(&dump.flat(), dump.dim, &dump.labels(key))?;
    s.sort_by(f64::total_cmp);
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}
