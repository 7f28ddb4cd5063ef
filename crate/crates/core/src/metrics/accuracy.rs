use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ReplayModel;
use crate::tensor::Tape;

const EVAL_CHUNK: usize = 512;

/// `acc[t][e]`: accuracy on task `e`'s test set right after training task `t`,
/// defined for `e <= t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    num_tasks: usize,
    rows: Vec<Vec<Option<f64>>>,
}

/// One row of the per-task metric table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: usize,
    pub initial_acc: f64,
    pub final_acc: f64,
    pub retention_ratio: Option<f64>,
    pub forgetting_score: f64,
}

impl AccuracyMatrix {
    pub fn new(num_tasks: usize) -> Self {
        AccuracyMatrix {
            num_tasks,
            rows: (0..num_tasks).map(|t| vec![None; t + 1]).collect(),
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn set(&mut self, trained: usize, eval: usize, acc: f64) -> Result<()> {
        if trained >= self.num_tasks || eval > trained {
            return Err(Error::contract(format!(
                "entry ({trained}, {eval}) outside the lower triangle of a {}-task matrix",
                self.num_tasks
            )));
        }
        if !(0.0..=1.0).contains(&acc) {
            return Err(Error::contract(format!("accuracy {acc} outside [0, 1]")));
        }
        self.rows[trained][eval] = Some(acc);
        Ok(())
    }

    pub fn get(&self, trained: usize, eval: usize) -> Option<f64> {
        self.rows.get(trained).and_then(|r| r.get(eval)).copied().flatten()
    }

    pub fn is_complete(&self) -> bool {
        self.rows.iter().flatten().all(Option::is_some)
    }

    pub fn initial_accuracy(&self, task: usize) -> Option<f64> {
        self.get(task, task)
    }

    pub fn final_accuracy(&self, task: usize) -> Option<f64> {
        self.num_tasks.checked_sub(1).and_then(|last| self.get(last, task))
    }

    /// Defined entries in `(trained, eval)` row-major order.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (t, row) in self.rows.iter().enumerate() {
            for (e, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    out.push((t, e, *v));
                }
            }
        }
        out
    }

    /// Per-task initial/final accuracy, retention ratio and forgetting score.
    pub fn task_metrics(&self) -> Result<Vec<TaskMetrics>> {
        (0..self.num_tasks)
            .map(|e| {
                let initial = self
                    .initial_accuracy(e)
                    .ok_or_else(|| Error::contract(format!("initial accuracy of task {e} missing")))?;
                let fin = self
                    .final_accuracy(e)
                    .ok_or_else(|| Error::contract(format!("final accuracy of task {e} missing")))?;
                Ok(TaskMetrics {
                    task: e,
                    initial_acc: initial,
                    final_acc: fin,
                    retention_ratio: retention_ratio(initial, fin),
                    forgetting_score: forgetting_score(initial, fin),
                })
            })
            .collect()
    }
}

/// `final / initial`; `None` when the initial accuracy is zero.
pub fn retention_ratio(initial: f64, final_acc: f64) -> Option<f64> {
    (initial > 0.0).then(|| final_acc / initial)
}

/// `initial − final`; negative under backward transfer.
pub fn forgetting_score(initial: f64, final_acc: f64) -> f64 {
    initial - final_acc
}

/// Argmax over `active` class logits for each row of `data[indices]`.
/// Ties resolve to the lowest class id.
pub fn predict_classes(
    model: &ReplayModel,
    data: &Dataset,
    indices: &[usize],
    active: &[usize],
) -> Result<Vec<usize>> {
    if active.is_empty() {
        return Err(Error::contract("no active classes"));
    }
    let mut sorted = active.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    let k = model.config().num_classes;
    if let Some(&c) = sorted.iter().find(|&&c| c >= k) {
        return Err(Error::contract(format!("class {c} outside a {k}-way head")));
    }
    let mut out = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, _) = data.batch(chunk)?;
        let mut tape = Tape::new();
        let b = model.bind_frozen(&mut tape);
        let xv = tape.constant(&x);
        let enc = b.encode(&mut tape, xv)?;
        let logits = tape.value(enc.logits);
        for row in logits.chunks(k) {
            let mut best = sorted[0];
            for &c in &sorted[1..] {
                if row[c] > row[best] {
                    best = c;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Fraction of `data[indices]` whose argmax over `active` equals the label.
pub fn evaluate_accuracy(
    model: &ReplayModel,
    data: &Dataset,
    indices: &[usize],
    active: &[usize],
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty test set".into()));
    }
    for &i in indices {
        let l = *data
            .labels()
            .get(i)
            .ok_or_else(|| Error::Data(format!("sample {i} out of range")))?;
        if !active.contains(&l) {
            return Err(Error::contract(format!("test label {l} not among active classes")));
        }
    }
    let pred = predict_classes(model, data, indices, active)?;
    let hits = pred
        .iter()
        .zip(indices)
        .filter(|(p, &i)| **p == data.labels()[i])
        .count();
    Ok(hits as f64 / indices.len() as f64)
}
