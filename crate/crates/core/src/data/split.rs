use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};

/// Class-incremental partition: disjoint class groups with per-task sample indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSplit {
    pub tasks: Vec<Vec<usize>>,
    pub train_indices: Vec<Vec<usize>>,
    pub test_indices: Vec<Vec<usize>>,
}

impl TaskSplit {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Task that owns `class`, if any.
    pub fn task_of(&self, class: usize) -> Option<usize> {
        self.tasks.iter().position(|t| t.contains(&class))
    }

    /// Classes of tasks `0..=task`, in task order.
    pub fn classes_up_to(&self, task: usize) -> Vec<usize> {
        self.tasks[..=task].iter().flatten().copied().collect()
    }

    pub fn covered_classes(&self) -> Vec<usize> {
        self.tasks.iter().flatten().copied().collect()
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in self.tasks.iter().flatten() {
            if !seen.insert(*c) {
                return Err(Error::contract(format!("class {c} appears in two tasks")));
            }
        }
        for indices in [&self.train_indices, &self.test_indices] {
            let mut seen = BTreeSet::new();
            for i in indices.iter().flatten() {
                if !seen.insert(*i) {
                    return Err(Error::contract(format!("sample {i} appears in two tasks")));
                }
            }
        }
        Ok(())
    }
}

/// Splits classes into `num_tasks` groups of `classes_per_task`.
///
/// Classes are taken in ascending order, or in a seeded shuffle when
/// `order_seed` is given.
pub fn split_into_tasks(
    train: &Dataset,
    test: &Dataset,
    num_tasks: usize,
    classes_per_task: usize,
    order_seed: Option<u64>,
) -> Result<TaskSplit> {
    if num_tasks == 0 || classes_per_task == 0 {
        return Err(Error::config(
            "num_tasks",
            "need at least one task with at least one class",
        ));
    }
    let available = train.num_classes().min(test.num_classes());
    let needed = num_tasks * classes_per_task;
    if needed > available {
        return Err(Error::config(
            "num_tasks",
            format!("{num_tasks} tasks x {classes_per_task} classes needs {needed} classes, dataset has {available}"),
        ));
    }
    let mut order: Vec<usize> = (0..available).collect();
    if let Some(seed) = order_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let tasks: Vec<Vec<usize>> = order[..needed]
        .chunks(classes_per_task)
        .map(<[usize]>::to_vec)
        .collect();
    let train_indices = tasks.iter().map(|t| train.indices_of(t)).collect();
    let test_indices = tasks.iter().map(|t| test.indices_of(t)).collect();
    let split = TaskSplit {
        tasks,
        train_indices,
        test_indices,
    };
    split.validate()?;
    Ok(split)
}
