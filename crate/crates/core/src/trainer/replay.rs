use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::AblationFlags;
use crate::data::TaskSplit;
use crate::error::{Error, Result};
use crate::model::ReplayModel;
use crate::tensor::{softmax_row, Tape, Tensor};

/// Samples generated by the previous model for one optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBatch {
    /// Level the samples live at (0 = input).
    pub level: usize,
    pub targets_at_replay_level: Tensor,
    /// Teacher probabilities at the distillation temperature, `[n, num_classes]`,
    /// zero outside the teacher's classes.
    pub soft_labels: Tensor,
    /// Teacher argmax over its classes.
    pub hard_labels: Vec<usize>,
    pub latents_used: Tensor,
    /// Class each row was generated for (conditional) or attributed to by the
    /// teacher (unconditional).
    pub source_classes: Vec<usize>,
    /// Task whose context gates shaped each row, when gating is on.
    pub gate_tasks: Option<Vec<usize>>,
}

/// Settings that shape a replay batch.
#[derive(Debug, Clone, Copy)]
pub struct ReplaySettings {
    pub level: usize,
    pub temperature: f64,
}

/// Draws `n` samples from `teacher` for the classes in `seen_classes`, which
/// must be exactly the classes of the tasks before the current one.
pub fn generate_replay_batch<R: Rng>(
    teacher: &ReplayModel,
    n: usize,
    seen_classes: &[usize],
    split: &TaskSplit,
    flags: &AblationFlags,
    settings: ReplaySettings,
    rng: &mut R,
) -> Result<ReplayBatch> {
    if seen_classes.is_empty() {
        return Err(Error::contract("replay requested before any class was seen"));
    }
    if n == 0 {
        return Err(Error::contract("empty replay batch"));
    }
    let cfg = teacher.config();
    let d = cfg.latent_dim;
    let prev_tasks: Vec<usize> = {
        let mut t = seen_classes
            .iter()
            .map(|&c| split.task_of(c).ok_or_else(|| Error::contract(format!("class {c} has no task"))))
            .collect::<Result<Vec<_>>>()?;
        t.sort_unstable();
        t.dedup();
        t
    };

    let mut z = Vec::with_capacity(n * d);
    let mut sampled = Vec::new();
    if flags.conditional_replay {
        for _ in 0..n {
            let c = seen_classes[rng.gen_range(0..seen_classes.len())];
            let row = teacher.prior.sample_conditional(c, 1, rng)?;
            z.extend_from_slice(row.data());
            sampled.push(c);
        }
    } else {
        for _ in 0..n * d {
            let e: f64 = StandardNormal.sample(&mut *rng);
            z.push(e);
        }
    }
    let gate_tasks = if flags.context_gating {
        Some(if flags.conditional_replay {
            sampled.iter().map(|&c| split.task_of(c).unwrap_or(0)).collect()
        } else {
            (0..n).map(|_| prev_tasks[rng.gen_range(0..prev_tasks.len())]).collect::<Vec<_>>()
        })
    } else {
        None
    };
    let latents_used = Tensor::new(vec![n, d], z)?;

    let mut tape = Tape::new();
    let b = teacher.bind_frozen(&mut tape);
    let zv = tape.constant(&latents_used);
    let x = b.decode(&mut tape, zv, gate_tasks.as_deref(), settings.level)?;
    let enc = b.encode_from(&mut tape, x, settings.level)?;
    let targets_at_replay_level = tape.tensor(x);

    let mut active = seen_classes.to_vec();
    active.sort_unstable();
    let k = cfg.num_classes;
    let logits = tape.value(enc.logits);
    let mut soft = vec![0.0; n * k];
    let mut hard = Vec::with_capacity(n);
    let mut picked = vec![0.0; active.len()];
    let mut probs = vec![0.0; active.len()];
    for i in 0..n {
        let row = &logits[i * k..(i + 1) * k];
        for (p, &c) in picked.iter_mut().zip(&active) {
            *p = row[c];
        }
        softmax_row(&picked, settings.temperature, &mut probs);
        let mut best = 0;
        for (j, &c) in active.iter().enumerate() {
            soft[i * k + c] = probs[j];
            if picked[j] > picked[best] {
                best = j;
            }
        }
        hard.push(active[best]);
    }
    let source_classes = if flags.conditional_replay { sampled } else { hard.clone() };
    if let Some(c) = source_classes.iter().find(|c| !seen_classes.contains(c)) {
        return Err(Error::Replay(format!("replayed class {c} was not seen by the teacher")));
    }
    Ok(ReplayBatch {
        level: settings.level,
        targets_at_replay_level,
        soft_labels: Tensor::new(vec![n, k], soft)?,
        hard_labels: hard,
        latents_used,
        source_classes,
        gate_tasks,
    })
}
