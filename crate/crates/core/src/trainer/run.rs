use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::{mix_weights, AblationFlags, TrainerConfig};
use super::replay::{generate_replay_batch, ReplaySettings};
use crate::data::{split_into_tasks, Dataset, TaskSplit, TrainTest};
use crate::error::{Error, Result};
use crate::losses::{
    classification_loss, distillation_loss, kl_labeled_modes, kl_standard_normal,
    reconstruction_loss, LossBreakdown, SiState,
};
use crate::metrics::{
    estimate_log_likelihood, evaluate_accuracy, extract_embeddings, pca_project_2d,
    reconstruction_error_distribution, silhouette_score, AccuracyMatrix, DistributionSummary,
    EmbeddingDump, LabelKey, LevelView, Projection, TaskMetrics,
};
use crate::model::{
    pretrain_perceptual_block, reparameterize, save_checkpoint, Bound, EncodeOutput,
    PretrainReport, ReplayModel,
};
use crate::tensor::{Optimizer, Tape, Tensor, Var};

/// Independent random streams derived from one seed.
#[derive(Debug, Clone)]
pub struct RunRngs {
    pub init: ChaCha8Rng,
    pub shuffle: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub replay: ChaCha8Rng,
    pub pretrain: ChaCha8Rng,
    pub diagnostics: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(id);
            r
        };
        RunRngs {
            init: stream(0),
            shuffle: stream(1),
            noise: stream(2),
            replay: stream(3),
            pretrain: stream(4),
            diagnostics: stream(5),
        }
    }
}

/// Training slice of one task.
#[derive(Debug, Clone, Copy)]
pub struct TaskData<'a> {
    /// 0-based task index.
    pub task: usize,
    pub data: &'a Dataset,
    pub indices: &'a [usize],
    pub split: &'a TaskSplit,
}

/// State carried across tasks.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub optimizer: Optimizer,
    pub si: Option<SiState>,
    /// Parameter groups tracked by SI, as indices into `ReplayModel::params`.
    pub tracked: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: usize,
    pub steps: usize,
    /// Mean loss components of each epoch.
    pub epoch_losses: Vec<LossBreakdown>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub pretrain_seconds: f64,
    pub task_seconds: Vec<f64>,
    pub diagnostics_seconds: f64,
}

/// Post-training measurements of the final model on the test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub view: LevelView,
    pub log_likelihood: DistributionSummary,
    pub reconstruction_error: DistributionSummary,
    pub embeddings: EmbeddingDump,
    /// Per task, silhouette of its test embeddings keyed by class.
    pub silhouette: Vec<Option<f64>>,
    /// Per task, a PCA fitted to its test embeddings.
    pub projections: Vec<Projection>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub flags: AblationFlags,
    pub config: TrainerConfig,
    pub split: TaskSplit,
    pub accuracy: AccuracyMatrix,
    pub metrics: Vec<TaskMetrics>,
    pub pretrain: PretrainReport,
    pub task_reports: Vec<TaskReport>,
    pub diagnostics: Diagnostics,
    pub timings: Timings,
    pub model: ReplayModel,
}

/// `n` evenly strided elements of `items`, or all of them.
pub fn strided(items: &[usize], n: Option<usize>) -> Vec<usize> {
    match n {
        Some(n) if n < items.len() => (0..n).map(|i| items[i * items.len() / n]).collect(),
        _ => items.to_vec(),
    }
}

/// Indices into `model.params()` of the groups that currently receive gradients.
pub fn trainable_groups(model: &ReplayModel) -> Vec<usize> {
    model
        .params()
        .iter()
        .enumerate()
        .filter(|(_, t)| t.requires_grad())
        .map(|(i, _)| i)
        .collect()
}

fn tracked_values(model: &ReplayModel, tracked: &[usize]) -> Vec<Vec<f64>> {
    let params = model.params();
    tracked.iter().map(|&i| params[i].data().to_vec()).collect()
}

fn noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<Tensor> {
    let data = (0..rows * cols)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            e
        })
        .collect();
    Tensor::new(vec![rows, cols], data)
}

/// Weighted `Σ wᵢ·termᵢ` on the tape, skipping absent terms.
fn weighted_sum(tape: &mut Tape, terms: &[(Option<Var>, f64)]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for &(term, w) in terms {
        if let Some(t) = term {
            let s = tape.scale(t, w)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, s)?,
                None => s,
            });
        }
    }
    acc.ok_or_else(|| Error::contract("empty objective"))
}

struct Terms {
    recon: Var,
    kl: Var,
    class: Var,
    distill: Option<Var>,
}

#[allow(clippy::too_many_arguments)]
fn latent_terms(
    b: &Bound<'_>,
    tape: &mut Tape,
    enc: &EncodeOutput,
    target: Var,
    level: usize,
    labels: &[usize],
    gates: Option<&[usize]>,
    flags: &AblationFlags,
    rng: &mut ChaCha8Rng,
) -> Result<(Var, Var)> {
    let cfg = b.config();
    let rows = labels.len();
    let eps = noise(rng, rows, cfg.latent_dim)?;
    let ev = tape.constant(&eps);
    let z = reparameterize(tape, enc.latent, ev)?;
    let pred = b.decode(tape, z, gates, level)?;
    let recon = reconstruction_loss(tape, pred, target, cfg.recon_kind(level))?;
    let kl = if flags.conditional_replay {
        kl_labeled_modes(tape, enc.latent, b.prior_means, b.prior_logvars, labels)?
    } else {
        kl_standard_normal(tape, enc.latent)?
    };
    Ok((recon, kl))
}

/// Trains `model` on one task. `teacher` is the model as it stood after the
/// previous task and must be present exactly when replay is due.
pub fn train_task(
    model: &mut ReplayModel,
    task: TaskData<'_>,
    teacher: Option<&ReplayModel>,
    state: &mut TrainState,
    cfg: &TrainerConfig,
    flags: &AblationFlags,
    rngs: &mut RunRngs,
) -> Result<TaskReport> {
    let replaying = flags.replay && task.task > 0;
    if replaying && teacher.is_none() {
        return Err(Error::contract("replay requested with no previous model"));
    }
    if task.task == 0 && teacher.is_some() {
        return Err(Error::contract("the first task has no previous model"));
    }
    if task.indices.is_empty() {
        return Err(Error::Data(format!("task {} has no training samples", task.task + 1)));
    }
    let level = cfg.replay_level(flags);
    let active = task.split.classes_up_to(task.task);
    let mut sorted_active = active.clone();
    sorted_active.sort_unstable();
    let mut prev_active = if task.task > 0 {
        task.split.classes_up_to(task.task - 1)
    } else {
        Vec::new()
    };
    prev_active.sort_unstable();
    let (w_cur, w_rep) = mix_weights(task.task + 1, cfg.replay_weight)?;
    let w = cfg.loss_weights;
    let settings = ReplaySettings {
        level,
        temperature: cfg.temperature,
    };

    let mut order = task.indices.to_vec();
    let mut steps = 0;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs_per_task);
    for _ in 0..cfg.epochs_per_task {
        order.shuffle(&mut rngs.shuffle);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = task.data.batch(chunk)?;
            let replay = match (replaying, teacher) {
                (true, Some(t)) => Some(generate_replay_batch(
                    t,
                    cfg.replay_batch(),
                    &prev_active,
                    task.split,
                    flags,
                    settings,
                    &mut rngs.replay,
                )?),
                _ => None,
            };

            let mut tape = Tape::new();
            let b = model.bind(&mut tape);
            let xv = tape.constant(&x);
            let enc = b.encode(&mut tape, xv)?;
            let target = enc.level(level)?;
            let gates: Option<Vec<usize>> = flags.context_gating.then(|| vec![task.task; labels.len()]);
            let (recon, kl) = latent_terms(
                &b,
                &mut tape,
                &enc,
                target,
                level,
                &labels,
                gates.as_deref(),
                flags,
                &mut rngs.noise,
            )?;
            let class = classification_loss(&mut tape, enc.logits, &labels, &active)?;
            let current = Terms {
                recon,
                kl,
                class,
                distill: None,
            };

            let replayed = match &replay {
                Some(r) => {
                    let rx = tape.constant(&r.targets_at_replay_level);
                    let renc = b.encode_from(&mut tape, rx, level)?;
                    let (recon, kl) = latent_terms(
                        &b,
                        &mut tape,
                        &renc,
                        rx,
                        level,
                        &r.source_classes,
                        r.gate_tasks.as_deref(),
                        flags,
                        &mut rngs.noise,
                    )?;
                    let (class, distill) = if flags.distillation {
                        let s = tape.select_cols(renc.logits, &sorted_active)?;
                        let soft = Tensor::new(
                            vec![r.soft_labels.rows(), sorted_active.len()],
                            (0..r.soft_labels.rows())
                                .flat_map(|i| sorted_active.iter().map(move |&c| (i, c)))
                                .map(|(i, c)| r.soft_labels.row(i)[c])
                                .collect(),
                        )?;
                        let d = distillation_loss(&mut tape, s, &soft, cfg.temperature)?;
                        (d, Some(d))
                    } else {
                        let c = classification_loss(&mut tape, renc.logits, &r.hard_labels, &active)?;
                        (c, None)
                    };
                    Some(Terms {
                        recon,
                        kl,
                        class,
                        distill,
                    })
                }
                None => None,
            };

            let objective = |tape: &mut Tape, t: &Terms| {
                let class_w = if t.distill.is_some() { w.distillation } else { w.classification };
                weighted_sum(
                    tape,
                    &[
                        (Some(t.recon), w.reconstruction),
                        (Some(t.kl), w.kl),
                        (Some(t.class), class_w),
                    ],
                )
            };
            let cur_obj = objective(&mut tape, &current)?;
            let mut total = match &replayed {
                Some(r) => {
                    let rep_obj = objective(&mut tape, r)?;
                    weighted_sum(&mut tape, &[(Some(cur_obj), w_cur), (Some(rep_obj), w_rep)])?
                }
                None => cur_obj,
            };
            let mut si_value = 0.0;
            if flags.synaptic_intelligence {
                if let Some(si) = &state.si {
                    let order = b.order();
                    let vars: Vec<Var> = state.tracked.iter().map(|&i| order[i]).collect();
                    let p = si.penalty(&mut tape, &vars)?;
                    si_value = tape.scalar(p)?;
                    total = tape.add(total, p)?;
                }
            }

            let value = |tape: &Tape, v: Var| tape.scalar(v);
            let mix = |c: f64, r: Option<f64>| match r {
                Some(r) => w_cur * c + w_rep * r,
                None => c,
            };
            let opt = |t: &Option<Terms>, f: fn(&Terms) -> Var| t.as_ref().map(|t| value(&tape, f(t)));
            let step = LossBreakdown {
                reconstruction: mix(value(&tape, current.recon)?, opt(&replayed, |t| t.recon).transpose()?),
                kl: mix(value(&tape, current.kl)?, opt(&replayed, |t| t.kl).transpose()?),
                classification: mix(
                    value(&tape, current.class)?,
                    replayed
                        .as_ref()
                        .filter(|t| t.distill.is_none())
                        .map(|t| value(&tape, t.class))
                        .transpose()?,
                ),
                distillation: replayed
                    .as_ref()
                    .and_then(|t| t.distill)
                    .map(|d| value(&tape, d).map(|v| w_rep * v))
                    .transpose()?
                    .unwrap_or(0.0),
                si_penalty: si_value,
                total: value(&tape, total)?,
            };
            if !step.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }

            tape.backward(total)?;
            let bind_order = b.order().to_vec();
            drop(b);
            model.load_grads(&tape, &bind_order)?;
            let before = state.si.as_ref().map(|_| tracked_values(model, &state.tracked));
            state.optimizer.step(&mut model.params_mut())?;
            if let (Some(si), Some(before)) = (state.si.as_mut(), before) {
                let params = model.params();
                let grads: Vec<&[f64]> = state
                    .tracked
                    .iter()
                    .map(|&i| params[i].grad().ok_or_else(|| Error::contract("tracked parameter lost its gradient")))
                    .collect::<Result<_>>()?;
                let deltas: Vec<Vec<f64>> = state
                    .tracked
                    .iter()
                    .zip(&before)
                    .map(|(&i, old)| params[i].data().iter().zip(old).map(|(n, o)| n - o).collect())
                    .collect();
                let delta_refs: Vec<&[f64]> = deltas.iter().map(Vec::as_slice).collect();
                si.accumulate(&grads, &delta_refs)?;
            }

            sum.reconstruction += step.reconstruction;
            sum.kl += step.kl;
            sum.classification += step.classification;
            sum.distillation += step.distillation;
            sum.si_penalty += step.si_penalty;
            sum.total += step.total;
            batches += 1;
            steps += 1;
        }
        let n = batches.max(1) as f64;
        epoch_losses.push(LossBreakdown {
            reconstruction: sum.reconstruction / n,
            kl: sum.kl / n,
            classification: sum.classification / n,
            distillation: sum.distillation / n,
            si_penalty: sum.si_penalty / n,
            total: sum.total / n,
        });
    }
    Ok(TaskReport {
        task: task.task,
        steps,
        epoch_losses,
    })
}

/// Fresh model for a run: initialized from the `init` stream with gates seeded by `seed`.
pub fn build_model(
    cfg: &TrainerConfig,
    flags: &AblationFlags,
    data: &TrainTest,
    rngs: &mut RunRngs,
) -> Result<ReplayModel> {
    if data.train.dim() != data.test.dim() {
        return Err(Error::Data("train and test inputs differ in width".into()));
    }
    let unit = data.train.is_unit_scaled() && data.test.is_unit_scaled();
    let classes = data.train.num_classes().max(data.test.num_classes());
    let net = cfg.network_config(data.train.dim(), classes, unit)?;
    ReplayModel::new(net, flags.conditional_replay, cfg.seed, &mut rngs.init)
}

/// Measures the final model on the test samples of every task.
pub fn compute_diagnostics(
    model: &ReplayModel,
    cfg: &TrainerConfig,
    flags: &AblationFlags,
    split: &TaskSplit,
    test: &Dataset,
    rng: &mut ChaCha8Rng,
) -> Result<Diagnostics> {
    let replay_level = cfg.replay_level(flags);
    let eval_level = cfg.diagnostics.common_level.unwrap_or(cfg.network.internal_replay_level);
    if eval_level < replay_level {
        return Err(Error::config(
            "diagnostics.common_level",
            format!("level {eval_level} lies below the replay level {replay_level}"),
        ));
    }
    let view = LevelView {
        decode_level: replay_level,
        eval_level,
    };
    let all: Vec<usize> = split.test_indices.iter().flatten().copied().collect();
    if all.is_empty() {
        return Err(Error::Data("no test samples for diagnostics".into()));
    }
    let gates_for = |idx: &[usize]| -> Option<Vec<usize>> {
        flags.context_gating.then(|| {
            idx.iter()
                .map(|&i| split.task_of(test.labels()[i]).unwrap_or(0))
                .collect()
        })
    };

    let (x, _) = test.batch(&all)?;
    let recon = reconstruction_error_distribution(model, &x, gates_for(&all).as_deref(), view)?;

    let sub = strided(&all, cfg.diagnostics.max_samples);
    let (xs, _) = test.batch(&sub)?;
    let ll = estimate_log_likelihood(
        model,
        &xs,
        gates_for(&sub).as_deref(),
        view,
        cfg.diagnostics.importance_samples,
        rng,
    )?;
    let log_likelihood = DistributionSummary::from_values(ll)?;

    let embeddings = extract_embeddings(model, test, &all, split, cfg.network.embedding_layer)?;
    let mut silhouette = Vec::with_capacity(split.num_tasks());
    let mut projections = Vec::with_capacity(split.num_tasks());
    for t in 0..split.num_tasks() {
        let part = embeddings.for_task(t);
        silhouette.push(match silhouette_score(&part, LabelKey::Class) {
            Ok(s) => Some(s),
            Err(Error::Contract(msg)) => {
                log::warn!("silhouette for task {} undefined: {msg}", t + 1);
                None
            }
            Err(e) => return Err(e),
        });
        projections.push(pca_project_2d(&part)?);
    }
    Ok(Diagnostics {
        view,
        log_likelihood,
        reconstruction_error: recon,
        embeddings,
        silhouette,
        projections,
    })
}

/// Runs the whole task sequence for one variant and seed. Checkpoints
/// `ckpt_task{t}.bin` (1-based) are written to `checkpoint_dir` when given.
pub fn run_experiment(
    cfg: &TrainerConfig,
    flags: &AblationFlags,
    data: &TrainTest,
    checkpoint_dir: Option<&Path>,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let mut rngs = RunRngs::new(cfg.seed);
    let split = split_into_tasks(
        &data.train,
        &data.test,
        cfg.num_tasks,
        cfg.classes_per_task,
        cfg.class_order_seed,
    )?;
    let train_idx: Vec<Vec<usize>> = split
        .train_indices
        .iter()
        .map(|idx| strided(idx, cfg.samples_per_task))
        .collect();
    let mut model = build_model(cfg, flags, data, &mut rngs)?;

    let clock = Instant::now();
    let pretrain_data = data.train.subset(&train_idx[0])?;
    let pretrain = pretrain_perceptual_block(&mut model, &pretrain_data, &cfg.pretrain, &mut rngs.pretrain)?;
    let mut timings = Timings {
        pretrain_seconds: clock.elapsed().as_secs_f64(),
        ..Timings::default()
    };

    let tracked = trainable_groups(&model);
    let si = if flags.synaptic_intelligence {
        let params = model.params();
        let groups: Vec<&Tensor> = tracked.iter().map(|&i| params[i]).collect();
        Some(SiState::new(&groups, cfg.si.damping, cfg.si.c)?)
    } else {
        None
    };
    let mut state = TrainState {
        optimizer: Optimizer::new(cfg.optimizer, cfg.learning_rate)?,
        si,
        tracked,
    };

    let mut accuracy = AccuracyMatrix::new(cfg.num_tasks);
    let mut reports = Vec::with_capacity(cfg.num_tasks);
    for t in 0..cfg.num_tasks {
        let clock = Instant::now();
        model.prior.mark_seen(split.tasks[t].iter().copied())?;
        let teacher = (flags.replay && t > 0).then(|| model.clone());
        let fingerprint = teacher.as_ref().map(ReplayModel::fingerprint);
        let report = train_task(
            &mut model,
            TaskData {
                task: t,
                data: &data.train,
                indices: &train_idx[t],
                split: &split,
            },
            teacher.as_ref(),
            &mut state,
            cfg,
            flags,
            &mut rngs,
        )?;
        if let (Some(teacher), Some(fp)) = (&teacher, fingerprint) {
            if teacher.fingerprint() != fp {
                return Err(Error::contract("previous model changed during training"));
            }
        }
        let active = split.classes_up_to(t);
        for e in 0..=t {
            let acc = evaluate_accuracy(&model, &data.test, &split.test_indices[e], &active)?;
            accuracy.set(t, e, acc)?;
        }
        if let Some(si) = state.si.as_mut() {
            let current = tracked_values(&model, &state.tracked);
            let refs: Vec<&[f64]> = current.iter().map(Vec::as_slice).collect();
            si.consolidate(&refs)?;
        }
        if let Some(dir) = checkpoint_dir {
            save_checkpoint(&model, &dir.join(format!("ckpt_task{}.bin", t + 1)))?;
        }
        log::info!(
            "task {}/{}: {} steps, final loss {:.4}, accuracy row {:?}",
            t + 1,
            cfg.num_tasks,
            report.steps,
            report.epoch_losses.last().map(|l| l.total).unwrap_or(f64::NAN),
            (0..=t).filter_map(|e| accuracy.get(t, e)).collect::<Vec<_>>()
        );
        reports.push(report);
        timings.task_seconds.push(clock.elapsed().as_secs_f64());
    }

    let clock = Instant::now();
    let diagnostics = compute_diagnostics(&model, cfg, flags, &split, &data.test, &mut rngs.diagnostics)?;
    timings.diagnostics_seconds = clock.elapsed().as_secs_f64();
    let metrics = accuracy.task_metrics()?;
    Ok(ExperimentOutput {
        flags: *flags,
        config: cfg.clone(),
        split,
        accuracy,
        metrics,
        pretrain,
        task_reports: reports,
        diagnostics,
        timings,
        model,
    })
}
