//! Shared helpers for integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use replay_lab::data::{make_synthetic_blobs, split_into_tasks, TrainTest};
use replay_lab::losses::{classification_loss, kl_standard_normal, reconstruction_loss};
use replay_lab::metrics::{evaluate_accuracy, AccuracyMatrix};
use replay_lab::model::{pretrain_perceptual_block, reparameterize, ReplayModel};
use replay_lab::tensor::{Optimizer, Tape, Tensor};
use replay_lab::trainer::{build_model, strided, AblationFlags, RunRngs, TrainerConfig};

pub fn small_config() -> TrainerConfig {
    let mut cfg = TrainerConfig {
        num_tasks: 3,
        classes_per_task: 2,
        samples_per_task: Some(60),
        epochs_per_task: 2,
        batch_size: 16,
        seed: 4,
        ..TrainerConfig::default()
    };
    cfg.network.perceptual_dims = vec![16];
    cfg.network.fc_dims = vec![12, 12];
    cfg.network.latent_dim = 4;
    cfg.pretrain.epochs = 2;
    cfg.pretrain.batch_size = 16;
    cfg.diagnostics.importance_samples = 8;
    cfg
}

pub fn data() -> TrainTest {
    make_synthetic_blobs(6, 10, 50, 1.0, 9).unwrap()
}

/// Sequential fine-tuning written directly against the model and loss API.
pub fn fine_tuning_reference(cfg: &TrainerConfig, data: &TrainTest) -> (AccuracyMatrix, ReplayModel) {
    let flags = AblationFlags::fine_tuning();
    let mut rngs = RunRngs::new(cfg.seed);
    let split = split_into_tasks(&data.train, &data.test, cfg.num_tasks, cfg.classes_per_task, None).unwrap();
    let train_idx: Vec<Vec<usize>> =
        split.train_indices.iter().map(|i| strided(i, cfg.samples_per_task)).collect();
    let mut model = build_model(cfg, &flags, data, &mut rngs).unwrap();
    let first = data.train.subset(&train_idx[0]).unwrap();
    pretrain_perceptual_block(&mut model, &first, &cfg.pretrain, &mut rngs.pretrain).unwrap();
    let mut opt = Optimizer::adam(cfg.learning_rate).unwrap();
    let kind = model.config().input_recon;
    let d = model.config().latent_dim;
    let mut acc = AccuracyMatrix::new(cfg.num_tasks);

    for t in 0..cfg.num_tasks {
        model.prior.mark_seen(split.tasks[t].iter().copied()).unwrap();
        let active = split.classes_up_to(t);
        let mut order = train_idx[t].clone();
        for _ in 0..cfg.epochs_per_task {
            order.shuffle(&mut rngs.shuffle);
            for chunk in order.chunks(cfg.batch_size) {
                let (x, labels) = data.train.batch(chunk).unwrap();
                let eps: Vec<f64> = (0..chunk.len() * d)
                    .map(|_| StandardNormal.sample(&mut rngs.noise))
                    .collect();
                let mut tape = Tape::new();
                let b = model.bind(&mut tape);
                let xv = tape.constant(&x);
                let enc = b.encode(&mut tape, xv).unwrap();
                let ev = tape.constant(&Tensor::matrix(chunk.len(), d, eps).unwrap());
                let z = reparameterize(&mut tape, enc.latent, ev).unwrap();
                let pred = b.decode(&mut tape, z, None, 0).unwrap();
                let rec = reconstruction_loss(&mut tape, pred, xv, kind).unwrap();
                let kl = kl_standard_normal(&mut tape, enc.latent).unwrap();
                let ce = classification_loss(&mut tape, enc.logits, &labels, &active).unwrap();
                let s = tape.add(rec, kl).unwrap();
                let loss = tape.add(s, ce).unwrap();
                tape.backward(loss).unwrap();
                let vars = b.order().to_vec();
                model.load_grads(&tape, &vars).unwrap();
                opt.step(&mut model.params_mut()).unwrap();
            }
        }
        for e in 0..=t {
            let a = evaluate_accuracy(&model, &data.test, &split.test_indices[e], &active).unwrap();
            acc.set(t, e, a).unwrap();
        }
    }
    (acc, model)
}
