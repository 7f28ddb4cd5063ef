use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{Activation, ReconKind};
use super::network::{LinearVars, ReplayModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::reconstruction_loss;
use crate::tensor::{Optimizer, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 5,
            batch_size: 64,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainReport {
    pub loss_before: f64,
    pub loss_after: f64,
}

/// Decoder layers that mirror the perceptual block (levels `P-1..=0`).
fn mirror_range(model: &ReplayModel) -> std::ops::RangeInclusive<usize> {
    let top = model.config.top_level();
    top - model.config.num_perceptual() + 1..=top
}

fn autoencode(model: &ReplayModel, tape: &mut Tape, x: &Tensor, trainable: bool) -> Result<(Var, Vec<Var>)> {
    let cfg = &model.config;
    let leaf = |tape: &mut Tape, t: &Tensor| {
        if trainable {
            tape.leaf(t)
        } else {
            tape.constant(t)
        }
    };
    let mut vars = Vec::new();
    let mut h = tape.constant(x);
    for l in &model.perceptual {
        let lv = LinearVars {
            weight: leaf(tape, &l.weight),
            bias: leaf(tape, &l.bias),
        };
        vars.extend([lv.weight, lv.bias]);
        h = lv.forward(tape, h)?;
        if cfg.perceptual_activation == Activation::Relu {
            h = tape.relu(h)?;
        }
    }
    let top = cfg.top_level();
    for j in mirror_range(model) {
        let l = &model.decoder[j];
        let lv = LinearVars {
            weight: leaf(tape, &l.weight),
            bias: leaf(tape, &l.bias),
        };
        vars.extend([lv.weight, lv.bias]);
        h = lv.forward(tape, h)?;
        let level = top - j;
        if level > 0 {
            if cfg.perceptual_activation == Activation::Relu {
                h = tape.relu(h)?;
            }
        } else if cfg.input_recon == ReconKind::Bernoulli {
            h = tape.sigmoid(h)?;
        }
    }
    let target = tape.constant(x);
    let loss = reconstruction_loss(tape, h, target, cfg.input_recon)?;
    Ok((loss, vars))
}

/// Mean per-sample reconstruction loss of the perceptual autoencoder on `data`.
pub fn perceptual_reconstruction_loss(model: &ReplayModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("empty dataset".into()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(256) {
        let (x, _) = data.batch(chunk)?;
        let mut tape = Tape::new();
        let (loss, _) = autoencode(model, &mut tape, &x, false)?;
        total += tape.scalar(loss)? * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Trains the perceptual block as the encoder half of a plain autoencoder whose
/// decoder half is the model's own lowest decoder layers, then freezes the block.
pub fn pretrain_perceptual_block<R: Rng>(
    model: &mut ReplayModel,
    data: &Dataset,
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<PretrainReport> {
    if data.is_empty() {
        return Err(Error::Data("cannot pretrain on an empty dataset".into()));
    }
    if model.is_perceptual_frozen() {
        return Err(Error::contract("perceptual block is already frozen"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("pretrain.batch_size", "must be positive"));
    }
    let loss_before = perceptual_reconstruction_loss(model, data)?;
    let mut opt = Optimizer::adam(cfg.learning_rate)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, _) = data.batch(chunk)?;
            let mut tape = Tape::new();
            let (loss, vars) = autoencode(model, &mut tape, &x, true)?;
            tape.backward(loss)?;
            let range = mirror_range(model);
            let mut params: Vec<&mut Tensor> = Vec::new();
            for l in model.perceptual.iter_mut() {
                params.extend([&mut l.weight, &mut l.bias]);
            }
            for l in model.decoder[range].iter_mut() {
                params.extend([&mut l.weight, &mut l.bias]);
            }
            for (p, v) in params.iter_mut().zip(&vars) {
                p.zero_grad();
                let g = tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]);
                p.accumulate_grad(&g)?;
            }
            opt.step(&mut params)?;
        }
    }
    model.freeze_perceptual();
    let loss_after = perceptual_reconstruction_loss(model, data)?;
    Ok(PretrainReport {
        loss_before,
        loss_after,
    })
}
