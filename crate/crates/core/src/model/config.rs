use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Likelihood family used when comparing a reconstruction with its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconKind {
    /// Per-sample sum of squared errors; unit-variance Gaussian likelihood.
    Mse,
    /// Per-sample Bernoulli negative log-likelihood; targets in `[0, 1]`.
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

/// Layer layout of a [`ReplayModel`](super::ReplayModel).
///
/// Encoder levels are numbered from the input: level 0 is the input, levels
/// `1..=P` are the frozen perceptual block and levels `P+1..=P+F` the trainable
/// fully connected stack. The decoder mirrors the same widths in reverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub perceptual_dims: Vec<usize>,
    pub fc_dims: Vec<usize>,
    pub latent_dim: usize,
    pub num_classes: usize,
    pub num_tasks: usize,
    pub internal_replay_level: usize,
    pub gate_fraction: f64,
    /// Index into `fc_dims` of the layer exported for embedding analysis.
    pub embedding_layer: usize,
    pub perceptual_activation: Activation,
    /// Likelihood used at the input level.
    pub input_recon: ReconKind,
}

impl NetworkConfig {
    /// Desk-scale defaults: perceptual 256, fc `[256, 256]`, latent 32, replay at level 1.
    pub fn desk_scale(input_dim: usize, num_classes: usize, num_tasks: usize) -> Self {
        NetworkConfig {
            input_dim,
            perceptual_dims: vec![256],
            fc_dims: vec![256, 256],
            latent_dim: 32,
            num_classes,
            num_tasks,
            internal_replay_level: 1,
            gate_fraction: 0.8,
            embedding_layer: 1,
            perceptual_activation: Activation::Relu,
            input_recon: ReconKind::Mse,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim),
            ("latent_dim", self.latent_dim),
            ("num_classes", self.num_classes),
            ("num_tasks", self.num_tasks),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.fc_dims.is_empty() {
            return Err(Error::config("fc_dims", "need at least one fully connected layer"));
        }
        if self.perceptual_dims.iter().chain(&self.fc_dims).any(|&w| w == 0) {
            return Err(Error::config("fc_dims", "layer widths must be positive"));
        }
        if self.internal_replay_level >= self.num_encoder_layers() {
            return Err(Error::config(
                "internal_replay_level",
                format!(
                    "level {} but the encoder has {} layers",
                    self.internal_replay_level,
                    self.num_encoder_layers()
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.gate_fraction) {
            return Err(Error::config("gate_fraction", "must lie in [0, 1]"));
        }
        if self.embedding_layer >= self.fc_dims.len() {
            return Err(Error::config(
                "embedding_layer",
                format!("index {} but only {} fc layers", self.embedding_layer, self.fc_dims.len()),
            ));
        }
        Ok(())
    }

    pub fn num_perceptual(&self) -> usize {
        self.perceptual_dims.len()
    }

    pub fn num_encoder_layers(&self) -> usize {
        self.perceptual_dims.len() + self.fc_dims.len()
    }

    /// Highest encoder level, the one feeding the latent and class heads.
    pub fn top_level(&self) -> usize {
        self.num_encoder_layers()
    }

    pub fn level_width(&self, level: usize) -> usize {
        let p = self.perceptual_dims.len();
        match level {
            0 => self.input_dim,
            l if l <= p => self.perceptual_dims[l - 1],
            l => self.fc_dims[l - p - 1],
        }
    }

    /// Encoder level holding fc layer `index`.
    pub fn fc_level(&self, index: usize) -> usize {
        self.perceptual_dims.len() + 1 + index
    }

    /// Likelihood family for reconstructions at `level`.
    pub fn recon_kind(&self, level: usize) -> ReconKind {
        if level == 0 {
            self.input_recon
        } else {
            ReconKind::Mse
        }
    }

    /// Widths of the gated decoder layers, i.e. levels `1..=top`.
    pub fn gated_widths(&self) -> Vec<usize> {
        (1..=self.top_level()).map(|l| self.level_width(l)).collect()
    }
}
