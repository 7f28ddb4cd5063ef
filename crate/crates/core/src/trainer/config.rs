use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Activation, NetworkConfig, PretrainConfig, ReconKind};
use crate::tensor::OptimizerKind;

/// Which replay mechanisms are active in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationFlags {
    /// Replay generated samples from the previous model at all.
    pub replay: bool,
    pub internal_replay: bool,
    pub synaptic_intelligence: bool,
    pub context_gating: bool,
    pub conditional_replay: bool,
    pub distillation: bool,
}

impl AblationFlags {
    pub const BIR_IR: &'static str = "BIR(w/ IR)";
    pub const BIR_NO_IR: &'static str = "BIR(w/o IR)";
    pub const BIR_SI_IR: &'static str = "BIR+SI(w/ IR)";
    pub const BIR_SI_NO_IR: &'static str = "BIR+SI(w/o IR)";
    pub const FINE_TUNING: &'static str = "fine_tuning";

    /// The four variants compared in the ablation study.
    pub const STUDY_VARIANTS: [&'static str; 4] =
        [Self::BIR_IR, Self::BIR_NO_IR, Self::BIR_SI_IR, Self::BIR_SI_NO_IR];

    pub fn bir(internal_replay: bool, synaptic_intelligence: bool) -> Self {
        AblationFlags {
            replay: true,
            internal_replay,
            synaptic_intelligence,
            context_gating: true,
            conditional_replay: true,
            distillation: true,
        }
    }

    /// Everything off: plain sequential fine-tuning.
    pub fn fine_tuning() -> Self {
        AblationFlags {
            replay: false,
            internal_replay: false,
            synaptic_intelligence: false,
            context_gating: false,
            conditional_replay: false,
            distillation: false,
        }
    }

    /// Flags for a named variant (the four study variants and `fine_tuning`).
    pub fn for_variant(name: &str) -> Option<Self> {
        match name {
            Self::BIR_IR => Some(Self::bir(true, false)),
            Self::BIR_NO_IR => Some(Self::bir(false, false)),
            Self::BIR_SI_IR => Some(Self::bir(true, true)),
            Self::BIR_SI_NO_IR => Some(Self::bir(false, true)),
            Self::FINE_TUNING => Some(Self::fine_tuning()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub reconstruction: f64,
    pub kl: f64,
    pub classification: f64,
    pub distillation: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            reconstruction: 1.0,
            kl: 1.0,
            classification: 1.0,
            distillation: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SiConfig {
    /// Penalty strength `c`.
    pub c: f64,
    /// Damping `ξ`.
    pub damping: f64,
}

impl Default for SiConfig {
    fn default() -> Self {
        SiConfig { c: 1.0, damping: 0.1 }
    }
}

/// Layer layout; the input width and class count come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    pub perceptual_dims: Vec<usize>,
    pub fc_dims: Vec<usize>,
    pub latent_dim: usize,
    pub internal_replay_level: usize,
    pub gate_fraction: f64,
    pub embedding_layer: usize,
    pub perceptual_activation: Activation,
    /// Input-level likelihood; unset picks Bernoulli for `[0, 1]` data and MSE otherwise.
    pub input_recon: Option<ReconKind>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        let d = NetworkConfig::desk_scale(1, 1, 1);
        NetworkSpec {
            perceptual_dims: d.perceptual_dims,
            fc_dims: d.fc_dims,
            latent_dim: d.latent_dim,
            internal_replay_level: d.internal_replay_level,
            gate_fraction: d.gate_fraction,
            embedding_layer: d.embedding_layer,
            perceptual_activation: d.perceptual_activation,
            input_recon: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub importance_samples: usize,
    /// Level at which likelihood and reconstruction are compared across
    /// variants; unset means the network's internal replay level.
    pub common_level: Option<usize>,
    /// Evenly strided subsample of the test set used for likelihoods.
    pub max_samples: Option<usize>,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            importance_samples: crate::metrics::DIAGNOSTIC_IMPORTANCE_SAMPLES,
            common_level: None,
            max_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    /// Cap on training samples per task (evenly strided); unset uses all.
    pub samples_per_task: Option<usize>,
    pub epochs_per_task: usize,
    pub batch_size: usize,
    /// Unset means `batch_size`.
    pub replay_batch_size: Option<usize>,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Shuffles the class-to-task assignment when set.
    pub class_order_seed: Option<u64>,
    pub loss_weights: LossWeights,
    pub si: SiConfig,
    pub temperature: f64,
    /// Fixed weight of the replay term; unset means `1 − 1/t`.
    pub replay_weight: Option<f64>,
    pub network: NetworkSpec,
    pub pretrain: PretrainConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            num_tasks: 5,
            classes_per_task: 2,
            samples_per_task: Some(2000),
            epochs_per_task: 5,
            batch_size: 64,
            replay_batch_size: None,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            class_order_seed: None,
            loss_weights: LossWeights::default(),
            si: SiConfig::default(),
            temperature: 2.0,
            replay_weight: None,
            network: NetworkSpec::default(),
            pretrain: PretrainConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

impl TrainerConfig {
    pub fn replay_batch(&self) -> usize {
        self.replay_batch_size.unwrap_or(self.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_tasks", self.num_tasks),
            ("classes_per_task", self.classes_per_task),
            ("batch_size", self.batch_size),
            ("replay_batch_size", self.replay_batch()),
            ("diagnostics.importance_samples", self.diagnostics.importance_samples),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.samples_per_task == Some(0) {
            return Err(Error::config("samples_per_task", "must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature", "must be positive"));
        }
        if !(self.si.c >= 0.0) {
            return Err(Error::config("si.c", "must be non-negative"));
        }
        if !(self.si.damping > 0.0) {
            return Err(Error::config("si.damping", "must be positive"));
        }
        if let Some(w) = self.replay_weight {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::config("replay_weight", "must lie in [0, 1]"));
            }
        }
        let w = self.loss_weights;
        for (key, v) in [
            ("loss_weights.reconstruction", w.reconstruction),
            ("loss_weights.kl", w.kl),
            ("loss_weights.classification", w.classification),
            ("loss_weights.distillation", w.distillation),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(key, "must be a finite non-negative number"));
            }
        }
        Ok(())
    }

    /// Full network layout for a dataset of the given shape.
    pub fn network_config(&self, input_dim: usize, num_classes: usize, unit_scaled: bool) -> Result<NetworkConfig> {
        let s = &self.network;
        let cfg = NetworkConfig {
            input_dim,
            perceptual_dims: s.perceptual_dims.clone(),
            fc_dims: s.fc_dims.clone(),
            latent_dim: s.latent_dim,
            num_classes,
            num_tasks: self.num_tasks,
            internal_replay_level: s.internal_replay_level,
            gate_fraction: s.gate_fraction,
            embedding_layer: s.embedding_layer,
            perceptual_activation: s.perceptual_activation,
            input_recon: s.input_recon.unwrap_or(if unit_scaled {
                ReconKind::Bernoulli
            } else {
                ReconKind::Mse
            }),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Level at which a run with `flags` replays and reconstructs.
    pub fn replay_level(&self, flags: &AblationFlags) -> usize {
        if flags.internal_replay {
            self.network.internal_replay_level
        } else {
            0
        }
    }
}

/// Weights `(current, replay)` for 1-based `task_index`.
pub fn mix_weights(task_index: usize, replay_override: Option<f64>) -> Result<(f64, f64)> {
    if task_index == 0 {
        return Err(Error::contract("task indices start at 1"));
    }
    if task_index == 1 {
        return Ok((1.0, 0.0));
    }
    let r = replay_override.unwrap_or(1.0 - 1.0 / task_index as f64);
    Ok((1.0 - r, r))
}

/// `current` alone on task 1, else `(1/t)·current + (1 − 1/t)·replay`.
pub fn mix_losses(current: f64, replay: f64, task_index: usize) -> Result<f64> {
    let (a, b) = mix_weights(task_index, None)?;
    Ok(if b == 0.0 { current } else { a * current + b * replay })
}
