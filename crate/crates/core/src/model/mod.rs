//! The replay network and its checkpoint format.

mod checkpoint;
mod config;
mod gates;
mod network;
mod pretrain;
mod prior;

pub use checkpoint::{
    canonical_json, decode_checkpoint, encode_checkpoint, load_checkpoint, model_from_contents,
    save_checkpoint, CheckpointContents, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{Activation, NetworkConfig, ReconKind};
pub use gates::{gate_mask, ContextGateSet};
pub use network::{
    fingerprint, reparameterize, Bound, EncodeOutput, LatentGaussian, Linear, LinearVars,
    ReplayModel,
};
pub use pretrain::{
    perceptual_reconstruction_loss, pretrain_perceptual_block, PretrainConfig, PretrainReport,
};
pub use prior::{diag_normal_log_density, GaussianMixturePrior};
