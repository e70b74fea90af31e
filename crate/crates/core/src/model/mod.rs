//! The network: SE-Residual blocks, MixPool hard attention and the
//! encoder-decoder assembly, plus configuration and checkpoints.

mod checkpoint;
mod config;
mod fanet;
mod mixpool;
mod se;

pub use checkpoint::{Checkpoint, NamedArray};
pub use config::{Ablation, MixPoolPlacement, NetworkConfig};
pub use fanet::{count_parameters, mask_tensor, Fanet, StageChannels};
pub use mixpool::{apply_hard_attention, AttentionMasks, MixPool};
pub use se::{se_hidden_width, SeLayer, SeResidualBlock};
