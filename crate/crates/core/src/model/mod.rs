//! Two-stream network, its building blocks, and parameter storage.

mod checkpoint;
mod config;
mod input;
mod layers;
mod network;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, CHECKPOINT_FORMAT_VERSION};
pub use config::ModelConfig;
pub use input::{extract_features, FeatureMatrix, InputBuilder};
pub use layers::{gem_pool, BatchNorm, BlockKind, Conv2d, GeM, NonLocalBlock, ResidualBlock};
pub use network::{l2_normalize, max_pool_3x3_s2, NetInput, Stem, TapPoints, TwoStreamNet};
pub use params::{ParamInit, ParamStore};
