//! Checkpoint directories.
//!
//! A checkpoint is a directory holding `weights.safetensors` (every
//! parameter under `params.<owner>.<name>` and every batch-norm statistic
//! under `buffers.<owner>.<name>`) and `checkpoint.json`, a
//! [`CheckpointManifest`] with the format version, model configuration,
//! fusion strategy, epoch and sampler RNG position.

use std::fs;
use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::TwoStreamNet;
use crate::edge::FusionKind;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const WEIGHTS: &str = "weights.safetensors";
const MANIFEST: &str = "checkpoint.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub fusion: FusionKind,
    pub dtype: String,
    pub epoch: usize,
    pub seed: u64,
    /// ChaCha word position of the batch sampler, as a decimal string.
    pub sampler_word_pos: Option<String>,
    /// Snapshot of the experiment configuration that produced the weights.
    pub experiment: Option<serde_json::Value>,
}

fn dtype_name(dtype: DType) -> &'static str {
    match dtype {
        DType::F64 => "f64",
        DType::F32 => "f32",
        _ => "other",
    }
}

pub fn save_checkpoint(dir: &Path, net: &TwoStreamNet, manifest: &CheckpointManifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = manifest.clone();
    manifest.format_version = CHECKPOINT_FORMAT_VERSION;
    manifest.model = net.config().clone();
    manifest.fusion = net.fusion_kind();
    manifest.dtype = dtype_name(net.dtype()).to_string();
    net.store().save(&dir.join(WEIGHTS))?;
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(TwoStreamNet, CheckpointManifest)> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(Error::Checkpoint(format!("no checkpoint at {}", dir.display())));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "checkpoint format {} is not supported (expected {CHECKPOINT_FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let dtype = match manifest.dtype.as_str() {
        "f64" => DType::F64,
        "f32" => DType::F32,
        other => return Err(Error::Checkpoint(format!("unsupported dtype `{other}`"))),
    };
    let net = TwoStreamNet::new(&manifest.model, manifest.fusion, manifest.seed, dtype)?;
    net.store().load(&dir.join(WEIGHTS))?;
    Ok((net, manifest))
}
