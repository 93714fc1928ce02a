use serde::{Deserialize, Serialize};

use super::layers::BlockKind;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub stem_out_channels: usize,
    /// Output channels of each trunk stage.
    pub trunk_stage_channels: Vec<usize>,
    /// Residual blocks per trunk stage.
    pub trunk_stage_blocks: Vec<usize>,
    pub block: BlockKind,
    pub last_stage_stride: usize,
    /// A non-local block is inserted after each listed stage index.
    pub nonlocal_positions: Vec<usize>,
    pub embedding_dim: usize,
    pub num_classes: usize,
    pub gem_p_init: f64,
    pub toy_scale: bool,
}

/// The ResNet-50 layout with the class count left open (0).
impl Default for ModelConfig {
    fn default() -> Self {
        Self::full_scale(0)
    }
}

impl ModelConfig {
    /// Small network for desk-scale runs.
    pub fn toy(num_classes: usize) -> Self {
        Self {
            stem_out_channels: 16,
            trunk_stage_channels: vec![32, 64],
            trunk_stage_blocks: vec![1, 1],
            block: BlockKind::Basic,
            last_stage_stride: 1,
            nonlocal_positions: vec![0],
            embedding_dim: 64,
            num_classes,
            gem_p_init: 3.0,
            toy_scale: true,
        }
    }

    /// ResNet-50 layout: 64-channel stem, bottleneck stages [3, 4, 6, 3],
    /// 2048-d embedding, non-local blocks after the second and third stage.
    pub fn full_scale(num_classes: usize) -> Self {
        Self {
            stem_out_channels: 64,
            trunk_stage_channels: vec![256, 512, 1024, 2048],
            trunk_stage_blocks: vec![3, 4, 6, 3],
            block: BlockKind::Bottleneck,
            last_stage_stride: 1,
            nonlocal_positions: vec![1, 2],
            embedding_dim: 2048,
            num_classes,
            gem_p_init: 3.0,
            toy_scale: false,
        }
    }

    /// Stride of each trunk stage: 1 for the first, 2 for the middle ones,
    /// `last_stage_stride` for the last.
    pub fn stage_strides(&self) -> Vec<usize> {
        let n = self.trunk_stage_channels.len();
        (0..n)
            .map(|i| {
                if i == 0 && n > 1 {
                    1
                } else if i == n - 1 {
                    self.last_stage_stride
                } else {
                    2
                }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.trunk_stage_channels.len();
        if n == 0 {
            return Err(Error::Config("trunk needs at least one stage".into()));
        }
        if self.trunk_stage_blocks.len() != n || self.trunk_stage_blocks.iter().any(|&b| b == 0) {
            return Err(Error::Config("trunk_stage_blocks must give a positive count per stage".into()));
        }
        if self.embedding_dim != self.trunk_stage_channels[n - 1] {
            return Err(Error::Config(format!(
                "embedding_dim {} must equal the last stage width {}",
                self.embedding_dim,
                self.trunk_stage_channels[n - 1]
            )));
        }
        if self.nonlocal_positions.iter().any(|&p| p >= n) {
            return Err(Error::Config("non-local position beyond the last stage".into()));
        }
        if !(1..=2).contains(&self.last_stage_stride) {
            return Err(Error::Config("last_stage_stride must be 1 or 2".into()));
        }
        if self.num_classes == 0 || self.stem_out_channels == 0 {
            return Err(Error::Config("num_classes and stem_out_channels must be positive".into()));
        }
        Ok(())
    }

    /// Spatial size after the stem (7x7 stride-2 conv, 3x3 stride-2 pool).
    pub fn stem_output_size(height: usize, width: usize) -> (usize, usize) {
        let conv = |n: usize| (n + 2 * 3 - 7) / 2 + 1;
        let pool = |n: usize| (n + 2 - 3) / 2 + 1;
        (pool(conv(height)), pool(conv(width)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stem_quarter_resolution() {
        assert_eq!(ModelConfig::stem_output_size(288, 144), (72, 36));
        assert_eq!(ModelConfig::stem_output_size(64, 32), (16, 8));
    }

    #[test]
    fn presets_validate() {
        ModelConfig::toy(10).validate().unwrap();
        ModelConfig::full_scale(395).validate().unwrap();
        assert_eq!(ModelConfig::full_scale(395).stage_strides(), vec![1, 2, 2, 1]);
        let mut bad = ModelConfig::toy(10);
        bad.embedding_dim = 128;
        assert!(bad.validate().is_err());
    }
}
