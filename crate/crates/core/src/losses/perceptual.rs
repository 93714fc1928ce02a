//! Frozen four-block convolutional feature network used as the perceptual
//! loss network.
//!
//! Block 1 is `convs + ReLU`; blocks 2-4 start with a 2x2 max-pool. The
//! network is either loaded from VGG-16 weights (torchvision `features.N`
//! naming, blocks ending at relu1_2, relu2_2, relu3_3 and relu4_3) or drawn
//! from a fixed seed. Its tensors are plain constants, never variables, so
//! no gradient is ever computed for them.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PerceptualSource {
    /// VGG-16 weights in a safetensors file.
    Pretrained { path: String },
    /// He-initialized random weights from `seed`.
    FixedSeedRandom {
        seed: u64,
        channels: [usize; 4],
        convs_per_block: [usize; 4],
    },
}

impl Default for PerceptualSource {
    fn default() -> Self {
        PerceptualSource::FixedSeedRandom {
            seed: 7,
            channels: [8, 16, 16, 32],
            convs_per_block: [1, 1, 1, 1],
        }
    }
}

/// Non-overlapping 2x2 max pooling (odd trailing rows and columns dropped)
/// written as reductions, whose backward routes each gradient to its argmax
/// only.
fn max_pool_2x2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    Ok(x.narrow(2, 0, 2 * oh)?
        .narrow(3, 0, 2 * ow)?
        .reshape((b, c, oh, 2, ow, 2))?
        .max(5)?
        .max(3)?)
}

#[derive(Debug, Clone)]
struct FrozenConv {
    weight: Tensor,
    bias: Tensor,
}

impl FrozenConv {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.bias.dim(0)?;
        Ok(x.conv2d(&self.weight, 1, 1, 1, 1)?
            .broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?
            .relu()?)
    }
}

#[derive(Debug, Clone)]
pub struct PerceptualNet {
    blocks: Vec<Vec<FrozenConv>>,
    source: PerceptualSource,
}

/// torchvision VGG-16 `features` indices of the convolutions in blocks 1-4.
const VGG16_CONVS: [&[usize]; 4] = [&[0, 2], &[5, 7], &[10, 12, 14], &[17, 19, 21]];

impl PerceptualNet {
    pub fn new(source: &PerceptualSource, dtype: DType) -> Result<Self> {
        match source {
            PerceptualSource::FixedSeedRandom {
                seed,
                channels,
                convs_per_block,
            } => Self::random(*seed, *channels, *convs_per_block, dtype),
            PerceptualSource::Pretrained { path } => Self::vgg16(Path::new(path), dtype),
        }
    }

    pub fn random(seed: u64, channels: [usize; 4], convs_per_block: [usize; 4], dtype: DType) -> Result<Self> {
        if channels.iter().chain(&convs_per_block).any(|&c| c == 0) {
            return Err(Error::Config("perceptual net needs positive widths and depths".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::new();
        let mut in_c = 3;
        for (t, &out_c) in channels.iter().enumerate() {
            let mut convs = Vec::new();
            for _ in 0..convs_per_block[t] {
                let fan_in = in_c * 9;
                let std = (2.0 / fan_in as f64).sqrt();
                let w: Vec<f64> = (0..out_c * fan_in)
                    .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                convs.push(FrozenConv {
                    weight: Tensor::from_vec(w, (out_c, in_c, 3, 3), &Device::Cpu)?.to_dtype(dtype)?,
                    bias: Tensor::zeros(out_c, dtype, &Device::Cpu)?,
                });
                in_c = out_c;
            }
            blocks.push(convs);
        }
        Ok(Self {
            blocks,
            source: PerceptualSource::FixedSeedRandom {
                seed,
                channels,
                convs_per_block,
            },
        })
    }

    pub fn vgg16(path: &Path, dtype: DType) -> Result<Self> {
        let tensors = candle_core::safetensors::load(path, &Device::Cpu)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let get = |key: String| -> Result<Tensor> {
            tensors
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("{} lacks `{key}`", path.display())))?
                .to_dtype(dtype)
                .map_err(Error::from)
        };
        let mut blocks = Vec::new();
        for idx in VGG16_CONVS {
            let mut convs = Vec::new();
            for &i in idx {
                convs.push(FrozenConv {
                    weight: get(format!("features.{i}.weight"))?,
                    bias: get(format!("features.{i}.bias"))?,
                });
            }
            blocks.push(convs);
        }
        Ok(Self {
            blocks,
            source: PerceptualSource::Pretrained {
                path: path.display().to_string(),
            },
        })
    }

    pub fn source(&self) -> &PerceptualSource {
        &self.source
    }

    /// The smallest input side that survives the three pooling steps.
    pub const MIN_SIDE: usize = 8;

    pub fn check_input(height: usize, width: usize) -> Result<()> {
        if height < Self::MIN_SIDE || width < Self::MIN_SIDE {
            return Err(Error::Shape(format!(
                "perceptual net needs inputs of at least {0}x{0}, got {height}x{width}",
                Self::MIN_SIDE
            )));
        }
        Ok(())
    }

    /// Outputs of the four blocks for a `(B, 3, H, W)` input.
    pub fn taps(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 {
            return Err(Error::Shape(format!("perceptual net expects 3 channels, got {c}")));
        }
        Self::check_input(h, w)?;
        let mut out = Vec::with_capacity(4);
        let mut cur = x.clone();
        for (t, block) in self.blocks.iter().enumerate() {
            if t > 0 {
                cur = max_pool_2x2(&cur)?;
            }
            for conv in block {
                cur = conv.forward(&cur)?;
            }
            out.push(cur.clone());
        }
        Ok(out)
    }

    /// Every constant tensor, flattened, for freeze checks.
    pub fn weights_snapshot(&self) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for conv in self.blocks.iter().flatten() {
            out.push(conv.weight.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?);
            out.push(conv.bias.to_dtype(DType::F64)?.to_vec1()?);
        }
        Ok(out)
    }

    /// Per-block kernel tensors in order, for reference implementations.
    pub fn block_convs(&self) -> Vec<Vec<(Tensor, Tensor)>> {
        self.blocks
            .iter()
            .map(|b| b.iter().map(|c| (c.weight.clone(), c.bias.clone())).collect())
            .collect()
    }
}
