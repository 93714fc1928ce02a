//! Edge-fusion strategies.
//!
//! Three strategies inject the (resampled) edge map into the stem features
//! directly: plain addition, addition with a learnable per-channel weight,
//! and concatenation followed by a 1x1 projection back to the stem width.
//! The perceptual-edge strategy leaves the features untouched and acts
//! through its loss instead. Classic late fusion runs the edge map through
//! the network as a third stream and merges the two embeddings with a
//! linear projection after pooling.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::model::{ParamInit, ParamStore};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    DirectlyAdd,
    WeightedAdd,
    Concat,
    #[default]
    PefLoss,
    ClassicFeatureFusion,
}

impl FusionKind {
    pub const ALL: [FusionKind; 5] = [
        FusionKind::DirectlyAdd,
        FusionKind::WeightedAdd,
        FusionKind::Concat,
        FusionKind::PefLoss,
        FusionKind::ClassicFeatureFusion,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FusionKind::DirectlyAdd => "Directly Add Fusion",
            FusionKind::WeightedAdd => "Weighted Add Fusion",
            FusionKind::Concat => "Concat Fusion",
            FusionKind::PefLoss => "PEF Loss Fusion",
            FusionKind::ClassicFeatureFusion => "Classic Feature Fusion",
        }
    }

    /// Whether the strategy changes the stem output before the trunk.
    pub fn modifies_stem(self) -> bool {
        matches!(self, FusionKind::DirectlyAdd | FusionKind::WeightedAdd | FusionKind::Concat)
    }
}

/// Learnable parameters owned by the active fusion strategy.
#[derive(Debug, Clone)]
pub enum FusionParams {
    None(FusionKind),
    /// One scalar per stem channel.
    WeightedAdd { weights: Tensor },
    /// `(C, C + 1, 1, 1)` projection, no bias.
    Concat { projection: Tensor },
    Classic(ClassicLateFusion),
}

impl FusionParams {
    /// Creates the parameters for `kind` under `prefix`. Weighted-add starts
    /// at one (plain addition); the projections start at `(identity | 0)`.
    pub fn new(
        kind: FusionKind,
        stem_channels: usize,
        embedding_dim: usize,
        store: &ParamStore,
        prefix: &str,
    ) -> Result<Self> {
        let c = stem_channels;
        Ok(match kind {
            FusionKind::DirectlyAdd | FusionKind::PefLoss => FusionParams::None(kind),
            FusionKind::WeightedAdd => FusionParams::WeightedAdd {
                weights: store.param(&format!("{prefix}.weighted_add.weights"), &[c], ParamInit::Const(1.0))?,
            },
            FusionKind::Concat => FusionParams::Concat {
                projection: store.param(&format!("{prefix}.concat.projection"), &[c, c + 1, 1, 1], ParamInit::Eye)?,
            },
            FusionKind::ClassicFeatureFusion => FusionParams::Classic(ClassicLateFusion {
                projection: store.param(
                    &format!("{prefix}.classic.projection"),
                    &[embedding_dim, 2 * embedding_dim],
                    ParamInit::Eye,
                )?,
            }),
        })
    }

    pub fn kind(&self) -> FusionKind {
        match self {
            FusionParams::None(k) => *k,
            FusionParams::WeightedAdd { .. } => FusionKind::WeightedAdd,
            FusionParams::Concat { .. } => FusionKind::Concat,
            FusionParams::Classic(_) => FusionKind::ClassicFeatureFusion,
        }
    }
}

pub fn apply_fusion(params: &FusionParams, stem: &Tensor, edge: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = stem.dims4()?;
    let (eb, ec, eh, ew) = edge.dims4()?;
    if (eb, ec, eh, ew) != (b, 1, h, w) {
        return Err(Error::Shape(format!(
            "edge map {:?} does not match stem features {:?}",
            edge.dims(),
            stem.dims()
        )));
    }
    match params {
        FusionParams::None(FusionKind::DirectlyAdd) => Ok(stem.broadcast_add(edge)?),
        FusionParams::WeightedAdd { weights } => {
            if weights.dims() != [c] {
                return Err(Error::Shape(format!("weighted-add has {:?} weights for {c} channels", weights.dims())));
            }
            let scaled = edge.broadcast_mul(&weights.reshape((1, c, 1, 1))?)?;
            Ok((stem + scaled)?)
        }
        FusionParams::Concat { projection } => {
            if projection.dims() != [c, c + 1, 1, 1] {
                return Err(Error::Shape(format!("concat projection {:?} for {c} channels", projection.dims())));
            }
            let joined = Tensor::cat(&[stem, edge], 1)?;
            Ok(joined.conv2d(projection, 0, 1, 1, 1)?)
        }
        other => Err(Error::Config(format!(
            "{} does not modify stem features",
            other.kind().label()
        ))),
    }
}

/// Late fusion of image and edge embeddings: `[img | edge] · Wᵀ` with
/// `W` of shape `(D, 2D)`.
#[derive(Debug, Clone)]
pub struct ClassicLateFusion {
    pub projection: Tensor,
}

impl ClassicLateFusion {
    pub fn from_projection(projection: Tensor) -> Self {
        Self { projection }
    }

    pub fn forward(&self, img: &Tensor, edge: &Tensor) -> Result<Tensor> {
        let (b, d) = img.dims2()?;
        let (pd, p2d) = self.projection.dims2()?;
        if edge.dims() != [b, d] || pd != d || p2d != 2 * d {
            return Err(Error::Shape(format!(
                "late fusion of {:?} and {:?} with projection {:?}",
                img.dims(),
                edge.dims(),
                self.projection.dims()
            )));
        }
        let joined = Tensor::cat(&[img, edge], 1)?;
        Ok(joined.matmul(&self.projection.t()?)?)
    }
}
