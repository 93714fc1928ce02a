use candle_core::{DType, Device, Tensor};

use super::config::ModelConfig;
use super::layers::{BatchNorm, Conv2d, GeM, NonLocalBlock, ResidualBlock};
use super::params::{ParamInit, ParamStore};
use crate::data::Modality;
use crate::edge::{apply_fusion, FusionKind, FusionParams};
use crate::{Error, Result};

/// Network inputs for one batch.
#[derive(Debug, Clone)]
pub struct NetInput {
    /// `(B, 3, H, W)` normalized images.
    pub images: Tensor,
    pub modalities: Vec<Modality>,
    /// `(B, 1, h, w)` edge maps at stem resolution; needed by the additive,
    /// concatenating and perceptual-edge strategies.
    pub stem_edges: Option<Tensor>,
    /// `(B, 3, H, W)` full-resolution edge maps for classic late fusion.
    pub edge_images: Option<Tensor>,
}

/// Activations exposed to the losses.
#[derive(Debug, Clone)]
pub struct TapPoints {
    /// `(B, C, h, w)` stem output, before any fusion.
    pub stem_features: Tensor,
    /// `(B, D)` pooled vector before the neck.
    pub pre_bn: Tensor,
    /// `(B, D)` neck output, used for retrieval and classification.
    pub post_bn: Tensor,
    /// `post_bn` scaled to unit length.
    pub normalized: Tensor,
    pub logits: Tensor,
}

#[derive(Debug, Clone)]
pub struct Stem {
    conv: Conv2d,
    bn: BatchNorm,
}

impl Stem {
    fn new(store: &ParamStore, name: &str, out_c: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(store, &format!("{name}.conv"), 3, out_c, 7, 2, 3, false)?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), out_c)?,
        })
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let h = self.bn.forward(&self.conv.forward(x)?, train)?.relu()?;
        // Zero padding is equivalent to -inf padding after the ReLU.
        let h = h.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
        max_pool_3x3_s2(&h)
    }
}

/// 3x3 max pooling with stride 2 and no padding, built from strided views
/// so that it is differentiable (overlapping windows).
pub fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if h < 3 || w < 3 {
        return Err(Error::Shape(format!("3x3 pooling needs at least 3x3 input, got {h}x{w}")));
    }
    let (oh, ow) = ((h - 3) / 2 + 1, (w - 3) / 2 + 1);
    // Room for offset 2 plus 2*oh rows; the extra row is never selected.
    let x = x.pad_with_zeros(2, 0, (2 * oh + 2).saturating_sub(h))?;
    let x = x.pad_with_zeros(3, 0, (2 * ow + 2).saturating_sub(w))?;
    let mut views = Vec::with_capacity(9);
    for dy in 0..3 {
        for dx in 0..3 {
            let v = x
                .narrow(2, dy, 2 * oh)?
                .narrow(3, dx, 2 * ow)?
                .reshape((b, c, oh, 2, ow, 2))?
                .narrow(3, 0, 1)?
                .narrow(5, 0, 1)?
                .reshape((b, c, oh, ow))?;
            views.push(v);
        }
    }
    Ok(Tensor::stack(&views, 0)?.max(0)?)
}

#[derive(Debug, Clone)]
struct Stage {
    blocks: Vec<ResidualBlock>,
    nonlocal: Option<NonLocalBlock>,
}

/// Two-stream network: unshared per-modality stems, shared residual trunk
/// with optional non-local blocks, GeM pooling, batch-norm neck and a
/// bias-free linear classifier.
pub struct TwoStreamNet {
    cfg: ModelConfig,
    store: ParamStore,
    rgb_stem: Stem,
    ir_stem: Stem,
    edge_stem: Option<Stem>,
    stages: Vec<Stage>,
    gem: GeM,
    neck: BatchNorm,
    classifier: Tensor,
    fusion: FusionParams,
}

impl std::fmt::Debug for TwoStreamNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TwoStreamNet")
            .field("cfg", &self.cfg)
            .field("fusion", &self.fusion.kind())
            .field("params", &self.store.num_parameters())
            .finish()
    }
}

impl TwoStreamNet {
    pub fn new(cfg: &ModelConfig, fusion: FusionKind, seed: u64, dtype: DType) -> Result<Self> {
        cfg.validate()?;
        let store = ParamStore::new(seed, dtype, Device::Cpu);
        let c = cfg.stem_out_channels;
        let rgb_stem = Stem::new(&store, "rgb_stem", c)?;
        let ir_stem = Stem::new(&store, "ir_stem", c)?;
        let mut stages = Vec::new();
        let mut in_c = c;
        for (i, ((&out_c, &n), stride)) in cfg
            .trunk_stage_channels
            .iter()
            .zip(&cfg.trunk_stage_blocks)
            .zip(cfg.stage_strides())
            .enumerate()
        {
            let mut blocks = Vec::new();
            for b in 0..n {
                let s = if b == 0 { stride } else { 1 };
                blocks.push(ResidualBlock::new(&store, &format!("trunk.stage{i}.block{b}"), cfg.block, in_c, out_c, s)?);
                in_c = out_c;
            }
            let nonlocal = if cfg.nonlocal_positions.contains(&i) {
                Some(NonLocalBlock::new(&store, &format!("trunk.stage{i}.nonlocal"), out_c)?)
            } else {
                None
            };
            stages.push(Stage { blocks, nonlocal });
        }
        let gem = GeM::new(&store, "trunk.gem", cfg.gem_p_init)?;
        let neck = BatchNorm::with_init(&store, "neck.bn", cfg.embedding_dim, 1.0, false)?;
        let classifier = store.param(
            "classifier.weight",
            &[cfg.num_classes, cfg.embedding_dim],
            ParamInit::Normal { std: 0.001 },
        )?;
        let fusion = FusionParams::new(fusion, c, cfg.embedding_dim, &store, "fusion")?;
        let edge_stem = if fusion.kind() == FusionKind::ClassicFeatureFusion {
            Some(Stem::new(&store, "fusion.edge_stem", c)?)
        } else {
            None
        };
        Ok(Self {
            cfg: cfg.clone(),
            store,
            rgb_stem,
            ir_stem,
            edge_stem,
            stages,
            gem,
            neck,
            classifier,
            fusion,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn fusion(&self) -> &FusionParams {
        &self.fusion
    }

    pub fn fusion_kind(&self) -> FusionKind {
        self.fusion.kind()
    }

    pub fn gem(&self) -> &GeM {
        &self.gem
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    pub fn needs_stem_edges(&self) -> bool {
        matches!(
            self.fusion.kind(),
            FusionKind::DirectlyAdd | FusionKind::WeightedAdd | FusionKind::Concat | FusionKind::PefLoss
        )
    }

    pub fn needs_edge_images(&self) -> bool {
        self.edge_stem.is_some()
    }

    pub fn stem(&self, modality: Modality) -> &Stem {
        match modality {
            Modality::Rgb => &self.rgb_stem,
            Modality::Ir => &self.ir_stem,
        }
    }

    /// Runs `x` through the stem of `modality`.
    pub fn stem_forward(&self, x: &Tensor, modality: Modality, train: bool) -> Result<Tensor> {
        self.stem(modality).forward(x, train)
    }

    /// Routes each batch item through its modality's stem, preserving order.
    fn routed_stems(&self, images: &Tensor, modalities: &[Modality], train: bool) -> Result<Tensor> {
        let b = images.dim(0)?;
        if modalities.len() != b {
            return Err(Error::Shape(format!("{} modality labels for batch of {b}", modalities.len())));
        }
        let mut order = Vec::with_capacity(b);
        let mut parts = Vec::new();
        for m in Modality::ALL {
            let idx: Vec<u32> = (0..b as u32).filter(|&i| modalities[i as usize] == m).collect();
            if idx.is_empty() {
                continue;
            }
            let sel = Tensor::from_vec(idx.clone(), idx.len(), images.device())?;
            parts.push(self.stem_forward(&images.index_select(&sel, 0)?, m, train)?);
            order.extend(idx);
        }
        let joined = if parts.len() == 1 { parts.pop().unwrap() } else { Tensor::cat(&parts, 0)? };
        if order.iter().enumerate().all(|(i, &o)| i as u32 == o) {
            return Ok(joined);
        }
        let mut inverse = vec![0u32; b];
        for (pos, &orig) in order.iter().enumerate() {
            inverse[orig as usize] = pos as u32;
        }
        let inv = Tensor::from_vec(inverse, b, images.device())?;
        Ok(joined.index_select(&inv, 0)?)
    }

    /// Shared trunk and GeM pooling: `(B, C, h, w)` -> `(B, D)`.
    pub fn trunk_forward(&self, f: &Tensor, train: bool) -> Result<Tensor> {
        self.gem.forward(&self.trunk_feature_map(f, train)?)
    }

    /// Trunk output before pooling.
    pub fn trunk_feature_map(&self, f: &Tensor, train: bool) -> Result<Tensor> {
        let mut h = f.clone();
        for stage in &self.stages {
            for block in &stage.blocks {
                h = block.forward(&h, train)?;
            }
            if let Some(nl) = &stage.nonlocal {
                h = nl.forward(&h, train)?;
            }
        }
        Ok(h)
    }

    /// Neck and classifier: returns `(post_bn, logits)`.
    pub fn neck_and_classify(&self, pre_bn: &Tensor, train: bool) -> Result<(Tensor, Tensor)> {
        let post = self.neck.forward(pre_bn, train)?;
        let logits = post.matmul(&self.classifier.t()?)?;
        Ok((post, logits))
    }

    pub fn forward(&self, input: &NetInput, train: bool) -> Result<TapPoints> {
        let stem_features = self.routed_stems(&input.images, &input.modalities, train)?;
        let fused = if self.fusion.kind().modifies_stem() {
            let edges = input
                .stem_edges
                .as_ref()
                .ok_or_else(|| Error::Config("fusion strategy needs stem-resolution edge maps".into()))?;
            apply_fusion(&self.fusion, &stem_features, edges)?
        } else {
            stem_features.clone()
        };
        let pre_bn = match (&self.fusion, &self.edge_stem) {
            (FusionParams::Classic(late), Some(edge_stem)) => {
                let edge_images = input
                    .edge_images
                    .as_ref()
                    .ok_or_else(|| Error::Config("classic fusion needs edge images".into()))?;
                let b = fused.dim(0)?;
                let edge_features = edge_stem.forward(edge_images, train)?;
                let pooled = self.trunk_forward(&Tensor::cat(&[&fused, &edge_features], 0)?, train)?;
                late.forward(&pooled.narrow(0, 0, b)?, &pooled.narrow(0, b, b)?)?
            }
            _ => self.trunk_forward(&fused, train)?,
        };
        let (post_bn, logits) = self.neck_and_classify(&pre_bn, train)?;
        let normalized = l2_normalize(&post_bn)?;
        Ok(TapPoints {
            stem_features,
            pre_bn,
            post_bn,
            normalized,
            logits,
        })
    }

    /// Restores `GeM.p >= MIN_P` after an optimizer step.
    pub fn clamp_parameters(&self) -> Result<()> {
        if let Some(var) = self.store.get_param("trunk.gem.p") {
            let clamped = var.as_tensor().maximum(GeM::MIN_P)?;
            var.set(&clamped)?;
        }
        Ok(())
    }
}

/// Row-wise L2 normalization of a `(B, D)` matrix.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(1)? + 1e-24)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}
