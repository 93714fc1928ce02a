use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::PerceptualNet;
use crate::data::Modality;
use crate::{Error, Result};

/// How a `C`-channel stem map becomes the perceptual net's 3-channel input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PefAdapter {
    /// Mean over channels, replicated three times.
    #[default]
    ChannelMean,
    /// Max over channels, replicated three times.
    ChannelMax,
}

impl PefAdapter {
    /// `(B, C, h, w)` -> `(B, 3, h, w)`.
    pub fn map_features(self, f: &Tensor) -> Result<Tensor> {
        let reduced = match self {
            PefAdapter::ChannelMean => f.mean_keepdim(1)?,
            PefAdapter::ChannelMax => f.max_keepdim(1)?,
        };
        Ok(reduced.repeat((1, 3, 1, 1))?)
    }
}

/// `(B, 1, h', w')` edges -> detached `(B, 3, h, w)`, bilinearly resized
/// when the sizes differ.
pub fn map_edges(e: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (b, c, eh, ew) = e.dims4()?;
    if c != 1 {
        return Err(Error::Shape(format!("edge maps must have 1 channel, got {c}")));
    }
    let e = e.detach();
    let e = if (eh, ew) == (height, width) {
        e
    } else {
        let dtype = e.dtype();
        let data: Vec<f64> = e.flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1()?;
        let mut out = Vec::with_capacity(b * height * width);
        for item in data.chunks(eh * ew) {
            let r = crate::edge::Raster::new(eh, ew, item.to_vec())?;
            out.extend(crate::edge::resize_bilinear(&r, height, width).data);
        }
        Tensor::from_vec(out, (b, 1, height, width), e.device())?.to_dtype(dtype)?
    };
    Ok(e.repeat((1, 3, 1, 1))?)
}

/// Perceptual edge loss from already-mapped inputs and an arbitrary tap
/// function. Per item: `sum_t mean((phi_t(x) - phi_t(y))^2)`; items are
/// averaged within each modality and the modality averages are summed.
pub fn pef_loss_with_taps<F>(x: &Tensor, y: &Tensor, modalities: &[Modality], taps: F) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Vec<Tensor>>,
{
    let b = x.dim(0)?;
    if y.dims() != x.dims() {
        return Err(Error::Shape(format!("pef inputs {:?} vs {:?}", x.dims(), y.dims())));
    }
    if modalities.len() != b {
        return Err(Error::Shape(format!("{} modality labels for batch of {b}", modalities.len())));
    }
    let tx = taps(x)?;
    let ty = taps(y)?;
    let mut per_item: Option<Tensor> = None;
    for (a, c) in tx.iter().zip(&ty) {
        let d = (a - c.detach())?.sqr()?.flatten_from(1)?.mean(1)?;
        per_item = Some(match per_item {
            None => d,
            Some(acc) => (acc + d)?,
        });
    }
    let per_item = per_item.ok_or_else(|| Error::Loss("perceptual net has no blocks".into()))?;
    let mut total: Option<Tensor> = None;
    for m in Modality::ALL {
        let idx: Vec<u32> = (0..b as u32).filter(|&i| modalities[i as usize] == m).collect();
        if idx.is_empty() {
            continue;
        }
        let n = idx.len();
        let idx_t = Tensor::from_vec(idx, n, x.device())?;
        let term = per_item.index_select(&idx_t, 0)?.mean(0)?;
        total = Some(match total {
            None => term,
            Some(acc) => (acc + term)?,
        });
    }
    total.ok_or_else(|| Error::Loss("pef loss over an empty batch".into()))
}

/// Perceptual edge feature loss between stem maps `f` `(B, C, h, w)` and
/// edge maps `e` `(B, 1, h', w')`. Gradients reach `f` only.
pub fn pef_loss(
    f: &Tensor,
    e: &Tensor,
    modalities: &[Modality],
    net: &PerceptualNet,
    adapter: PefAdapter,
) -> Result<Tensor> {
    let (_, _, h, w) = f.dims4()?;
    PerceptualNet::check_input(h, w)?;
    let x = adapter.map_features(f)?;
    let y = map_edges(e, h, w)?;
    pef_loss_with_taps(&x, &y, modalities, |t| net.taps(t))
}
