use candle_core::{Tensor, D};

use super::{safe_norm_last, softplus};
use crate::{Error, Result};

/// `(B, B)` Euclidean distances between the rows of `x`.
pub fn pairwise_distances(x: &Tensor) -> Result<Tensor> {
    let (b, d) = x.dims2()?;
    let diff = x
        .unsqueeze(1)?
        .broadcast_as((b, b, d))?
        .broadcast_sub(&x.unsqueeze(0)?.broadcast_as((b, b, d))?)?;
    safe_norm_last(&diff)
}

/// Softmax of `values` restricted to the entries where `mask` is 1, row-wise.
/// Masked-out entries get weight exactly zero.
fn masked_softmax(values: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let floor = values.ones_like()?.affine(0.0, -1e30)?;
    let masked = mask.where_cond(values, &floor)?;
    let shift = masked.max_keepdim(1)?.detach();
    let e = masked.broadcast_sub(&shift)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(1)?)?)
}

/// Weighted-regularization triplet loss averaged over anchors.
///
/// For each anchor, positives (same label, excluding the anchor) are
/// weighted by a softmax over their distances and negatives by a softmax
/// over their negated distances; the anchor's loss is
/// `softplus(sum_p w_p d_p - sum_n w_n d_n)`.
pub fn wrt_loss(embeddings: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, _) = embeddings.dims2()?;
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for {b} embeddings", labels.len())));
    }
    let mut pos = vec![0u8; b * b];
    let mut neg = vec![0u8; b * b];
    for i in 0..b {
        for j in 0..b {
            if i != j && labels[i] == labels[j] {
                pos[i * b + j] = 1;
            } else if labels[i] != labels[j] {
                neg[i * b + j] = 1;
            }
        }
        let np = pos[i * b..(i + 1) * b].iter().filter(|&&v| v == 1).count();
        let nn = neg[i * b..(i + 1) * b].iter().filter(|&&v| v == 1).count();
        if np == 0 || nn == 0 {
            return Err(Error::Loss(format!(
                "anchor {i} has {np} positives and {nn} negatives; WRT needs at least one of each"
            )));
        }
    }
    let device = embeddings.device();
    let pos = Tensor::from_vec(pos, (b, b), device)?;
    let neg = Tensor::from_vec(neg, (b, b), device)?;
    let dist = pairwise_distances(embeddings)?;
    let w_pos = masked_softmax(&dist, &pos)?;
    let w_neg = masked_softmax(&dist.neg()?, &neg)?;
    let furthest_positive = (&w_pos * &dist)?.sum(D::Minus1)?;
    let closest_negative = (&w_neg * &dist)?.sum(D::Minus1)?;
    Ok(softplus(&(furthest_positive - closest_negative)?)?.mean_all()?)
}
