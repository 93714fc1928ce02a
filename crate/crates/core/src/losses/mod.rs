//! Training losses: perceptual edge features, cross-modality
//! contrastive-center, identity cross-entropy and weighted-regularization
//! triplet, plus their unweighted sum.

mod cmcc;
mod id;
mod pef;
mod perceptual;
mod total;
mod wrt;

pub use cmcc::{center_distance_summary, cmcc_centers, cmcc_loss, CenterSet};
pub use id::id_loss;
pub use pef::{pef_loss, PefAdapter};
pub use perceptual::{PerceptualNet, PerceptualSource};
pub use total::{total_loss, LossFlags, LossReport, LossTerms};
pub use wrt::{pairwise_distances, wrt_loss};

use candle_core::Tensor;

use crate::Result;

/// Numerically stable `log(1 + exp(x))`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = ((x.abs()?.neg()?.exp()? + 1.0)?).log()?;
    Ok((x.relu()? + tail)?)
}

/// Euclidean norm along the last axis, with a tiny offset under the root so
/// the gradient at zero is finite (and zero).
pub(crate) fn safe_norm_last(x: &Tensor) -> Result<Tensor> {
    Ok((x.sqr()?.sum(candle_core::D::Minus1)? + 1e-30)?.sqrt()?)
}
