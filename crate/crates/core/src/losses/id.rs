use candle_core::Tensor;

use crate::{Error, Result};

/// Softmax cross-entropy averaged over the batch.
pub fn id_loss(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (b, n) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for {b} logit rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(Error::Loss(format!("label {bad} out of range for {n} classes")));
    }
    let log_p = candle_nn::ops::log_softmax(logits, 1)?;
    let idx = Tensor::from_vec(labels.iter().map(|&l| l as u32).collect::<Vec<_>>(), (b, 1), logits.device())?;
    let picked = log_p.gather(&idx, 1)?.to_dtype(logits.dtype())?;
    Ok((picked.sum_all()? / -(b as f64))?)
}
