use std::collections::BTreeMap;

use candle_core::{DType, Tensor, D};

use super::{safe_norm_last, softplus};
use crate::data::Modality;
use crate::{Error, Result};

/// Per-identity centers and the two distances the contrastive-center loss
/// compares. Rows follow ascending identity label.
#[derive(Debug, Clone)]
pub struct CenterSet {
    pub identities: Vec<usize>,
    /// `(n, D)` visible-modality centers.
    pub rgb: Tensor,
    /// `(n, D)` infrared-modality centers.
    pub ir: Tensor,
    /// `(n, D)` midpoints of the two modality centers.
    pub joint: Tensor,
    /// `(n,)` distance between each identity's two modality centers.
    pub d_intra: Tensor,
    /// `(n,)` distance from each joint center to the nearest other one.
    pub d_inter_min: Tensor,
}

fn averaging_matrix(
    identities: &[usize],
    labels: &[usize],
    modalities: &[Modality],
    modality: Modality,
    dtype: DType,
    device: &candle_core::Device,
) -> Result<Tensor> {
    let b = labels.len();
    let n = identities.len();
    let mut a = vec![0f64; n * b];
    for (row, &id) in identities.iter().enumerate() {
        let members: Vec<usize> = (0..b).filter(|&i| labels[i] == id && modalities[i] == modality).collect();
        if members.is_empty() {
            return Err(Error::Loss(format!(
                "CMCC: identity {id} has no {modality} embedding in the batch"
            )));
        }
        let w = 1.0 / members.len() as f64;
        for i in members {
            a[row * b + i] = w;
        }
    }
    Ok(Tensor::from_vec(a, (n, b), device)?.to_dtype(dtype)?)
}

/// Builds the centers from normalized embeddings `g` of shape `(B, D)`.
pub fn cmcc_centers(g: &Tensor, labels: &[usize], modalities: &[Modality]) -> Result<CenterSet> {
    let (b, dim) = g.dims2()?;
    if labels.len() != b || modalities.len() != b {
        return Err(Error::Shape(format!(
            "CMCC got {} labels and {} modalities for {b} embeddings",
            labels.len(),
            modalities.len()
        )));
    }
    let identities: Vec<usize> = labels.iter().copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    if identities.len() < 2 {
        return Err(Error::Loss("CMCC requires ≥2 identities".into()));
    }
    let n = identities.len();
    let a_rgb = averaging_matrix(&identities, labels, modalities, Modality::Rgb, g.dtype(), g.device())?;
    let a_ir = averaging_matrix(&identities, labels, modalities, Modality::Ir, g.dtype(), g.device())?;
    let rgb = a_rgb.matmul(g)?;
    let ir = a_ir.matmul(g)?;
    let joint = ((&rgb + &ir)? * 0.5)?;
    let d_intra = safe_norm_last(&(&rgb - &ir)?)?;
    let diff = joint
        .unsqueeze(1)?
        .broadcast_as((n, n, dim))?
        .broadcast_sub(&joint.unsqueeze(0)?.broadcast_as((n, n, dim))?)?;
    let pairwise = safe_norm_last(&diff)?;
    // Push the diagonal out of reach of the minimum.
    let mut diag = vec![0f64; n * n];
    for i in 0..n {
        diag[i * n + i] = 1e12;
    }
    let diag = Tensor::from_vec(diag, (n, n), g.device())?.to_dtype(g.dtype())?;
    let d_inter_min = (pairwise + diag)?.min(D::Minus1)?;
    Ok(CenterSet {
        identities,
        rgb,
        ir,
        joint,
        d_intra,
        d_inter_min,
    })
}

/// Cross-modality contrastive-center loss:
/// `mean_k softplus(d_intra(k) - min_{j != k} ||c_k - c_j||)`.
pub fn cmcc_loss(g: &Tensor, labels: &[usize], modalities: &[Modality]) -> Result<Tensor> {
    let centers = cmcc_centers(g, labels, modalities)?;
    Ok(softplus(&(centers.d_intra - centers.d_inter_min)?)?.mean_all()?)
}

/// Mean intra-identity and mean nearest-inter-identity center distances,
/// computed in plain `f64` from row vectors.
pub fn center_distance_summary(
    features: &[Vec<f64>],
    labels: &[usize],
    modalities: &[Modality],
) -> Result<(f64, f64)> {
    let mut groups: BTreeMap<usize, [(Vec<f64>, usize); 2]> = BTreeMap::new();
    let dim = features.first().map_or(0, |f| f.len());
    for ((f, &l), &m) in features.iter().zip(labels).zip(modalities) {
        let e = groups
            .entry(l)
            .or_insert_with(|| [(vec![0.0; dim], 0), (vec![0.0; dim], 0)]);
        let slot = &mut e[m as usize];
        for (acc, v) in slot.0.iter_mut().zip(f) {
            *acc += v;
        }
        slot.1 += 1;
    }
    if groups.len() < 2 {
        return Err(Error::Loss("CMCC requires ≥2 identities".into()));
    }
    let mut intra = Vec::new();
    let mut joint = Vec::new();
    for (id, [(rs, rn), (is, inn)]) in &groups {
        if *rn == 0 || *inn == 0 {
            return Err(Error::Loss(format!("identity {id} is missing a modality")));
        }
        let r: Vec<f64> = rs.iter().map(|v| v / *rn as f64).collect();
        let i: Vec<f64> = is.iter().map(|v| v / *inn as f64).collect();
        intra.push(euclid(&r, &i));
        joint.push(r.iter().zip(&i).map(|(a, b)| (a + b) / 2.0).collect::<Vec<f64>>());
    }
    let n = joint.len();
    let mut inter = 0.0;
    for k in 0..n {
        inter += (0..n)
            .filter(|&j| j != k)
            .map(|j| euclid(&joint[k], &joint[j]))
            .fold(f64::INFINITY, f64::min);
    }
    Ok((intra.iter().sum::<f64>() / n as f64, inter / n as f64))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}
