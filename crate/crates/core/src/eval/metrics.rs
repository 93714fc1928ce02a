use serde::{Deserialize, Serialize};

use crate::model::FeatureMatrix;
use crate::{Error, Result};

/// Gallery order per query, by ascending cosine distance.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingResult {
    /// `order[q]` lists gallery indices, nearest first. Equal distances
    /// keep gallery index order.
    pub order: Vec<Vec<usize>>,
    /// `distances[q][g]`, indexed by gallery position (not rank).
    pub distances: Vec<Vec<f64>>,
    /// `matches[q][r]` is true when the item at rank `r` shares the
    /// query's identity.
    pub matches: Vec<Vec<bool>>,
}

fn unit_rows(m: &FeatureMatrix, what: &str) -> Result<Vec<Vec<f64>>> {
    (0..m.rows)
        .map(|i| {
            let row = m.row(i);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Eval(format!("{what} feature {i} has norm {norm}")));
            }
            Ok(row.iter().map(|v| v / norm).collect())
        })
        .collect()
}

/// Ranks every gallery row for every query row under cosine distance
/// `1 - a.b / (|a||b|)`.
pub fn rank(
    query: &FeatureMatrix,
    gallery: &FeatureMatrix,
    query_ids: &[usize],
    gallery_ids: &[usize],
) -> Result<RankingResult> {
    if query.dim != gallery.dim {
        return Err(Error::Shape(format!("query dim {} vs gallery dim {}", query.dim, gallery.dim)));
    }
    if query_ids.len() != query.rows || gallery_ids.len() != gallery.rows {
        return Err(Error::Shape("identity labels do not match feature rows".into()));
    }
    let q = unit_rows(query, "query")?;
    let g = unit_rows(gallery, "gallery")?;
    let mut out = RankingResult {
        order: Vec::with_capacity(q.len()),
        distances: Vec::with_capacity(q.len()),
        matches: Vec::with_capacity(q.len()),
    };
    for (qi, qv) in q.iter().enumerate() {
        let dist: Vec<f64> = g
            .iter()
            .map(|gv| 1.0 - qv.iter().zip(gv).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let mut order: Vec<usize> = (0..g.len()).collect();
        // stable sort: ties stay in gallery order
        order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]));
        out.matches.push(order.iter().map(|&j| gallery_ids[j] == query_ids[qi]).collect());
        out.order.push(order);
        out.distances.push(dist);
    }
    Ok(out)
}

/// Metrics of one gallery draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    /// `cmc[k]` is the fraction of queries with a match in the top `k + 1`.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub minp: f64,
    pub num_queries: usize,
    /// Queries dropped because the gallery holds none of their identity.
    pub excluded_queries: usize,
}

impl TrialMetrics {
    /// CMC at 1-based rank `k`; ranks past the gallery size saturate.
    pub fn rank_k(&self, k: usize) -> f64 {
        match self.cmc.len() {
            0 => 0.0,
            n => self.cmc[k.clamp(1, n) - 1],
        }
    }
}

/// CMC curve, mAP and mINP. Average precision is the mean of `j / r_j`
/// over the 1-based ranks `r_j` of the positives; INP is the number of
/// positives over the rank of the last one.
pub fn cmc_map_minp(ranking: &RankingResult) -> Result<TrialMetrics> {
    let gallery = ranking.matches.first().map_or(0, Vec::len);
    let mut hits = vec![0usize; gallery];
    let (mut ap_sum, mut inp_sum) = (0.0, 0.0);
    let mut valid = 0usize;
    for row in &ranking.matches {
        let ranks: Vec<usize> = row.iter().enumerate().filter(|(_, &m)| m).map(|(r, _)| r + 1).collect();
        let Some(&first) = ranks.first() else { continue };
        valid += 1;
        hits[first - 1] += 1;
        ap_sum += ranks.iter().enumerate().map(|(j, &r)| (j + 1) as f64 / r as f64).sum::<f64>() / ranks.len() as f64;
        inp_sum += ranks.len() as f64 / *ranks.last().unwrap() as f64;
    }
    let excluded = ranking.matches.len() - valid;
    if excluded > 0 {
        log::info!("{excluded} queries have no positive in the gallery and are excluded");
    }
    if valid == 0 {
        return Err(Error::Eval("no query has a positive in the gallery".into()));
    }
    let mut cmc = Vec::with_capacity(gallery);
    let mut acc = 0usize;
    for h in hits {
        acc += h;
        cmc.push(acc as f64 / valid as f64);
    }
    Ok(TrialMetrics {
        cmc,
        map: ap_sum / valid as f64,
        minp: inp_sum / valid as f64,
        num_queries: valid,
        excluded_queries: excluded,
    })
}
