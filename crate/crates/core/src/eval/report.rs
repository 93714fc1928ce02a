use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{cmc_map_minp, rank, TrialMetrics};
use super::protocol::{query_and_candidates, sample_gallery, EvalMode, EvalProtocol, Shot};
use crate::data::{Augmenter, ImageRecord};
use crate::model::{extract_features, FeatureMatrix, InputBuilder, TwoStreamNet};
use crate::{Error, Result};

/// Per-trial metrics and their average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: EvalMode,
    pub shot: Shot,
    pub trials: Vec<TrialMetrics>,
    /// Element-wise mean of the trial CMC curves.
    pub cmc: Vec<f64>,
    pub r1: f64,
    pub r10: f64,
    pub r20: f64,
    pub map: f64,
    pub minp: f64,
}

impl MetricsReport {
    pub fn from_trials(mode: EvalMode, shot: Shot, trials: Vec<TrialMetrics>) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::Eval("no trials to average".into()));
        }
        let n = trials.len() as f64;
        let mean = |f: &dyn Fn(&TrialMetrics) -> f64| trials.iter().map(f).sum::<f64>() / n;
        // Curves may differ in length when galleries do; pad with the last value.
        let len = trials.iter().map(|t| t.cmc.len()).max().unwrap_or(0);
        let cmc = (1..=len).map(|k| mean(&|t| t.rank_k(k))).collect();
        Ok(Self {
            mode,
            shot,
            cmc,
            r1: mean(&|t| t.rank_k(1)),
            r10: mean(&|t| t.rank_k(10)),
            r20: mean(&|t| t.rank_k(20)),
            map: mean(&|t| t.map),
            minp: mean(&|t| t.minp),
            trials,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per trial plus a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("mode,shot,trial,r1,r10,r20,map,minp\n");
        let mut row = |trial: &str, r1: f64, r10: f64, r20: f64, map: f64, minp: f64| {
            let _ = writeln!(s, "{},{},{trial},{r1},{r10},{r20},{map},{minp}", self.mode, self.shot);
        };
        for (i, t) in self.trials.iter().enumerate() {
            row(&i.to_string(), t.rank_k(1), t.rank_k(10), t.rank_k(20), t.map, t.minp);
        }
        row("mean", self.r1, self.r10, self.r20, self.map, self.minp);
        s
    }

    /// CMC curve plot data: `rank,trial_0,...,mean`.
    pub fn cmc_csv(&self) -> String {
        let mut s = String::from("rank");
        for i in 0..self.trials.len() {
            let _ = write!(s, ",trial_{i}");
        }
        s.push_str(",mean\n");
        for k in 1..=self.cmc.len() {
            let _ = write!(s, "{k}");
            for t in &self.trials {
                let _ = write!(s, ",{}", t.rank_k(k));
            }
            let _ = writeln!(s, ",{}", self.cmc[k - 1]);
        }
        s
    }

    /// Writes `metrics.json`, `metrics.csv` and `cmc.csv` into `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [
            ("metrics.json", self.to_json()?),
            ("metrics.csv", self.to_csv()),
            ("cmc.csv", self.cmc_csv()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// One gallery draw. `features` rows are aligned with `records`.
pub fn evaluate_trial(
    features: &FeatureMatrix,
    records: &[ImageRecord],
    protocol: &EvalProtocol,
    trial: usize,
) -> Result<TrialMetrics> {
    if features.rows != records.len() {
        return Err(Error::Shape(format!("{} feature rows for {} records", features.rows, records.len())));
    }
    let (query, _) = query_and_candidates(records, protocol);
    if query.is_empty() {
        return Err(Error::Eval(format!("no {} queries", protocol.mode.query_modality())));
    }
    let gallery = sample_gallery(records, protocol, trial)?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| records[i].identity).collect::<Vec<_>>();
    let ranking = rank(&features.select(&query), &features.select(&gallery), &ids(&query), &ids(&gallery))?;
    cmc_map_minp(&ranking)
}

/// All trials of `protocol` over precomputed features.
pub fn evaluate(features: &FeatureMatrix, records: &[ImageRecord], protocol: &EvalProtocol) -> Result<MetricsReport> {
    protocol.validate()?;
    let trials = (0..protocol.num_trials)
        .map(|t| evaluate_trial(features, records, protocol, t))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_trials(protocol.mode, protocol.shot, trials)
}

/// Extracts features once (test records only) and runs every trial.
pub fn evaluate_model(
    net: &TwoStreamNet,
    records: &[ImageRecord],
    protocol: &EvalProtocol,
    builder: &InputBuilder,
    resizer: &Augmenter,
    batch_size: usize,
) -> Result<MetricsReport> {
    let (query, candidates) = query_and_candidates(records, protocol);
    let mut used: Vec<usize> = query.into_iter().chain(candidates).collect();
    used.sort_unstable();
    let refs: Vec<&ImageRecord> = used.iter().map(|&i| &records[i]).collect();
    let extracted = extract_features(net, &refs, builder, resizer, batch_size)?;
    // Rows of records outside the protocol are never selected; fill with NaN.
    let dim = extracted.dim;
    let mut data = vec![f64::NAN; records.len() * dim];
    for (k, &i) in used.iter().enumerate() {
        data[i * dim..(i + 1) * dim].copy_from_slice(extracted.row(k));
    }
    let full = FeatureMatrix {
        rows: records.len(),
        dim,
        data,
    };
    evaluate(&full, records, protocol)
}
