use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::ExperimentConfig;
use super::trainer::{run_experiment, RunManifest};
use crate::edge::FusionKind;
use crate::losses::LossFlags;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMatrix {
    /// B, B+PEF, B+CMCC, B+PEF+CMCC.
    Loss,
    /// The five edge fusion strategies.
    Fusion,
}

impl FromStr for AblationMatrix {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loss" => Ok(AblationMatrix::Loss),
            "fusion" => Ok(AblationMatrix::Fusion),
            _ => Err(Error::Config(format!("unknown ablation matrix `{s}` (loss | fusion)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationCell {
    pub label: String,
    pub config: ExperimentConfig,
}

/// Configurations of every cell, derived from `base`.
///
/// Fusion cells other than the perceptual-loss one train with the
/// baseline plus center loss, so each differs from the full model only
/// in how edges enter the network.
pub fn matrix_cells(base: &ExperimentConfig, matrix: AblationMatrix) -> Vec<AblationCell> {
    match matrix {
        AblationMatrix::Loss => LossFlags::MATRIX
            .iter()
            .map(|&flags| {
                let mut config = base.clone();
                config.loss.set_flags(flags);
                config.loss.fusion = FusionKind::PefLoss;
                AblationCell {
                    label: flags.label(),
                    config,
                }
            })
            .collect(),
        AblationMatrix::Fusion => FusionKind::ALL
            .iter()
            .map(|&kind| {
                let mut config = base.clone();
                config.loss.set_flags(if kind == FusionKind::PefLoss {
                    LossFlags::FULL
                } else {
                    LossFlags::BASELINE_CMCC
                });
                config.loss.fusion = kind;
                AblationCell {
                    label: kind.label().to_string(),
                    config,
                }
            })
            .collect(),
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) {
    match v {
        Value::Object(map) => {
            for (k, x) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

/// Dotted keys whose values differ between two configurations, with both
/// values.
pub fn config_diff(a: &ExperimentConfig, b: &ExperimentConfig) -> Result<Vec<(String, String, String)>> {
    let (mut fa, mut fb) = (BTreeMap::new(), BTreeMap::new());
    flatten("", &serde_json::to_value(a)?, &mut fa);
    flatten("", &serde_json::to_value(b)?, &mut fb);
    let keys: std::collections::BTreeSet<&String> = fa.keys().chain(fb.keys()).collect();
    let missing = "<absent>".to_string();
    Ok(keys
        .into_iter()
        .filter_map(|k| {
            let (x, y) = (fa.get(k).unwrap_or(&missing), fb.get(k).unwrap_or(&missing));
            (x != y).then(|| (k.clone(), x.clone(), y.clone()))
        })
        .collect())
}

/// Result of one cell under one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub label: String,
    pub seed: u64,
    pub r1: f64,
    pub r10: f64,
    pub map: f64,
    pub minp: f64,
    pub d_intra: f64,
    pub d_inter: f64,
}

impl AblationRun {
    pub fn from_manifest(label: &str, m: &RunManifest) -> Result<Self> {
        let metrics = m
            .final_metrics
            .as_ref()
            .ok_or_else(|| Error::Eval("run finished without metrics".into()))?;
        let g = m.geometry.unwrap_or(super::trainer::Geometry {
            d_intra: f64::NAN,
            d_inter: f64::NAN,
        });
        Ok(Self {
            label: label.to_string(),
            seed: m.config.train.seed,
            r1: metrics.r1,
            r10: metrics.r10,
            map: metrics.map,
            minp: metrics.minp,
            d_intra: g.d_intra,
            d_inter: g.d_inter,
        })
    }
}

/// Across-seed statistics of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub label: String,
    pub runs: usize,
    pub r1_mean: f64,
    /// Sample standard deviation (0 for a single run).
    pub r1_std: f64,
    pub map_mean: f64,
    pub minp_mean: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub matrix: AblationMatrix,
    /// Cell labels in matrix order.
    pub cells: Vec<String>,
    pub runs: Vec<AblationRun>,
    /// Per cell, the keys in which it differs from the first cell.
    pub audit: Vec<(String, Vec<(String, String, String)>)>,
}

impl AblationTable {
    pub fn summaries(&self) -> Vec<CellSummary> {
        self.cells
            .iter()
            .map(|label| {
                let runs: Vec<&AblationRun> = self.runs.iter().filter(|r| &r.label == label).collect();
                let r1: Vec<f64> = runs.iter().map(|r| r.r1).collect();
                let (r1_mean, r1_std) = mean_std(&r1);
                let n = runs.len() as f64;
                CellSummary {
                    label: label.clone(),
                    runs: runs.len(),
                    r1_mean,
                    r1_std,
                    map_mean: runs.iter().map(|r| r.map).sum::<f64>() / n,
                    minp_mean: runs.iter().map(|r| r.minp).sum::<f64>() / n,
                }
            })
            .collect()
    }

    pub fn summary(&self, label: &str) -> Option<CellSummary> {
        self.summaries().into_iter().find(|s| s.label == label)
    }

    /// Every run, one row each.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cell,seed,r1,r10,map,minp,d_intra,d_inter\n");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.label, r.seed, r.r1, r.r10, r.map, r.minp, r.d_intra, r.d_inter
            );
        }
        s
    }

    /// Cells ranked by mean rank-1, as an aligned text table.
    pub fn to_text(&self) -> String {
        let mut rows = self.summaries();
        rows.sort_by(|a, b| b.r1_mean.total_cmp(&a.r1_mean));
        let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(4).max(4);
        let mut s = format!("{:<width$}  {:>14}  {:>7}  {:>7}  runs\n", "cell", "rank-1", "mAP", "mINP");
        for r in rows {
            let _ = writeln!(
                s,
                "{:<width$}  {:>6.2} ± {:<5.2}  {:>7.2}  {:>7.2}  {}",
                r.label,
                100.0 * r.r1_mean,
                100.0 * r.r1_std,
                100.0 * r.map_mean,
                100.0 * r.minp_mean,
                r.runs
            );
        }
        s
    }

    pub fn audit_text(&self) -> String {
        let mut s = String::new();
        for (label, diffs) in &self.audit {
            let _ = writeln!(s, "[{label}]");
            for (k, a, b) in diffs {
                let _ = writeln!(s, "  {k}: {a} -> {b}");
            }
        }
        s
    }
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect()
}

/// Trains and evaluates every cell under every seed. With `out`, each run
/// gets its own directory and the table is written as `ablation.csv`,
/// `ablation.txt` and `audit.txt`.
pub fn run_ablation(
    base: &ExperimentConfig,
    matrix: AblationMatrix,
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<AblationTable> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let cells = matrix_cells(base, matrix);
    let mut audit = Vec::new();
    for cell in &cells {
        audit.push((cell.label.clone(), config_diff(&cells[0].config, &cell.config)?));
    }
    let mut runs = Vec::new();
    for cell in &cells {
        for &seed in seeds {
            let mut cfg = cell.config.clone();
            cfg.train.seed = seed;
            let dir = out.map(|d| d.join(slug(&cell.label)).join(format!("seed{seed}")));
            log::info!("ablation cell {} seed {seed}", cell.label);
            let manifest = run_experiment(&cfg, dir.as_deref())?;
            runs.push(AblationRun::from_manifest(&cell.label, &manifest)?);
        }
    }
    let table = AblationTable {
        matrix,
        cells: cells.iter().map(|c| c.label.clone()).collect(),
        runs,
        audit,
    };
    if let Some(dir) = out {
        for (name, body) in [
            ("ablation.csv", table.to_csv()),
            ("ablation.txt", table.to_text()),
            ("audit.txt", table.audit_text()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(table)
}
