use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ImageRecord, Modality, Split, SYSU_INDOOR_RGB_CAMERAS};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    SysuAll,
    SysuIndoor,
    /// Visible queries against a thermal gallery.
    RegdbV2t,
    /// Thermal queries against a visible gallery.
    RegdbT2v,
    /// IR queries against a sampled RGB gallery, as in `SysuAll`.
    #[default]
    Synthetic,
}

impl EvalMode {
    pub const ALL: [EvalMode; 5] = [
        EvalMode::SysuAll,
        EvalMode::SysuIndoor,
        EvalMode::RegdbV2t,
        EvalMode::RegdbT2v,
        EvalMode::Synthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::SysuAll => "sysu_all",
            EvalMode::SysuIndoor => "sysu_indoor",
            EvalMode::RegdbV2t => "regdb_v2t",
            EvalMode::RegdbT2v => "regdb_t2v",
            EvalMode::Synthetic => "synthetic",
        }
    }

    pub fn query_modality(self) -> Modality {
        match self {
            EvalMode::RegdbV2t => Modality::Rgb,
            _ => Modality::Ir,
        }
    }

    /// Whether the gallery is redrawn per trial (per-camera sampling).
    pub fn samples_gallery(self) -> bool {
        matches!(self, EvalMode::SysuAll | EvalMode::SysuIndoor | EvalMode::Synthetic)
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EvalMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown eval mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shot {
    #[default]
    Single,
    Multi,
}

impl Shot {
    /// Gallery images drawn per (identity, camera) cell.
    pub fn per_cell(self) -> usize {
        match self {
            Shot::Single => 1,
            Shot::Multi => 10,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Shot::Single => "single",
            Shot::Multi => "multi",
        }
    }
}

impl fmt::Display for Shot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Shot {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Shot::Single),
            "multi" => Ok(Shot::Multi),
            _ => Err(Error::Config(format!("unknown shot `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalProtocol {
    pub mode: EvalMode,
    pub shot: Shot,
    pub num_trials: usize,
    pub seed: u64,
    /// RGB cameras used by indoor search.
    pub indoor_cameras: Vec<u32>,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        Self {
            mode: EvalMode::default(),
            shot: Shot::default(),
            num_trials: 10,
            seed: 0,
            indoor_cameras: SYSU_INDOOR_RGB_CAMERAS.to_vec(),
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.num_trials == 0 {
            return Err(Error::Config("num_trials must be positive".into()));
        }
        Ok(())
    }

    fn trial_rng(&self, trial: usize) -> ChaCha8Rng {
        let mixed = self
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((trial as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
        ChaCha8Rng::seed_from_u64(mixed)
    }
}

/// Indices of the query records and of the records eligible for the
/// gallery. Training records never take part.
pub fn query_and_candidates(records: &[ImageRecord], protocol: &EvalProtocol) -> (Vec<usize>, Vec<usize>) {
    let qm = protocol.mode.query_modality();
    let mut query = Vec::new();
    let mut gallery = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if r.split == Split::Train {
            continue;
        }
        if r.modality == qm {
            query.push(i);
        } else if protocol.mode != EvalMode::SysuIndoor || protocol.indoor_cameras.contains(&r.camera) {
            gallery.push(i);
        }
    }
    (query, gallery)
}

/// Gallery record indices for `trial`, sorted ascending. Per-camera modes
/// draw `shot.per_cell()` images (or all, if fewer) from every (identity,
/// camera) cell; RegDB modes use every candidate.
pub fn sample_gallery(records: &[ImageRecord], protocol: &EvalProtocol, trial: usize) -> Result<Vec<usize>> {
    let (_, candidates) = query_and_candidates(records, protocol);
    if candidates.is_empty() {
        return Err(Error::Eval(format!("no gallery candidates for {}", protocol.mode)));
    }
    if !protocol.mode.samples_gallery() {
        return Ok(candidates);
    }
    let mut cells: BTreeMap<(usize, u32), Vec<usize>> = BTreeMap::new();
    for &i in &candidates {
        cells.entry((records[i].identity, records[i].camera)).or_default().push(i);
    }
    log_missing_cells(&cells);
    let mut rng = protocol.trial_rng(trial);
    let mut out = Vec::new();
    for members in cells.values() {
        let take = protocol.shot.per_cell().min(members.len());
        out.extend(sample(&mut rng, members.len(), take).into_iter().map(|j| members[j]));
    }
    out.sort_unstable();
    Ok(out)
}

fn log_missing_cells(cells: &BTreeMap<(usize, u32), Vec<usize>>) {
    let cameras: std::collections::BTreeSet<u32> = cells.keys().map(|k| k.1).collect();
    let identities: std::collections::BTreeSet<usize> = cells.keys().map(|k| k.0).collect();
    let missing = identities.len() * cameras.len() - cells.len();
    if missing > 0 {
        log::info!("gallery: {missing} (identity, camera) cells have no image and are skipped");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn rec(identity: usize, modality: Modality, camera: u32, split: Split) -> ImageRecord {
        ImageRecord {
            image: RgbImage::new(1, 1),
            identity,
            modality,
            camera,
            split,
            rel_path: None,
        }
    }

    fn fixture(ids: usize, per_cell: usize) -> Vec<ImageRecord> {
        let mut v = Vec::new();
        for id in 0..ids {
            for cam in [1, 2, 4, 5] {
                for _ in 0..per_cell {
                    v.push(rec(id, Modality::Rgb, cam, Split::Gallery));
                }
            }
            v.push(rec(id, Modality::Ir, 3, Split::Query));
        }
        v
    }

    #[test]
    fn single_shot_all_search_count() {
        let records = fixture(96, 12);
        let p = EvalProtocol {
            mode: EvalMode::SysuAll,
            ..Default::default()
        };
        assert_eq!(sample_gallery(&records, &p, 0).unwrap().len(), 384);
        let multi = EvalProtocol {
            shot: Shot::Multi,
            ..p.clone()
        };
        assert_eq!(sample_gallery(&records, &multi, 0).unwrap().len(), 3840);
    }

    #[test]
    fn indoor_uses_indoor_cameras() {
        let records = fixture(5, 2);
        let p = EvalProtocol {
            mode: EvalMode::SysuIndoor,
            ..Default::default()
        };
        let g = sample_gallery(&records, &p, 3).unwrap();
        assert_eq!(g.len(), 10);
        assert!(g.iter().all(|&i| [1, 2].contains(&records[i].camera)));
    }

    #[test]
    fn trials_are_deterministic_and_differ() {
        let records = fixture(20, 5);
        let p = EvalProtocol::default();
        assert_eq!(sample_gallery(&records, &p, 1).unwrap(), sample_gallery(&records, &p, 1).unwrap());
        assert_ne!(sample_gallery(&records, &p, 1).unwrap(), sample_gallery(&records, &p, 2).unwrap());
    }

    #[test]
    fn regdb_directions_swap_roles() {
        let records = fixture(3, 1);
        let v2t = EvalProtocol {
            mode: EvalMode::RegdbV2t,
            ..Default::default()
        };
        let (q, g) = query_and_candidates(&records, &v2t);
        assert!(q.iter().all(|&i| records[i].modality == Modality::Rgb));
        assert!(g.iter().all(|&i| records[i].modality == Modality::Ir));
    }
}
