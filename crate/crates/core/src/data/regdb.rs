//! Loader for the RegDB index-file layout:
//!
//! ```text
//! root/
//!   idx/
//!     train_visible_{t}.txt   lines: "<relative image path> <label>"
//!     train_thermal_{t}.txt
//!     test_visible_{t}.txt
//!     test_thermal_{t}.txt
//!   Visible/...  Thermal/...
//! ```
//!
//! `t` is the trial index in `1..=10`. Visible images are tagged camera 1 and
//! thermal images camera 2.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use super::sysu::read_image;
use super::{remap_train_identities, ImageRecord, Modality, Split};
use crate::{Error, Result};

pub const REGDB_TRIALS: std::ops::RangeInclusive<usize> = 1..=10;
const IMAGES_PER_MODALITY: usize = 10;

fn read_index(path: &Path) -> Result<Vec<(String, usize)>> {
    if !path.is_file() {
        return Err(Error::MissingSplit(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(rel), Some(label), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Layout(format!(
                "{}:{}: expected `<path> <label>`",
                path.display(),
                lineno + 1
            )));
        };
        let label = label.parse().map_err(|_| {
            Error::Layout(format!("{}:{}: bad label `{label}`", path.display(), lineno + 1))
        })?;
        out.push((rel.to_string(), label));
    }
    Ok(out)
}

pub fn load_regdb_layout(root: &Path, trial_index: usize, strict: bool) -> Result<Vec<ImageRecord>> {
    if !REGDB_TRIALS.contains(&trial_index) {
        return Err(Error::Config(format!(
            "RegDB trial index {trial_index} outside {}..={}",
            REGDB_TRIALS.start(),
            REGDB_TRIALS.end()
        )));
    }
    let idx = root.join("idx");
    let lists = [
        ("train", Modality::Rgb, Split::Train),
        ("train", Modality::Ir, Split::Train),
        ("test", Modality::Rgb, Split::Gallery),
        ("test", Modality::Ir, Split::Query),
    ];
    let mut records = Vec::new();
    let mut train_ids = BTreeSet::new();
    let mut test_ids = BTreeSet::new();
    let mut per_id: BTreeMap<(usize, Modality), usize> = BTreeMap::new();
    for (phase, modality, split) in lists {
        let name = match modality {
            Modality::Rgb => "visible",
            Modality::Ir => "thermal",
        };
        let file = idx.join(format!("{phase}_{name}_{trial_index}.txt"));
        for (rel, label) in read_index(&file)? {
            let path = root.join(&rel);
            let Some(image) = read_image(&path, modality, strict)? else {
                continue;
            };
            if split == Split::Train {
                train_ids.insert(label);
            } else {
                test_ids.insert(label);
            }
            *per_id.entry((label, modality)).or_default() += 1;
            records.push(ImageRecord {
                image,
                identity: label,
                modality,
                camera: if modality == Modality::Rgb { 1 } else { 2 },
                split,
                rel_path: Some(rel),
            });
        }
    }
    if let Some(id) = train_ids.intersection(&test_ids).next() {
        return Err(Error::Layout(format!("identity {id} is listed in both train and test")));
    }
    if train_ids.len() != test_ids.len() {
        return Err(Error::Layout(format!(
            "RegDB identity split is unbalanced: {} train vs {} test",
            train_ids.len(),
            test_ids.len()
        )));
    }
    for ((id, modality), n) in &per_id {
        if *n != IMAGES_PER_MODALITY {
            log::warn!("RegDB identity {id} has {n} {modality} images, expected {IMAGES_PER_MODALITY}");
        }
    }
    remap_train_identities(&mut records);
    Ok(records)
}
