//! Loader for the SYSU-MM01 directory layout:
//!
//! ```text
//! root/
//!   cam1/ .. cam6/        one folder per camera
//!     0001/ 0002/ ...     one folder per identity (zero padded)
//!       0001.jpg ...
//!   exp/
//!     train_id.txt        comma separated identity ids
//!     val_id.txt
//!     test_id.txt
//! ```
//!
//! Cameras 1, 2, 4, 5 are visible-light; cameras 3 and 6 are near-infrared.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::{remap_train_identities, replicate_gray, ImageRecord, Modality, Split};
use crate::{Error, Result};

pub const SYSU_RGB_CAMERAS: [u32; 4] = [1, 2, 4, 5];
pub const SYSU_IR_CAMERAS: [u32; 2] = [3, 6];
/// Indoor visible cameras, used by the indoor-search gallery.
pub const SYSU_INDOOR_RGB_CAMERAS: [u32; 2] = [1, 2];

#[derive(Debug, Clone)]
pub struct SysuSplitConfig {
    /// Id-list files (under `exp/`) whose identities form the training split.
    pub train_lists: Vec<String>,
    /// Id-list files whose identities form the test split.
    pub test_lists: Vec<String>,
    /// Fail on the first unreadable image instead of skipping it.
    pub strict: bool,
}

impl Default for SysuSplitConfig {
    fn default() -> Self {
        Self {
            train_lists: vec!["train_id.txt".into(), "val_id.txt".into()],
            test_lists: vec!["test_id.txt".into()],
            strict: true,
        }
    }
}

/// Maps a SYSU-MM01 camera id onto its sensing modality.
pub fn sysu_camera_modality(camera: u32) -> Result<Modality> {
    if SYSU_RGB_CAMERAS.contains(&camera) {
        Ok(Modality::Rgb)
    } else if SYSU_IR_CAMERAS.contains(&camera) {
        Ok(Modality::Ir)
    } else {
        Err(Error::Layout(format!("camera {camera} is not a SYSU-MM01 camera")))
    }
}

fn read_id_list(path: &Path) -> Result<Vec<usize>> {
    if !path.is_file() {
        return Err(Error::MissingSplit(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::Layout(format!("bad identity `{t}` in {}", path.display())))
        })
        .collect()
}

pub(crate) fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Decodes an image from disk; IR images are reduced to luminance and
/// replicated so all three channels agree.
pub(crate) fn read_image(
    path: &Path,
    modality: Modality,
    strict: bool,
) -> Result<Option<image::RgbImage>> {
    match image::open(path) {
        Ok(img) => Ok(Some(match modality {
            Modality::Rgb => img.to_rgb8(),
            Modality::Ir => replicate_gray(&img.to_luma8()),
        })),
        Err(e) if strict => Err(Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        }),
        Err(e) => {
            log::warn!("skipping unreadable image {}: {e}", path.display());
            Ok(None)
        }
    }
}

pub fn load_sysu_layout(root: &Path, split: &SysuSplitConfig) -> Result<Vec<ImageRecord>> {
    let exp = root.join("exp");
    let mut train_ids = BTreeSet::new();
    for name in &split.train_lists {
        train_ids.extend(read_id_list(&exp.join(name))?);
    }
    let mut test_ids = BTreeSet::new();
    for name in &split.test_lists {
        test_ids.extend(read_id_list(&exp.join(name))?);
    }
    if let Some(id) = train_ids.intersection(&test_ids).next() {
        return Err(Error::Layout(format!("identity {id} is listed in both train and test")));
    }

    let mut records = Vec::new();
    for camera in 1..=6u32 {
        let modality = sysu_camera_modality(camera)?;
        let cam_dir = root.join(format!("cam{camera}"));
        if !cam_dir.is_dir() {
            log::warn!("camera folder {} not found", cam_dir.display());
            continue;
        }
        for &id in train_ids.iter().chain(test_ids.iter()) {
            let id_dir = cam_dir.join(format!("{id:04}"));
            if !id_dir.is_dir() {
                continue;
            }
            let split_kind = if train_ids.contains(&id) {
                Split::Train
            } else if modality == Modality::Ir {
                Split::Query
            } else {
                Split::Gallery
            };
            for file in sorted_files(&id_dir)? {
                let Some(image) = read_image(&file, modality, split.strict)? else {
                    continue;
                };
                let rel = file
                    .strip_prefix(root)
                    .unwrap_or(&file)
                    .to_string_lossy()
                    .into_owned();
                records.push(ImageRecord {
                    image,
                    identity: id,
                    modality,
                    camera,
                    split: split_kind,
                    rel_path: Some(rel),
                });
            }
        }
    }
    remap_train_identities(&mut records);
    Ok(records)
}
