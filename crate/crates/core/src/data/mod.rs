//! Dataset records, directory loaders, the synthetic paired-modality
//! generator, identity-balanced batch sampling and train-time augmentation.

mod augment;
mod manifest;
mod regdb;
mod sampler;
mod synthetic;
mod sysu;

pub use augment::{AugmentConfig, Augmenter, Normalization};
pub use manifest::{load_manifest, manifest_digest, pixel_digest, write_manifest, MANIFEST_FILE};
pub use regdb::{load_regdb_layout, REGDB_TRIALS};
pub use sampler::{sample_batch, BatchItem, BatchSpec, IdentityIndex, ImageBatch, ShortfallPolicy};
pub use synthetic::{generate_synthetic, SyntheticDatasetConfig};
pub use sysu::{load_sysu_layout, SysuSplitConfig, SYSU_INDOOR_RGB_CAMERAS, SYSU_RGB_CAMERAS};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Ir,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Rgb, Modality::Ir];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Ir => "ir",
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Rgb => Modality::Ir,
            Modality::Ir => Modality::Rgb,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb" | "visible" => Ok(Modality::Rgb),
            "ir" | "thermal" | "infrared" => Ok(Modality::Ir),
            other => Err(Error::Config(format!("unknown modality `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "gallery" => Ok(Split::Gallery),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// One labelled image. IR images are stored with their single channel
/// replicated into all three channels.
#[derive(Debug, Clone)]
pub struct ImageRecord {
    pub image: RgbImage,
    pub identity: usize,
    pub modality: Modality,
    pub camera: u32,
    pub split: Split,
    /// Path relative to the dataset root, when the record came from disk.
    pub rel_path: Option<String>,
}

impl ImageRecord {
    /// True when all three channels are identical at every pixel.
    pub fn is_channel_replicated(&self) -> bool {
        self.image.pixels().all(|p| p[0] == p[1] && p[1] == p[2])
    }
}

/// Replicates a grayscale raster into three identical channels.
pub fn replicate_gray(gray: &image::GrayImage) -> RgbImage {
    RgbImage::from_fn(gray.width(), gray.height(), |x, y| {
        let v = gray.get_pixel(x, y)[0];
        image::Rgb([v, v, v])
    })
}

/// Collapses an image to its first channel and replicates it, which is how an
/// infrared capture is presented to the network.
pub fn to_ir_replicated(img: &RgbImage) -> RgbImage {
    let gray = image::GrayImage::from_fn(img.width(), img.height(), |x, y| {
        image::Luma([img.get_pixel(x, y)[0]])
    });
    replicate_gray(&gray)
}

/// Remaps the identity labels of the training records onto `0..N` in
/// ascending order of the original label. Returns the mapping used.
pub fn remap_train_identities(records: &mut [ImageRecord]) -> BTreeMap<usize, usize> {
    let mut map = BTreeMap::new();
    for r in records.iter().filter(|r| r.split == Split::Train) {
        map.entry(r.identity).or_insert(0);
    }
    for (new, v) in map.values_mut().enumerate() {
        *v = new;
    }
    for r in records.iter_mut().filter(|r| r.split == Split::Train) {
        r.identity = map[&r.identity];
    }
    map
}

/// Number of distinct identities among `records`.
pub fn count_identities<'a>(records: impl IntoIterator<Item = &'a ImageRecord>) -> usize {
    let mut ids: Vec<usize> = records.into_iter().map(|r| r.identity).collect();
    ids.sort_unstable();
    ids.dedup();
    ids.len()
}
