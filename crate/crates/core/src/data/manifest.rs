//! On-disk export of a record list.
//!
//! The manifest is a tab-separated text file:
//!
//! ```text
//! # msoreid-manifest v1
//! identity	modality	camera	split	path	pixels
//! 0	rgb	1	train	images/0000_rgb_c1_00000.png	9f86d0...
//! ```
//!
//! Paths are relative to the manifest's directory; images are PNG.
//! `pixels` is the hex SHA-256 of the width and height (little-endian u32)
//! followed by the raw RGB bytes, checked again on load. The manifest text
//! therefore pins the image content as well as the labels.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::RgbImage;
use sha2::{Digest, Sha256};

use super::sysu::read_image;
use super::{ImageRecord, Modality, Split};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.tsv";
const MAGIC: &str = "# msoreid-manifest v1";
const HEADER: &str = "identity\tmodality\tcamera\tsplit\tpath\tpixels";

/// Writes the images and `manifest.tsv` under `dir`, creating it if needed.
/// Returns the manifest text.
pub fn write_manifest(dir: &Path, records: &[ImageRecord]) -> Result<String> {
    let images = dir.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut text = format!("{MAGIC}\n{HEADER}\n");
    for (i, r) in records.iter().enumerate() {
        let rel = format!("images/{:04}_{}_c{}_{i:05}.png", r.identity, r.modality, r.camera);
        let path = dir.join(&rel);
        r.image.save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            message: e.to_string(),
        })?;
        writeln!(
            text,
            "{}\t{}\t{}\t{}\t{rel}\t{}",
            r.identity,
            r.modality,
            r.camera,
            r.split.as_str(),
            pixel_digest(&r.image)
        )
        .expect("writing to a String cannot fail");
    }
    let manifest = dir.join(MANIFEST_FILE);
    fs::write(&manifest, &text).map_err(|e| Error::io(&manifest, e))?;
    Ok(text)
}

pub fn load_manifest(dir: &Path) -> Result<Vec<ImageRecord>> {
    let manifest = dir.join(MANIFEST_FILE);
    if !manifest.is_file() {
        return Err(Error::MissingSplit(manifest));
    }
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) || lines.next() != Some(HEADER) {
        return Err(Error::Layout(format!("{} is not a v1 manifest", manifest.display())));
    }
    let mut records = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Layout(format!("{}:{}: {what}", manifest.display(), n + 3));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(bad("expected 6 tab-separated columns"));
        }
        let identity = cols[0].parse().map_err(|_| bad("bad identity"))?;
        let modality: Modality = cols[1].parse()?;
        let camera = cols[2].parse().map_err(|_| bad("bad camera"))?;
        let split: Split = cols[3].parse()?;
        let image = read_image(&dir.join(cols[4]), modality, true)?.expect("strict read");
        if pixel_digest(&image) != cols[5] {
            return Err(bad(&format!("{} does not match its recorded pixel digest", cols[4])));
        }
        records.push(ImageRecord {
            image,
            identity,
            modality,
            camera,
            split,
            rel_path: Some(cols[4].to_string()),
        });
    }
    Ok(records)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 over an image's dimensions and RGB bytes.
pub fn pixel_digest(img: &RgbImage) -> String {
    let mut h = Sha256::new();
    h.update(img.width().to_le_bytes());
    h.update(img.height().to_le_bytes());
    h.update(img.as_raw());
    hex(&h.finalize())
}

/// Hex SHA-256 of a manifest's text, for comparing exports.
pub fn manifest_digest(text: &str) -> String {
    hex(&Sha256::digest(text.as_bytes()))
}
